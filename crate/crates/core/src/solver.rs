//! The generalized power method: `X⁺ = P_St(αX + [M_1 x_1, …, M_K x_K])`.

use std::fmt;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::manifold::{self, Projection, StiefelPoint};
use crate::numerics::{self, DenseMatrix, ThinSvd};
use crate::problem::{self, GpmObjective, PopulationProblem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub alpha: f64,
    pub max_iters: usize,
    pub tol_step: f64,
    pub tol_residual: f64,
    /// Raise α to the objective's PSD shift so every step is an ascent step.
    pub ascent_safeguard: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            max_iters: 5000,
            tol_step: 1e-12,
            tol_residual: 1e-10,
            ascent_safeguard: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be finite and ≥ 0, got {}",
                self.alpha
            )));
        }
        for (name, v) in [("tol_step", self.tol_step), ("tol_residual", self.tol_residual)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn effective_alpha<P: GpmObjective + ?Sized>(&self, obj: &P) -> f64 {
        if self.ascent_safeguard {
            self.alpha.max(obj.psd_shift())
        } else {
            self.alpha
        }
    }
}

/// Metrics of one iterate `Xᵗ`; `step_norm` is `‖Xᵗ⁺¹ − Xᵗ‖_F`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub f: f64,
    pub g: Option<f64>,
    pub dist: Option<f64>,
    pub step_norm: f64,
    pub rho_alpha: f64,
    pub fixed_point_gap: f64,
    /// `‖A_α(Xᵗ)‖`, the largest singular value of the mapped iterate.
    pub map_norm: f64,
    /// The projection producing `Xᵗ⁺¹` was not unique.
    pub nonunique: bool,
    /// Time since the solve started.
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ResidualConverged,
    StepConverged,
    MaxIters,
    ProjectionNonunique,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::ResidualConverged => "residual-converged",
            Termination::StepConverged => "step-converged",
            Termination::MaxIters => "max-iters",
            Termination::ProjectionNonunique => "projection-nonunique",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x_final: StiefelPoint,
    pub trace: Vec<IterationRecord>,
    pub termination: Termination,
    pub alpha: f64,
}

impl SolveResult {
    pub fn iterations(&self) -> usize {
        self.trace.last().map_or(0, |r| r.iter)
    }
}

/// Everything GPM learns from one SVD of `A_α(X)`.
struct StepData {
    map: DenseMatrix,
    svd: ThinSvd,
}

impl StepData {
    fn new<P: GpmObjective + ?Sized>(obj: &P, x: &StiefelPoint, alpha: f64) -> Result<Self> {
        let map = problem::gpm_map(obj, x, alpha);
        let svd = numerics::thin_svd(&map)?;
        Ok(Self { map, svd })
    }

    fn rho(&self, x: &StiefelPoint) -> f64 {
        let mut vs = self.svd.v.clone();
        for (j, s) in self.svd.sigma.iter().enumerate() {
            vs.column_mut(j).scale_mut(*s);
        }
        let sym = vs * self.svd.v.transpose();
        (x.matrix() * sym - &self.map).norm()
    }

    fn gap(&self, x: &StiefelPoint) -> f64 {
        self.svd.nuclear_norm() - x.matrix().dot(&self.map)
    }

    fn project(&self) -> Result<Projection> {
        let sigma_min = self.svd.sigma_min();
        Ok(Projection {
            point: StiefelPoint::new(self.svd.polar())?,
            nonunique: sigma_min <= manifold::NONUNIQUE_SIGMA,
            sigma_min,
        })
    }
}

/// One GPM step; the returned projection carries the non-uniqueness flag.
pub fn gpm_step<P: GpmObjective + ?Sized>(
    obj: &P,
    x: &StiefelPoint,
    alpha: f64,
) -> Result<Projection> {
    StepData::new(obj, x, alpha)?.project()
}

/// `ρ_α(X) = ‖X V Σ Vᵀ − A_α(X)‖_F`.
pub fn rho_alpha<P: GpmObjective + ?Sized>(obj: &P, x: &StiefelPoint, alpha: f64) -> Result<f64> {
    Ok(StepData::new(obj, x, alpha)?.rho(x))
}

/// `‖A_α(X)‖_* − tr(XᵀA_α(X))`, nonnegative up to rounding.
pub fn fixed_point_gap<P: GpmObjective + ?Sized>(
    obj: &P,
    x: &StiefelPoint,
    alpha: f64,
) -> Result<f64> {
    Ok(StepData::new(obj, x, alpha)?.gap(x))
}

/// Run GPM from `init`. With `analysis` given, `g` and the distance to its
/// ground truth are recorded at every iterate.
pub fn gpm_solve<P: GpmObjective + ?Sized>(
    obj: &P,
    init: &StiefelPoint,
    config: &SolverConfig,
    analysis: Option<&PopulationProblem>,
) -> Result<SolveResult> {
    config.validate()?;
    if init.d() != obj.d() || init.k() != obj.k() {
        return Err(Error::Dimension(format!(
            "initial point is {}×{} but the problem is {}×{}",
            init.d(),
            init.k(),
            obj.d(),
            obj.k()
        )));
    }
    if let Some(pop) = analysis {
        if pop.d() != obj.d() || pop.k() != obj.k() {
            return Err(Error::Dimension("analysis problem shape differs".into()));
        }
    }
    let alpha = config.effective_alpha(obj);
    let start = Instant::now();
    let mut trace = Vec::new();
    let mut x = init.clone();
    for t in 0..=config.max_iters {
        let step = StepData::new(obj, &x, alpha)?;
        let next = step.project()?;
        let step_norm = (next.point.matrix() - x.matrix()).norm();
        let rho = step.rho(&x);
        let record = IterationRecord {
            iter: t,
            f: x.matrix().dot(&(&step.map - x.matrix() * alpha)),
            g: analysis.map(|p| problem::eval_g(p, &x)),
            dist: analysis.map(|p| manifold::dist_f(&x, p.q_truth())),
            step_norm,
            rho_alpha: rho,
            fixed_point_gap: step.gap(&x),
            map_norm: step.svd.sigma_max(),
            nonunique: next.nonunique,
            wall_time: start.elapsed(),
        };
        trace.push(record);
        let termination = if rho <= config.tol_residual {
            Some((Termination::ResidualConverged, x.clone()))
        } else if step_norm <= config.tol_step {
            Some((Termination::StepConverged, next.point.clone()))
        } else if t == config.max_iters {
            Some((Termination::MaxIters, x.clone()))
        } else {
            None
        };
        if let Some((mut reason, x_final)) = termination {
            if next.nonunique && reason != Termination::ResidualConverged {
                reason = Termination::ProjectionNonunique;
            }
            return Ok(SolveResult {
                x_final,
                trace,
                termination: reason,
                alpha,
            });
        }
        x = next.point;
    }
    unreachable!("loop returns at t == max_iters")
}

#[derive(Debug, Clone)]
pub struct PcaInit {
    pub point: StiefelPoint,
    /// `μ_K − μ_{K+1}` of the covariance.
    pub eigengap: f64,
    /// The eigengap is ≤ 1e-12, so the leading subspace is not unique.
    pub degenerate: bool,
}

pub const DEGENERATE_EIGENGAP: f64 = 1e-12;

/// Top-K eigenvectors of a covariance matrix.
pub fn pca_init(covariance: &DenseMatrix, k: usize) -> Result<PcaInit> {
    let d = covariance.nrows();
    if k == 0 || k >= d {
        return Err(Error::Dimension(format!(
            "PCA initialization needs 1 ≤ K < d, got K = {k}, d = {d}"
        )));
    }
    let top = numerics::sym_eig_topk(covariance, k + 1)?;
    let eigengap = top.values[k - 1] - top.values[k];
    let vectors = top.vectors.columns(0, k).into_owned();
    Ok(PcaInit {
        point: StiefelPoint::new(vectors)?,
        eigengap,
        degenerate: eigengap <= DEGENERATE_EIGENGAP,
    })
}

pub const TRACE_HEADER: &str = "iter,f,g,dist_f,step_norm,rho_alpha,fixed_point_gap,wall_time_ms";

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

/// Trace as CSV, 17 significant digits per value; missing analysis fields are empty.
pub fn trace_to_csv(trace: &[IterationRecord]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in trace {
        out.push_str(&format!(
            "{},{:.16e},{},{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.iter,
            r.f,
            opt_field(r.g),
            opt_field(r.dist),
            r.step_norm,
            r.rho_alpha,
            r.fixed_point_gap,
            r.wall_time.as_secs_f64() * 1e3,
        ));
    }
    out
}
