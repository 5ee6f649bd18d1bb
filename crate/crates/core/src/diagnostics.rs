//! Empirical checks of the landscape around the ground truth: critical points,
//! quadratic growth, the residual error bound, sampling noise and PCA quality.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifold::{self, SignVector, StiefelPoint};
use crate::model::{self, NoiseGroups, SignalModel};
use crate::numerics::{self, DenseMatrix, RngStream};
use crate::problem::{self, GpmObjective, PopulationProblem, ResidualSet};
use crate::solver::{self, IterationRecord};

/// Ratios with `d_F` below this are excluded from the growth estimate.
pub const MIN_RATIO_DIST: f64 = 1e-6;
/// Ratios with `ρ_α` below this are excluded from the error-bound estimate.
pub const MIN_RATIO_RESIDUAL: f64 = 1e-12;

const STREAM_COMPLETION: u16 = 1;
const STREAM_NEAR: u16 = 2;
const STREAM_GLOBAL: u16 = 3;

/// `Q̄ = [Q, Q_⊥]`, an orthogonal completion of the ground truth, built once.
#[derive(Debug, Clone)]
pub struct CriticalPoints<'a> {
    population: &'a PopulationProblem,
    q_bar: DenseMatrix,
}

impl<'a> CriticalPoints<'a> {
    pub fn new(population: &'a PopulationProblem, rng: &RngStream) -> Result<Self> {
        let q = population.q_truth().matrix();
        let (d, k) = (q.nrows(), q.ncols());
        let g = numerics::random_gaussian(d, d - k, &rng.substream(STREAM_COMPLETION, 0))?;
        // two rounds of projection keep Q_⊥ orthogonal to Q to working precision
        let mut perp = &g - q * (q.transpose() * &g);
        perp -= q * (q.transpose() * &perp);
        let perp = perp.qr().q();
        let perp = &perp - q * (q.transpose() * &perp);
        let perp = perp.qr().q();
        let mut q_bar = DenseMatrix::zeros(d, d);
        q_bar.columns_mut(0, k).copy_from(q);
        q_bar.columns_mut(k, d - k).copy_from(&perp);
        let dev = numerics::orthonormality_deviation(&q_bar);
        if dev > 1e-10 {
            return Err(Error::NotOrthonormal { deviation: dev });
        }
        Ok(Self { population, q_bar })
    }

    pub fn completion(&self) -> &DenseMatrix {
        &self.q_bar
    }

    /// `X = Q̄ Π diag(q)`: columns `selection` (zero-based) of `Q̄`, signed by `q`.
    pub fn generate(&self, selection: &[usize], q: &SignVector) -> Result<StiefelPoint> {
        let d = self.q_bar.nrows();
        let k = self.population.k();
        if selection.len() != k || q.len() != k {
            return Err(Error::Dimension(format!(
                "need {k} column indices and signs, got {} and {}",
                selection.len(),
                q.len()
            )));
        }
        for (i, &c) in selection.iter().enumerate() {
            if c >= d {
                return Err(Error::InvalidParameter(format!(
                    "column index {c} out of range for d = {d}"
                )));
            }
            if selection[..i].contains(&c) {
                return Err(Error::InvalidParameter(format!("column index {c} repeated")));
            }
        }
        let mut x = DenseMatrix::zeros(d, k);
        for (j, (&c, s)) in selection.iter().zip(q.iter()).enumerate() {
            x.set_column(j, &(self.q_bar.column(c) * f64::from(s)));
        }
        StiefelPoint::new(x)
    }
}

/// Convenience wrapper building a fresh completion for a single point.
pub fn generate_critical_point(
    population: &PopulationProblem,
    selection: &[usize],
    q: &SignVector,
    rng: &RngStream,
) -> Result<StiefelPoint> {
    CriticalPoints::new(population, rng)?.generate(selection, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleRegion {
    Near,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioSample {
    pub region: SampleRegion,
    pub dist: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioEstimate {
    pub value: f64,
    pub samples: Vec<RatioSample>,
}

/// `proj(Q + t·radius·G/‖G‖_F)` with `t ~ U(0, 1]`, kept when `d_F ≤ radius`.
///
/// Draws candidates by index so the accepted set does not depend on thread count.
pub fn sample_near_points(
    q: &StiefelPoint,
    n_samples: usize,
    radius: f64,
    rng: &RngStream,
) -> Result<Vec<StiefelPoint>> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sampling radius must be positive, got {radius}"
        )));
    }
    let (d, k) = (q.d(), q.k());
    let mut accepted = Vec::with_capacity(n_samples);
    let mut next = 0u64;
    let max_attempts = 50 * n_samples as u64 + 100;
    while accepted.len() < n_samples && next < max_attempts {
        let batch = (n_samples - accepted.len()).max(16) as u64;
        let candidates: Vec<Option<StiefelPoint>> = (next..next + batch)
            .into_par_iter()
            .map(|i| -> Result<Option<StiefelPoint>> {
                let mut gen = rng.substream(STREAM_NEAR, i).generator();
                let t = 1.0 - gen.random::<f64>();
                let g = numerics::gaussian_from(&mut gen, d, k);
                let m = q.matrix() + g.scale(t * radius / g.norm());
                let x = manifold::project_stiefel(&m)?.point;
                Ok((manifold::dist_f(&x, q) <= radius).then_some(x))
            })
            .collect::<Result<_>>()?;
        next += batch;
        accepted.extend(candidates.into_iter().flatten().take(n_samples - accepted.len()));
    }
    Ok(accepted)
}

/// `η̄̂ = min (g(Q) − g(X)) / d_F²(X, Q)` over near and global samples.
pub fn estimate_quadratic_growth(
    population: &PopulationProblem,
    n_samples: usize,
    radius: f64,
    rng: &RngStream,
) -> Result<RatioEstimate> {
    let q = population.q_truth();
    let g_opt = population.optimal_value();
    let near = sample_near_points(q, n_samples, radius, rng)?;
    let global: Vec<StiefelPoint> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| manifold::random_stiefel(q.d(), q.k(), &rng.substream(STREAM_GLOBAL, i)))
        .collect::<Result<_>>()?;
    let samples: Vec<RatioSample> = near
        .iter()
        .map(|x| (SampleRegion::Near, x))
        .chain(global.iter().map(|x| (SampleRegion::Global, x)))
        .filter_map(|(region, x)| {
            let dist = manifold::dist_f(x, q);
            (dist >= MIN_RATIO_DIST).then(|| RatioSample {
                region,
                dist,
                ratio: (g_opt - problem::eval_g(population, x)) / (dist * dist),
            })
        })
        .collect();
    let value = samples.iter().map(|s| s.ratio).fold(f64::INFINITY, f64::min);
    Ok(RatioEstimate { value, samples })
}

/// `η̂₁ = max d_F(X, Q) / ρ_α(X)` over near samples.
pub fn estimate_error_bound_constant(
    population: &PopulationProblem,
    alpha: f64,
    n_samples: usize,
    radius: f64,
    rng: &RngStream,
) -> Result<RatioEstimate> {
    let q = population.q_truth();
    let near = sample_near_points(q, n_samples, radius, rng)?;
    let pairs: Vec<(f64, f64)> = near
        .par_iter()
        .map(|x| Ok((manifold::dist_f(x, q), solver::rho_alpha(population, x, alpha)?)))
        .collect::<Result<_>>()?;
    let samples: Vec<RatioSample> = pairs
        .into_iter()
        .filter(|(_, rho)| *rho >= MIN_RATIO_RESIDUAL)
        .map(|(dist, rho)| RatioSample {
            region: SampleRegion::Near,
            dist,
            ratio: dist / rho,
        })
        .collect();
    let value = samples.iter().map(|s| s.ratio).fold(0.0, f64::max);
    Ok(RatioEstimate { value, samples })
}

/// `‖Δ_k‖` for each residual.
pub fn residual_norms(residuals: &ResidualSet, tol: f64) -> Result<Vec<f64>> {
    residuals
        .deltas()
        .iter()
        .map(|d| numerics::symmetric_operator_norm(d, tol))
        .collect()
}

/// `(2√K / η̄̂) · max_k ‖Δ_k‖`.
pub fn dist_bound_surrogate(max_delta_norm: f64, eta_bar_hat: f64, k: usize) -> Result<f64> {
    if !(eta_bar_hat > 0.0 && eta_bar_hat.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "growth constant must be positive, got {eta_bar_hat}"
        )));
    }
    if max_delta_norm.is_nan() || max_delta_norm < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "residual norm must be nonnegative, got {max_delta_norm}"
        )));
    }
    Ok(2.0 * (k as f64).sqrt() * max_delta_norm / eta_bar_hat)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DavisKahan {
    /// `‖C − E[C]‖`.
    pub covariance_error: f64,
    /// `min{λ_{j−1} − λ_j, λ_j − λ_{j+1}}` with `λ_0 = ∞`, `λ_{K+1} = 0`.
    pub eigengaps: Vec<f64>,
    pub per_column: Vec<f64>,
    /// Bound on `‖X⁰ − Q diag(q)‖²_F`.
    pub aggregate: f64,
    /// `d_F²(X⁰, Q)` for the PCA initialization of `C`.
    pub dist_sq: f64,
}

impl DavisKahan {
    pub fn holds(&self) -> bool {
        self.dist_sq <= self.aggregate
    }
}

pub fn davis_kahan_gaps(lambdas: &[f64]) -> Vec<f64> {
    let k = lambdas.len();
    (0..k)
        .map(|j| {
            let above = if j == 0 { f64::INFINITY } else { lambdas[j - 1] - lambdas[j] };
            let below = lambdas[j] - if j + 1 < k { lambdas[j + 1] } else { 0.0 };
            above.min(below)
        })
        .collect()
}

/// Compare the PCA initialization from `covariance` with its eigengap bound.
pub fn davis_kahan_check(
    model: &SignalModel,
    groups: &NoiseGroups,
    covariance: &DenseMatrix,
) -> Result<DavisKahan> {
    if covariance.shape() != (model.d(), model.d()) {
        return Err(Error::Dimension(format!(
            "covariance is {}×{} for d = {}",
            covariance.nrows(),
            covariance.ncols(),
            model.d()
        )));
    }
    let diff = covariance - model::expected_covariance(model, groups);
    let covariance_error = if diff.amax() == 0.0 {
        0.0
    } else {
        numerics::symmetric_operator_norm(&diff, numerics::ITERATIVE_TOL)?
    };
    let eigengaps = davis_kahan_gaps(model.lambdas());
    let per_column = eigengaps
        .iter()
        .map(|g| 2f64.powf(1.5) * covariance_error / g)
        .collect();
    let aggregate =
        8.0 * covariance_error.powi(2) * eigengaps.iter().map(|g| 1.0 / (g * g)).sum::<f64>();
    let init = solver::pca_init(covariance, model.k())?;
    let dist = manifold::dist_f(&init.point, model.q_truth());
    Ok(DavisKahan {
        covariance_error,
        eigengaps,
        per_column,
        aggregate,
        dist_sq: dist * dist,
    })
}

/// Iterations whose distance to the truth leaves the ball of `radius`.
pub fn local_region_exits(trace: &[IterationRecord], radius: f64) -> Vec<usize> {
    trace
        .iter()
        .filter(|r| r.dist.is_some_and(|d| d > radius))
        .map(|r| r.iter)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsOptions {
    pub n_samples: usize,
    pub radius: f64,
    pub alpha: f64,
    pub norm_tol: f64,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        Self {
            n_samples: 500,
            radius: 0.3,
            alpha: 0.05,
            norm_tol: numerics::ITERATIVE_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub eta_bar_hat: f64,
    pub eta1_hat: f64,
    pub delta_norms: Vec<f64>,
    pub max_delta_norm: f64,
    pub dist_bound_hat: f64,
    pub dk_lhs: f64,
    pub dk_rhs: f64,
    pub sample_count: usize,
    pub growth_samples: Vec<RatioSample>,
    pub error_bound_samples: Vec<RatioSample>,
}

pub fn build_report(
    model: &SignalModel,
    groups: &NoiseGroups,
    population: &PopulationProblem,
    residuals: &ResidualSet,
    covariance: &DenseMatrix,
    opts: &DiagnosticsOptions,
    rng: &RngStream,
) -> Result<DiagnosticsReport> {
    let growth = estimate_quadratic_growth(population, opts.n_samples, opts.radius, rng)?;
    let bound = estimate_error_bound_constant(
        population,
        opts.alpha,
        opts.n_samples,
        opts.radius,
        &rng.substream(STREAM_NEAR, u64::MAX >> 16),
    )?;
    let delta_norms = residual_norms(residuals, opts.norm_tol)?;
    let max_delta_norm = delta_norms.iter().cloned().fold(0.0, f64::max);
    let dist_bound_hat = dist_bound_surrogate(max_delta_norm, growth.value, population.k())?;
    let dk = davis_kahan_check(model, groups, covariance)?;
    Ok(DiagnosticsReport {
        eta_bar_hat: growth.value,
        eta1_hat: bound.value,
        delta_norms,
        max_delta_norm,
        dist_bound_hat,
        dk_lhs: dk.dist_sq,
        dk_rhs: dk.aggregate,
        sample_count: growth.samples.len() + bound.samples.len(),
        growth_samples: growth.samples,
        error_bound_samples: bound.samples,
    })
}

impl DiagnosticsReport {
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let mut put = |key: &str, v: f64| {
            let _ = writeln!(out, "{key}={v:.16e}");
        };
        put("eta_bar_hat", self.eta_bar_hat);
        put("eta1_hat", self.eta1_hat);
        for (k, v) in self.delta_norms.iter().enumerate() {
            put(&format!("delta_norm_{}", k + 1), *v);
        }
        put("max_delta_norm", self.max_delta_norm);
        put("dist_bound_hat", self.dist_bound_hat);
        put("dk_lhs", self.dk_lhs);
        put("dk_rhs", self.dk_rhs);
        let _ = writeln!(out, "dk_holds={}", self.dk_lhs <= self.dk_rhs);
        let _ = writeln!(out, "sample_count={}", self.sample_count);
        out
    }

    /// `kind,region,dist_f,ratio` for every sampled ratio.
    pub fn ratios_csv(&self) -> String {
        let mut out = String::from("kind,region,dist_f,ratio\n");
        let rows = self
            .growth_samples
            .iter()
            .map(|s| ("growth", s))
            .chain(self.error_bound_samples.iter().map(|s| ("error_bound", s)));
        for (kind, s) in rows {
            let region = match s.region {
                SampleRegion::Near => "near",
                SampleRegion::Global => "global",
            };
            let _ = writeln!(out, "{kind},{region},{:.16e},{:.16e}", s.dist, s.ratio);
        }
        out
    }
}
