//! End-to-end runs: sample, build, solve and summarize, all driven by one seed.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;

use crate::diagnostics::{self, DiagnosticsOptions, DiagnosticsReport};
use crate::error::{Error, Result};
use crate::io::{self, DatasetBundle};
use crate::manifold::{self, StiefelPoint};
use crate::model::{self, NoiseGroups, NoiseKind, SignalModel};
use crate::numerics::{DenseMatrix, RngStream};
use crate::problem::{self, GpmObjective, HppcaProblem, PopulationProblem};
use crate::solver::{self, IterationRecord, SolveResult, SolverConfig};

const STREAM_TRUTH: u16 = 10;
const STREAM_DATA: u16 = 11;
const STREAM_INIT: u16 = 12;
const STREAM_DIAG: u16 = 13;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InitKind {
    Pca,
    Random,
    File(PathBuf),
}

impl FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(InitKind::Pca),
            "random" => Ok(InitKind::Random),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(InitKind::File(PathBuf::from(p))),
                _ => Err(Error::InvalidParameter(format!(
                    "init must be pca, random or file:PATH, got {s:?}"
                ))),
            },
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitKind::Pca => f.write_str("pca"),
            InitKind::Random => f.write_str("random"),
            InitKind::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    Noise,
    Heterogeneity,
}

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(Sweep::Noise),
            "heterogeneity" => Ok(Sweep::Heterogeneity),
            _ => Err(Error::InvalidParameter(format!(
                "sweep must be noise or heterogeneity, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sweep::Noise => "noise",
            Sweep::Heterogeneity => "heterogeneity",
        })
    }
}

/// Subspace error used when reporting estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMetric {
    DistF,
    SinTheta,
}

impl FromStr for ErrorMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dist_f" => Ok(ErrorMetric::DistF),
            "sin_theta" => Ok(ErrorMetric::SinTheta),
            _ => Err(Error::InvalidParameter(format!(
                "metric must be dist_f or sin_theta, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for ErrorMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorMetric::DistF => "dist_f",
            ErrorMetric::SinTheta => "sin_theta",
        })
    }
}

impl ErrorMetric {
    pub fn eval(self, x: &StiefelPoint, q: &StiefelPoint) -> f64 {
        match self {
            ErrorMetric::DistF => manifold::dist_f(x, q),
            ErrorMetric::SinTheta => manifold::sin_theta_distance(x, q),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub d: usize,
    pub k: usize,
    pub sizes: Vec<usize>,
    pub variances: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub solver: SolverConfig,
    pub seed: u64,
    pub trials: usize,
    pub noise: NoiseKind,
    pub init: InitKind,
    /// Solve the noiseless population problem instead of the sampled one.
    pub population: bool,
    pub metric: ErrorMetric,
}

impl Default for ExperimentSpec {
    /// n = 1000 samples in d = 100: 200 with variance 1, 800 with variance 6.
    fn default() -> Self {
        Self {
            d: 100,
            k: 3,
            sizes: vec![200, 800],
            variances: vec![1.0, 6.0],
            lambdas: vec![5.0, 3.5, 2.0],
            solver: SolverConfig::default(),
            seed: 0,
            trials: 20,
            noise: NoiseKind::Gaussian,
            init: InitKind::Pca,
            population: false,
            metric: ErrorMetric::DistF,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.d <= self.k {
            return Err(Error::Dimension(format!(
                "need d > K ≥ 1, got d = {}, K = {}",
                self.d, self.k
            )));
        }
        if self.lambdas.len() != self.k {
            return Err(Error::Dimension(format!(
                "{} signal strengths for K = {}",
                self.lambdas.len(),
                self.k
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be ≥ 1".into()));
        }
        self.solver.validate()?;
        self.groups()?;
        problem::build_weights(&self.lambdas, &self.groups()?)?;
        Ok(())
    }

    pub fn groups(&self) -> Result<NoiseGroups> {
        NoiseGroups::new(self.sizes.clone(), self.variances.clone())
    }

    fn root(&self) -> RngStream {
        RngStream::new(self.seed, 0)
    }

    /// Ground truth drawn uniformly from `St(d, K)`.
    pub fn model(&self) -> Result<SignalModel> {
        let q = manifold::random_stiefel(self.d, self.k, &self.root().substream(STREAM_TRUTH, 0))?;
        SignalModel::new(q, self.lambdas.clone())
    }

    pub fn generate(&self, trial: u64) -> Result<DatasetBundle> {
        self.validate()?;
        let model = self.model()?;
        let dataset = model::sample_dataset(
            &model,
            &self.groups()?,
            self.noise,
            &self.root().substream(STREAM_DATA, trial),
        )?;
        Ok(DatasetBundle {
            model,
            dataset,
            noise: self.noise,
            seed: Some(self.seed),
        })
    }
}

/// The problem GPM runs on, plus the population problem used for analysis.
pub struct Instance {
    pub model: SignalModel,
    pub groups: NoiseGroups,
    pub problem: HppcaProblem,
    pub population: PopulationProblem,
    /// Covariance used for PCA: sample covariance, or `E[C]` in population mode.
    pub covariance: DenseMatrix,
}

impl Instance {
    pub fn from_bundle(bundle: &DatasetBundle, population_mode: bool) -> Result<Self> {
        let groups = bundle.dataset.groups().clone();
        let lambdas = bundle.model.lambdas();
        let weights = problem::build_weights(lambdas, &groups)?;
        let population = PopulationProblem::from_model(&bundle.model, &weights)?;
        let (problem, covariance) = if population_mode {
            let s = population.signal_covariance();
            let ms = weights.a().iter().map(|a| &s * *a).collect();
            (
                HppcaProblem::from_matrices(ms, weights, groups.n())?,
                model::expected_covariance(&bundle.model, &groups),
            )
        } else {
            (
                problem::build_problem(&bundle.dataset, lambdas)?,
                bundle.dataset.sample_covariance(),
            )
        };
        Ok(Self {
            model: bundle.model.clone(),
            groups,
            problem,
            population,
            covariance,
        })
    }

    pub fn residuals(&self) -> Result<problem::ResidualSet> {
        problem::build_residuals(&self.problem, &self.population)
    }

    pub fn initial_point(&self, init: &InitKind, rng: &RngStream) -> Result<StiefelPoint> {
        let (d, k) = (self.problem.d(), self.problem.k());
        match init {
            InitKind::Pca => Ok(solver::pca_init(&self.covariance, k)?.point),
            InitKind::Random => manifold::random_stiefel(d, k, rng),
            InitKind::File(path) => {
                let x = io::read_stiefel_point(path)?;
                if (x.d(), x.k()) != (d, k) {
                    return Err(Error::Dimension(format!(
                        "{}: initial point is {}×{}, expected {d}×{k}",
                        path.display(),
                        x.d(),
                        x.k()
                    )));
                }
                Ok(x)
            }
        }
    }

    /// Solve the population problem itself in population mode, else the sampled problem.
    pub fn solve(&self, init: &StiefelPoint, config: &SolverConfig, population_mode: bool) -> Result<SolveResult> {
        if population_mode {
            solver::gpm_solve(&self.population, init, config, Some(&self.population))
        } else {
            solver::gpm_solve(&self.problem, init, config, Some(&self.population))
        }
    }
}

pub fn solve_spec(spec: &ExperimentSpec, bundle: &DatasetBundle) -> Result<(Instance, SolveResult)> {
    let inst = Instance::from_bundle(bundle, spec.population)?;
    let x0 = inst.initial_point(&spec.init, &spec.root().substream(STREAM_INIT, 0))?;
    let res = inst.solve(&x0, &spec.solver, spec.population)?;
    Ok((inst, res))
}

/// Per-iteration optimality gap: `g(Q) − g(Xᵗ)` when analysing the population
/// problem, else `f(X_final) − f(Xᵗ)`.
pub fn optimality_gaps(trace: &[IterationRecord], g_opt: Option<f64>) -> Vec<f64> {
    match g_opt {
        Some(opt) => trace.iter().map(|r| opt - r.g.unwrap_or(r.f)).collect(),
        None => {
            let f_ref = trace.last().map_or(0.0, |r| r.f);
            trace.iter().map(|r| f_ref - r.f).collect()
        }
    }
}

/// Geometric rate `exp(slope)` of a least-squares fit of `ln gapₜ` against `t`,
/// over the leading run of gaps above `floor`. `None` with fewer than 3 points.
pub fn fit_geometric_rate(gaps: &[f64], floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = gaps
        .iter()
        .take_while(|g| **g > floor)
        .enumerate()
        .map(|(t, g)| (t as f64, g.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| (t - mt).powi(2)).sum();
    Some((sxy / sxx).exp())
}

/// First iteration whose distance to the truth is at most `level`.
pub fn iterations_to_reach(trace: &[IterationRecord], level: f64) -> Option<usize> {
    trace.iter().find(|r| r.dist.is_some_and(|d| d <= level)).map(|r| r.iter)
}

pub const RATE_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct ConvergenceRun {
    pub init: &'static str,
    pub result: SolveResult,
    pub rate: Option<f64>,
    pub init_dist: f64,
    pub final_dist: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub runs: Vec<ConvergenceRun>,
    pub population: bool,
}

impl ConvergenceReport {
    pub fn summary(&self) -> String {
        let mut out = format!("population={}\n", self.population);
        for r in &self.runs {
            out.push_str(&format!(
                "{0}.termination={1}\n{0}.iterations={2}\n{0}.init_dist_f={3:.16e}\n{0}.final_dist_f={4:.16e}\n{0}.rate={5}\n",
                r.init,
                r.result.termination,
                r.result.iterations(),
                r.init_dist,
                r.final_dist,
                r.rate.map_or_else(|| "nan".to_string(), |g| format!("{g:.16e}")),
            ));
        }
        out
    }
}

/// GPM from PCA and from a random start on the same data.
pub fn run_convergence(spec: &ExperimentSpec) -> Result<ConvergenceReport> {
    let bundle = spec.generate(0)?;
    let inst = Instance::from_bundle(&bundle, spec.population)?;
    let g_opt = spec.population.then(|| inst.population.optimal_value());
    let q = inst.population.q_truth();
    let mut runs = Vec::new();
    for (name, kind) in [("pca", InitKind::Pca), ("random", InitKind::Random)] {
        let x0 = inst.initial_point(&kind, &spec.root().substream(STREAM_INIT, 0))?;
        let result = inst.solve(&x0, &spec.solver, spec.population)?;
        let gaps = optimality_gaps(&result.trace, g_opt);
        let floor = RATE_FLOOR * gaps.first().map_or(1.0, |g| g.abs()).max(1.0);
        runs.push(ConvergenceRun {
            init: name,
            rate: fit_geometric_rate(&gaps, floor),
            init_dist: manifold::dist_f(&x0, q),
            final_dist: manifold::dist_f(&result.x_final, q),
            result,
        });
    }
    Ok(ConvergenceReport {
        runs,
        population: spec.population,
    })
}

/// Noise sweep `vⁱ = (1 + i/10)·(0.1, 0.6)`; heterogeneity sweep `vⁱ = (0.1, 0.6 + i/10)`.
pub fn sweep_variances(sweep: Sweep, level: usize) -> Vec<f64> {
    let i = level as f64 / 10.0;
    match sweep {
        Sweep::Noise => vec![0.1 + i * 0.1, 0.6 + i * 0.6],
        Sweep::Heterogeneity => vec![0.1, 0.6 + i],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Pca,
    Hppca,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Pca => "pca",
            Method::Hppca => "hppca",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRow {
    pub level: usize,
    pub variances: Vec<f64>,
    pub method: Method,
    pub mean_error: f64,
    pub std_error: f64,
    pub trials: usize,
    pub failures: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn robustness_trial(spec: &ExperimentSpec, level: usize, trial: u64) -> Result<(f64, f64)> {
    let bundle = spec.generate(((level as u64) << 32) | trial)?;
    let inst = Instance::from_bundle(&bundle, false)?;
    let q = inst.population.q_truth();
    let x0 = solver::pca_init(&inst.covariance, spec.k)?.point;
    let res = inst.solve(&x0, &spec.solver, false)?;
    Ok((spec.metric.eval(&x0, q), spec.metric.eval(&res.x_final, q)))
}

/// Mean and standard deviation of the PCA and GPM errors at each sweep level.
pub fn run_robustness(spec: &ExperimentSpec, sweep: Sweep, levels: usize) -> Result<Vec<RobustnessRow>> {
    if levels == 0 {
        return Err(Error::InvalidParameter("levels must be ≥ 1".into()));
    }
    if spec.sizes.len() != 2 {
        return Err(Error::Dimension(format!(
            "sweeps vary two noise groups, got {}",
            spec.sizes.len()
        )));
    }
    let mut rows = Vec::with_capacity(2 * levels);
    for level in 0..levels {
        let level_spec = ExperimentSpec {
            variances: sweep_variances(sweep, level),
            ..spec.clone()
        };
        level_spec.validate()?;
        let outcomes: Vec<Result<(f64, f64)>> = (0..spec.trials as u64)
            .into_par_iter()
            .map(|t| robustness_trial(&level_spec, level, t))
            .collect();
        let ok: Vec<(f64, f64)> = outcomes.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        let failures = outcomes.len() - ok.len();
        for (method, pick) in [(Method::Pca, 0), (Method::Hppca, 1)] {
            let errs: Vec<f64> = ok.iter().map(|p| if pick == 0 { p.0 } else { p.1 }).collect();
            let (mean_error, std_error) = mean_std(&errs);
            rows.push(RobustnessRow {
                level,
                variances: level_spec.variances.clone(),
                method,
                mean_error,
                std_error,
                trials: ok.len(),
                failures,
            });
        }
    }
    Ok(rows)
}

pub fn robustness_csv(rows: &[RobustnessRow]) -> String {
    let mut out = String::from("level,method,mean_error,std_error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.16e},{:.16e}\n",
            r.level, r.method, r.mean_error, r.std_error
        ));
    }
    out
}

/// Diagnostics of one dataset plus the GPM solve it is compared against.
pub fn run_diagnostics(
    spec: &ExperimentSpec,
    opts: &DiagnosticsOptions,
) -> Result<(DiagnosticsReport, SolveResult)> {
    diagnose_bundle(spec, &spec.generate(0)?, opts)
}

/// As [`run_diagnostics`], on a dataset supplied by the caller.
pub fn diagnose_bundle(
    spec: &ExperimentSpec,
    bundle: &DatasetBundle,
    opts: &DiagnosticsOptions,
) -> Result<(DiagnosticsReport, SolveResult)> {
    let (inst, res) = solve_spec(spec, bundle)?;
    let report = diagnostics::build_report(
        &inst.model,
        &inst.groups,
        &inst.population,
        &inst.residuals()?,
        &inst.covariance,
        opts,
        &spec.root().substream(STREAM_DIAG, 0),
    )?;
    Ok((report, res))
}
