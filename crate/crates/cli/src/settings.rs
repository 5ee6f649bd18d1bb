//! Command-line flags merged over an optional flat `key=value` config file.
//!
//! Keys in the file use the long flag names (`max-iters` or `max_iters`).
//! A flag given on the command line always wins over the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::Args;
use gpm_hppca::diagnostics::DiagnosticsOptions;
use gpm_hppca::experiment::{ErrorMetric, ExperimentSpec, InitKind, Sweep};
use gpm_hppca::io;
use gpm_hppca::solver::SolverConfig;
use gpm_hppca::NoiseKind;

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Seed for every random draw.
    #[arg(long)]
    pub seed: Option<u64>,
    /// GPM step parameter α ≥ 0.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Stop when ‖Xᵗ⁺¹ − Xᵗ‖_F falls to this.
    #[arg(long)]
    pub tol_step: Option<f64>,
    /// Stop when the fixed-point residual ρ_α falls to this.
    #[arg(long)]
    pub tol_residual: Option<f64>,
    /// pca, random or file:PATH.
    #[arg(long)]
    pub init: Option<String>,
    /// gaussian or uniform.
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    /// noise or heterogeneity.
    #[arg(long)]
    pub sweep: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flat key=value file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ambient dimension.
    #[arg(long)]
    pub d: Option<usize>,
    /// Subspace rank K.
    #[arg(long)]
    pub k: Option<usize>,
    /// Group sizes, comma separated.
    #[arg(long)]
    pub sizes: Option<String>,
    /// Group noise variances, comma separated and pairwise distinct.
    #[arg(long)]
    pub variances: Option<String>,
    /// Signal strengths, comma separated and strictly decreasing.
    #[arg(long)]
    pub lambdas: Option<String>,
    /// Solve the noiseless population problem.
    #[arg(long)]
    pub population: bool,
    /// Raise α so that every iteration increases the objective.
    #[arg(long)]
    pub safeguard: bool,
    /// dist_f or sin_theta.
    #[arg(long)]
    pub metric: Option<String>,
    /// Read the dataset from this directory instead of sampling one.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Also write SVG line charts.
    #[arg(long)]
    pub svg: bool,
    /// Samples per ratio estimate in `diagnose`.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Neighbourhood radius for ratio estimates in `diagnose`.
    #[arg(long)]
    pub radius: Option<f64>,
}

const KEYS: &[&str] = &[
    "seed", "alpha", "max_iters", "tol_step", "tol_residual", "init", "noise", "trials", "levels",
    "sweep", "out", "d", "k", "sizes", "variances", "lambdas", "population", "safeguard", "metric",
    "data", "svg", "samples", "radius",
];

/// Everything a command needs, after merging flags, file and defaults.
#[derive(Debug, Clone)]
pub struct Settings {
    pub spec: ExperimentSpec,
    pub levels: usize,
    pub sweep: Sweep,
    pub out: PathBuf,
    pub data: Option<PathBuf>,
    pub svg: bool,
    pub diagnostics: DiagnosticsOptions,
}

struct Layer {
    file: BTreeMap<String, String>,
    path: Option<PathBuf>,
}

impl Layer {
    fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let mut file = BTreeMap::new();
        if let Some(p) = path {
            for (k, v) in io::read_key_values(p)? {
                let key = k.replace('-', "_");
                if !KEYS.contains(&key.as_str()) {
                    bail!("{}: unknown key {k:?}", p.display());
                }
                file.insert(key, v);
            }
        }
        Ok(Self {
            file,
            path: path.map(Path::to_path_buf),
        })
    }

    fn pick<T: FromStr>(&self, key: &str, cli: Option<T>) -> anyhow::Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if cli.is_some() {
            return Ok(cli);
        }
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                anyhow::anyhow!(
                    "{}: {key}={raw}: {e}",
                    self.path.as_deref().unwrap_or(Path::new("config")).display()
                )
            }),
        }
    }

    fn flag(&self, key: &str, cli: bool) -> anyhow::Result<bool> {
        Ok(cli || self.pick::<bool>(key, None)?.unwrap_or(false))
    }
}

fn list<T: FromStr>(name: &str, raw: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| anyhow::anyhow!("--{name}: cannot parse {s:?}: {e}"))
        })
        .collect()
}

impl Settings {
    pub fn resolve(args: &CommonArgs) -> anyhow::Result<Self> {
        let layer = Layer::load(args.config.as_deref())?;
        let mut spec = ExperimentSpec::default();
        let defaults = SolverConfig::default();
        spec.solver = SolverConfig {
            alpha: layer.pick("alpha", args.alpha)?.unwrap_or(defaults.alpha),
            max_iters: layer.pick("max_iters", args.max_iters)?.unwrap_or(defaults.max_iters),
            tol_step: layer.pick("tol_step", args.tol_step)?.unwrap_or(defaults.tol_step),
            tol_residual: layer
                .pick("tol_residual", args.tol_residual)?
                .unwrap_or(defaults.tol_residual),
            ascent_safeguard: layer.flag("safeguard", args.safeguard)?,
        };
        if let Some(seed) = layer.pick("seed", args.seed)? {
            spec.seed = seed;
        }
        if let Some(d) = layer.pick("d", args.d)? {
            spec.d = d;
        }
        if let Some(k) = layer.pick("k", args.k)? {
            spec.k = k;
        }
        if let Some(raw) = layer.pick::<String>("sizes", args.sizes.clone())? {
            spec.sizes = list("sizes", &raw)?;
        }
        if let Some(raw) = layer.pick::<String>("variances", args.variances.clone())? {
            spec.variances = list("variances", &raw)?;
        }
        if let Some(raw) = layer.pick::<String>("lambdas", args.lambdas.clone())? {
            spec.lambdas = list("lambdas", &raw)?;
        }
        if let Some(t) = layer.pick("trials", args.trials)? {
            spec.trials = t;
        }
        if let Some(n) = layer.pick::<NoiseKind>("noise", parse_opt(&args.noise)?)? {
            spec.noise = n;
        }
        if let Some(i) = layer.pick::<InitKind>("init", parse_opt(&args.init)?)? {
            spec.init = i;
        }
        if let Some(m) = layer.pick::<ErrorMetric>("metric", parse_opt(&args.metric)?)? {
            spec.metric = m;
        }
        spec.population = layer.flag("population", args.population)?;
        spec.validate().context("invalid experiment settings")?;

        let mut diagnostics = DiagnosticsOptions {
            alpha: spec.solver.alpha,
            ..Default::default()
        };
        if let Some(n) = layer.pick("samples", args.samples)? {
            diagnostics.n_samples = n;
        }
        if let Some(r) = layer.pick("radius", args.radius)? {
            diagnostics.radius = r;
        }
        let levels = layer.pick("levels", args.levels)?.unwrap_or(11);
        if levels == 0 {
            bail!("levels must be ≥ 1");
        }
        Ok(Self {
            spec,
            levels,
            sweep: layer
                .pick::<Sweep>("sweep", parse_opt(&args.sweep)?)?
                .unwrap_or(Sweep::Noise),
            out: layer
                .pick("out", args.out.clone())?
                .unwrap_or_else(|| PathBuf::from("out")),
            data: layer.pick("data", args.data.clone())?,
            svg: layer.flag("svg", args.svg)?,
            diagnostics,
        })
    }
}

fn parse_opt<T: FromStr>(raw: &Option<String>) -> anyhow::Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    raw.as_deref()
        .map(|s| s.parse::<T>().map_err(|e| anyhow::anyhow!("{e}")))
        .transpose()
}
