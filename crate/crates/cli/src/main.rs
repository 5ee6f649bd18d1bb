// Experiments for the generalized power method on heteroscedastic PPCA.
//
//   hppca generate --seed 7 --out data/
//   hppca solve --data data/ --init random --out run/
//   hppca convergence --population --d 50 --svg --out conv/
//   hppca robustness --sweep heterogeneity --levels 11 --trials 20 --out rob/
//   hppca diagnose --samples 500 --radius 0.3 --out diag/
//   hppca solve --config run.cfg --alpha 0.1
//
// Exit status is 0 whenever a run completes, including runs that stop at
// --max-iters; I/O and validation failures exit nonzero.

mod settings;
mod svg;

use std::path::Path;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use gpm_hppca::experiment::{self, Method, RobustnessRow, Sweep};
use gpm_hppca::io::{self, DatasetBundle};
use gpm_hppca::manifold;
use gpm_hppca::solver::{self, SolveResult};

use settings::{CommonArgs, Settings};
use svg::Series;

#[derive(Parser)]
#[command(name = "hppca", version, about = "Generalized power method for heteroscedastic PPCA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset and write it to --out.
    Generate(CommonArgs),
    /// Run GPM on one dataset (from --data, or sampled from --seed).
    Solve(CommonArgs),
    /// Compare PCA and random starts on one dataset.
    Convergence(CommonArgs),
    /// Sweep noise levels and compare PCA against GPM.
    Robustness(CommonArgs),
    /// Estimate landscape constants and residual norms.
    Diagnose(CommonArgs),
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate(a) => generate(&Settings::resolve(&a)?),
        Command::Solve(a) => solve(&Settings::resolve(&a)?),
        Command::Convergence(a) => convergence(&Settings::resolve(&a)?),
        Command::Robustness(a) => robustness(&Settings::resolve(&a)?),
        Command::Diagnose(a) => diagnose(&Settings::resolve(&a)?),
    }
}

fn load_bundle(s: &Settings) -> anyhow::Result<DatasetBundle> {
    match &s.data {
        Some(dir) => io::read_dataset(dir).with_context(|| format!("reading dataset {}", dir.display())),
        None => Ok(s.spec.generate(0)?),
    }
}

fn write(out: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    io::write_text(&out.join(name), contents)?;
    Ok(())
}

fn generate(s: &Settings) -> anyhow::Result<()> {
    let bundle = s.spec.generate(0)?;
    io::write_dataset(&s.out, &bundle)?;
    println!("seed={}", s.spec.seed);
    println!("out={}", s.out.display());
    Ok(())
}

fn trace_series(name: &str, res: &SolveResult, y: impl Fn(&solver::IterationRecord) -> Option<f64>) -> Series {
    Series {
        name: name.to_string(),
        points: res
            .trace
            .iter()
            .filter_map(|r| y(r).map(|v| (r.iter as f64, v)))
            .collect(),
    }
}

fn solve(s: &Settings) -> anyhow::Result<()> {
    let bundle = load_bundle(s)?;
    let (inst, res) = experiment::solve_spec(&s.spec, &bundle)?;
    let last = res.trace.last().context("empty trace")?;
    let q = inst.population.q_truth();
    let summary = format!(
        "termination={}\niterations={}\nalpha={:.16e}\nf={:.16e}\ndist_f={:.16e}\nsin_theta={:.16e}\nrho_alpha={:.16e}\nfixed_point_gap={:.16e}\n",
        res.termination,
        res.iterations(),
        res.alpha,
        last.f,
        manifold::dist_f(&res.x_final, q),
        manifold::sin_theta_distance(&res.x_final, q),
        last.rho_alpha,
        last.fixed_point_gap,
    );
    write(&s.out, "trace.csv", &solver::trace_to_csv(&res.trace))?;
    io::write_matrix_csv(&s.out.join("x_final.csv"), res.x_final.matrix())?;
    write(&s.out, "summary.txt", &summary)?;
    if s.svg {
        let chart = svg::line_chart(
            "GPM trace",
            "iteration",
            "value",
            &[
                trace_series("dist_f", &res, |r| r.dist),
                trace_series("rho_alpha", &res, |r| Some(r.rho_alpha)),
            ],
            true,
        );
        write(&s.out, "trace.svg", &chart)?;
    }
    print!("{summary}");
    Ok(())
}

fn convergence(s: &Settings) -> anyhow::Result<()> {
    let report = experiment::run_convergence(&s.spec)?;
    for run in &report.runs {
        write(&s.out, &format!("trace_{}.csv", run.init), &solver::trace_to_csv(&run.result.trace))?;
    }
    let summary = report.summary();
    write(&s.out, "summary.txt", &summary)?;
    if s.svg {
        let dist: Vec<Series> = report
            .runs
            .iter()
            .map(|r| trace_series(r.init, &r.result, |t| t.dist))
            .collect();
        write(
            &s.out,
            "dist_f.svg",
            &svg::line_chart("Distance to truth", "iteration", "dist_f", &dist, true),
        )?;
        let rho: Vec<Series> = report
            .runs
            .iter()
            .map(|r| trace_series(r.init, &r.result, |t| Some(t.rho_alpha)))
            .collect();
        write(
            &s.out,
            "rho_alpha.svg",
            &svg::line_chart("Fixed-point residual", "iteration", "rho_alpha", &rho, true),
        )?;
    }
    print!("{summary}");
    Ok(())
}

fn method_series(rows: &[RobustnessRow], method: Method) -> Series {
    Series {
        name: method.to_string(),
        points: rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| (r.level as f64, r.mean_error))
            .collect(),
    }
}

fn robustness(s: &Settings) -> anyhow::Result<()> {
    let rows = experiment::run_robustness(&s.spec, s.sweep, s.levels)?;
    let csv = experiment::robustness_csv(&rows);
    write(&s.out, "robustness.csv", &csv)?;
    if s.svg {
        let title = match s.sweep {
            Sweep::Noise => "Noise sweep",
            Sweep::Heterogeneity => "Heterogeneity sweep",
        };
        let series = [method_series(&rows, Method::Pca), method_series(&rows, Method::Hppca)];
        write(
            &s.out,
            "robustness.svg",
            &svg::line_chart(title, "level", &s.spec.metric.to_string(), &series, false),
        )?;
    }
    let failures: usize = rows.iter().filter(|r| r.method == Method::Pca).map(|r| r.failures).sum();
    if failures > 0 {
        eprintln!("warning: {failures} trial(s) failed and were left out of the averages");
    }
    print!("{csv}");
    Ok(())
}

fn diagnose(s: &Settings) -> anyhow::Result<()> {
    let (report, res) = match &s.data {
        Some(_) => experiment::diagnose_bundle(&s.spec, &load_bundle(s)?, &s.diagnostics)?,
        None => experiment::run_diagnostics(&s.spec, &s.diagnostics)?,
    };
    let mut text = report.to_key_value();
    text.push_str(&format!(
        "gpm.termination={}\ngpm.iterations={}\nlocal_region_exits={}\n",
        res.termination,
        res.iterations(),
        gpm_hppca::diagnostics::local_region_exits(&res.trace, s.diagnostics.radius).len(),
    ));
    write(&s.out, "report.txt", &text)?;
    write(&s.out, "ratios.csv", &report.ratios_csv())?;
    print!("{text}");
    Ok(())
}
