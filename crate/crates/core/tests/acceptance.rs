//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::time::Instant;

use gpm_hppca::diagnostics::{self, CriticalPoints};
use gpm_hppca::experiment::{self, ExperimentSpec, Instance, Sweep};
use gpm_hppca::manifold::{self, SignVector};
use gpm_hppca::model::{self, NoiseGroups, NoiseKind, SignalModel};
use gpm_hppca::numerics::{self, RngStream};
use gpm_hppca::problem::{self, PopulationProblem};
use gpm_hppca::solver::{self, IterationRecord, SolveResult, SolverConfig, Termination};

const LAMBDAS: [f64; 3] = [5.0, 3.5, 2.0];
const ALPHA: f64 = 0.05;
/// Below this optimality gap, successive ratios are dominated by rounding in g.
const GAP_FLOOR: f64 = 1e-12;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

type Check = gpm_hppca::Result<Verdict>;

fn reference_groups() -> NoiseGroups {
    NoiseGroups::new(vec![200, 800], vec![1.0, 6.0]).unwrap()
}

fn population(d: usize, seed: u64) -> (SignalModel, PopulationProblem) {
    let q = manifold::random_stiefel(d, 3, &RngStream::new(seed, 1)).unwrap();
    let model = SignalModel::new(q, LAMBDAS.to_vec()).unwrap();
    let wt = problem::build_weights(&LAMBDAS, &reference_groups()).unwrap();
    let pop = PopulationProblem::from_model(&model, &wt).unwrap();
    (model, pop)
}

/// The two population runs shared by the first four criteria: PCA of the
/// exact covariance, and a random start that exercises the iteration itself.
struct PopulationRuns {
    pop: PopulationProblem,
    pca: SolveResult,
    pca_time: f64,
    random: SolveResult,
}

fn population_runs() -> gpm_hppca::Result<PopulationRuns> {
    let (model, pop) = population(50, 2024);
    let cfg = SolverConfig {
        alpha: ALPHA,
        max_iters: 500,
        ..Default::default()
    };
    let start = Instant::now();
    let cov = model::expected_covariance(&model, &reference_groups());
    let x0 = solver::pca_init(&cov, 3)?.point;
    let pca = solver::gpm_solve(&pop, &x0, &cfg, Some(&pop))?;
    let pca_time = start.elapsed().as_secs_f64();
    // the exact PCA start is already optimal, so the rate is measured from a random start
    let xr = manifold::random_stiefel(50, 3, &RngStream::new(2024, 2))?;
    let long = SolverConfig {
        max_iters: 5000,
        ..cfg
    };
    let random = solver::gpm_solve(&pop, &xr, &long, Some(&pop))?;
    Ok(PopulationRuns {
        pop,
        pca,
        pca_time,
        random,
    })
}

fn gaps(run: &SolveResult, g_opt: f64) -> Vec<f64> {
    run.trace.iter().map(|r| g_opt - r.g.unwrap()).collect()
}

/// Largest `gapₜ₊₁ / gapₜ` over `t ≥ 10` while both gaps exceed the floor.
fn worst_ratio_after_burn_in(gaps: &[f64]) -> Option<f64> {
    gaps.windows(2)
        .enumerate()
        .skip(10)
        .take_while(|(_, w)| w[0] > GAP_FLOOR && w[1] > GAP_FLOOR)
        .map(|(_, w)| w[1] / w[0])
        .reduce(f64::max)
}

fn first_within(run: &SolveResult, level: f64) -> Option<usize> {
    experiment::iterations_to_reach(&run.trace, level)
}

fn c1(runs: &PopulationRuns) -> Check {
    let g_opt = runs.pop.optimal_value();
    let pca_hit = first_within(&runs.pca, 1e-8);
    let rand_hit = first_within(&runs.random, 1e-8);
    let rand_gaps = gaps(&runs.random, g_opt);
    let worst = worst_ratio_after_burn_in(&rand_gaps);
    let fitted = experiment::fit_geometric_rate(
        &rand_gaps.iter().skip(10).cloned().collect::<Vec<_>>(),
        GAP_FLOOR,
    );
    let pass = pca_hit.is_some_and(|t| t <= 500)
        && runs.pca.termination == Termination::ResidualConverged
        && rand_hit.is_some()
        && worst.is_some_and(|r| r <= 0.999)
        && fitted.is_some_and(|r| r <= 0.999)
        && runs.pca_time < 2.0;
    Ok(verdict(
        pass,
        format!(
            "pca-exact reaches 1e-8 at t={pca_hit:?} ({}, {:.3}s); random start reaches 1e-8 at t={rand_hit:?}, worst ratio after burn-in {worst:?}, fitted {fitted:?}",
            runs.pca.termination, runs.pca_time
        ),
    ))
}

fn ascent_violations(run: &SolveResult, alpha: f64) -> usize {
    run.trace
        .windows(2)
        .filter(|w| {
            let rise = w[1].g.unwrap() - w[0].g.unwrap();
            rise < alpha * w[0].step_norm.powi(2) - 1e-10
        })
        .count()
}

fn c2(runs: &PopulationRuns) -> Check {
    let checked = runs.pca.trace.len() + runs.random.trace.len() - 2;
    let bad = ascent_violations(&runs.pca, ALPHA) + ascent_violations(&runs.random, ALPHA);
    Ok(verdict(bad == 0, format!("{bad} violations over {checked} steps")))
}

fn safeguard_violations(trace: &[IterationRecord]) -> usize {
    trace
        .iter()
        .filter(|r| r.rho_alpha > r.map_norm * r.step_norm + 1e-10)
        .count()
}

fn c3(runs: &PopulationRuns) -> Check {
    let checked = runs.pca.trace.len() + runs.random.trace.len();
    let bad = safeguard_violations(&runs.pca.trace) + safeguard_violations(&runs.random.trace);
    Ok(verdict(bad == 0, format!("{bad} violations over {checked} iterates")))
}

fn c4(runs: &PopulationRuns) -> Check {
    let mut terminal = vec![runs.pca.clone(), runs.random.clone()];
    // finite-sample runs too
    for seed in 0..3 {
        let spec = ExperimentSpec {
            d: 40,
            sizes: vec![80, 320],
            seed,
            ..Default::default()
        };
        let (_, res) = experiment::solve_spec(&spec, &spec.generate(0)?)?;
        terminal.push(res);
    }
    let converged: Vec<f64> = terminal
        .iter()
        .filter(|r| r.termination == Termination::ResidualConverged)
        .map(|r| r.trace.last().unwrap().fixed_point_gap)
        .collect();
    let worst_terminal = converged.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut worst_random = f64::INFINITY;
    for i in 0..500 {
        let x = manifold::random_stiefel(50, 3, &RngStream::new(44, i))?;
        worst_random = worst_random.min(solver::fixed_point_gap(&runs.pop, &x, ALPHA)?);
    }
    let pass = converged.len() == terminal.len() && worst_terminal <= 1e-8 && worst_random >= -1e-10;
    Ok(verdict(
        pass,
        format!(
            "{}/{} runs residual-converged, max terminal gap {worst_terminal:.2e}; min gap at 500 random points {worst_random:.2e}",
            converged.len(),
            terminal.len()
        ),
    ))
}

fn c5() -> Check {
    let (_, pop) = population(20, 5);
    let cp = CriticalPoints::new(&pop, &RngStream::new(5, 5))?;
    let g_opt = pop.optimal_value();
    let s = |v: [i8; 3]| SignVector::new(v.to_vec()).unwrap();
    let cases: Vec<([usize; 3], SignVector)> = vec![
        ([0, 1, 2], s([1, 1, 1])),
        ([0, 1, 2], s([-1, 1, -1])),
        ([0, 2, 1], s([1, 1, 1])),
        ([1, 0, 2], s([1, -1, 1])),
        ([1, 2, 0], s([-1, -1, 1])),
        ([2, 0, 1], s([1, 1, -1])),
        ([2, 1, 0], s([-1, 1, 1])),
        ([3, 1, 2], s([1, 1, 1])),
        ([0, 4, 2], s([1, -1, 1])),
        ([0, 1, 5], s([1, 1, -1])),
        ([7, 8, 9], s([1, 1, 1])),
        ([2, 0, 10], s([-1, 1, 1])),
        ([19, 3, 1], s([1, -1, -1])),
        ([6, 2, 0], s([1, 1, 1])),
        ([1, 11, 12], s([-1, -1, -1])),
        ([13, 0, 14], s([1, 1, 1])),
        ([15, 16, 2], s([1, -1, 1])),
        ([2, 17, 18], s([-1, 1, 1])),
        ([4, 5, 6], s([1, 1, -1])),
        ([0, 2, 3], s([1, 1, 1])),
    ];
    let mut failures = Vec::new();
    let mut max_grad: f64 = 0.0;
    let mut max_rho: f64 = 0.0;
    let mut min_far: f64 = f64::INFINITY;
    let mut min_drop: f64 = f64::INFINITY;
    for (sel, q) in &cases {
        let x = cp.generate(sel, q)?;
        let grad = problem::riemannian_grad_g(&pop, &x).norm();
        let rho = solver::rho_alpha(&pop, &x, ALPHA)?;
        max_grad = max_grad.max(grad);
        max_rho = max_rho.max(rho);
        if grad > 1e-10 || rho > 1e-10 {
            failures.push(format!("{sel:?} grad {grad:.1e} rho {rho:.1e}"));
        }
        if *sel != [0, 1, 2] {
            let g = problem::eval_g(&pop, &x);
            let dist = manifold::dist_f(&x, pop.q_truth());
            min_far = min_far.min(dist);
            min_drop = min_drop.min(g_opt - g);
            if g.is_nan() || g >= g_opt - 1e-6 * g_opt || dist < 2f64.sqrt() - 1e-10 {
                failures.push(format!("{sel:?} g {g} dist {dist}"));
            }
            // inside span(Q) the value is the rearranged sum Σ_j λ_{σ(j)} a_j
            if sel.iter().all(|c| *c < 3) {
                let want: f64 = sel
                    .iter()
                    .zip(pop.a())
                    .map(|(c, a)| LAMBDAS[*c] * a)
                    .sum();
                if (g - want).abs() > 1e-12 {
                    failures.push(format!("{sel:?} rearranged value {g} vs {want}"));
                }
            }
        }
    }
    Ok(verdict(
        failures.is_empty(),
        format!(
            "{} points: max grad {max_grad:.1e}, max rho {max_rho:.1e}, min non-optimal drop {min_drop:.4}, min non-optimal dist {min_far:.6}{}",
            cases.len(),
            if failures.is_empty() { String::new() } else { format!("; failures {failures:?}") }
        ),
    ))
}

fn c6() -> Check {
    let (_, pop) = population(100, 6);
    let g = problem::eval_g(&pop, pop.q_truth());
    let err = (g - 2.1860712).abs();
    Ok(verdict(err <= 1e-6, format!("g(Q) = {g:.10}, |error| {err:.1e}")))
}

fn c7() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let spec = ExperimentSpec {
            d: 30,
            sizes: vec![40, 160],
            seed,
            ..Default::default()
        };
        let bundle = spec.generate(0)?;
        let inst = Instance::from_bundle(&bundle, false)?;
        let res = inst.residuals()?;
        let x = manifold::random_stiefel(30, 3, &RngStream::new(seed, 77))?;
        let f = problem::eval_f(&inst.problem, &x);
        let g = problem::eval_g(&inst.population, &x);
        let h = problem::eval_h(&res, &x);
        worst = worst.max((f - g - h).abs() / f.abs().max(1.0));
    }
    Ok(verdict(worst <= 1e-10, format!("max |f−g−h|/max(1,|f|) = {worst:.2e} over 100 pairs")))
}

fn c8() -> Check {
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let d = 5 + (i as usize % 20);
        let x = manifold::random_stiefel(d, 3, &RngStream::new(i, 81))?;
        let q = manifold::random_stiefel(d, 3, &RngStream::new(i, 82))?;
        let overlap: f64 = (0..3)
            .map(|k| x.matrix().column(k).dot(&q.matrix().column(k)).abs())
            .sum();
        let df = manifold::dist_f(&x, &q);
        worst = worst.max((df * df - 2.0 * (3.0 - overlap)).abs());
    }
    let mut worst_sign: f64 = 0.0;
    let mut combos = 0;
    for k in 1..=4 {
        for s in 0..5u64 {
            let x = manifold::random_stiefel(8, k, &RngStream::new(s, 83))?;
            let q = manifold::random_stiefel(8, k, &RngStream::new(s, 84))?;
            let base = manifold::dist_f(&x, &q);
            for sv in SignVector::all(k) {
                worst_sign = worst_sign.max((manifold::dist_f(&x.with_signs(&sv), &q) - base).abs());
                combos += 1;
            }
        }
    }
    Ok(verdict(
        worst <= 1e-10 && worst_sign <= 1e-12,
        format!("identity error {worst:.1e} on 100 pairs; sign-invariance error {worst_sign:.1e} over {combos} flips (K = 1..4)"),
    ))
}

fn c9() -> Check {
    let (_, pop) = population(20, 9);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for p in 0..10u64 {
        let x = manifold::random_stiefel(20, 3, &RngStream::new(p, 91))?;
        let grad = problem::riemannian_grad_g(&pop, &x);
        for dir in 0..20u64 {
            let z = numerics::random_gaussian(20, 3, &RngStream::new(p * 100 + dir, 92))?;
            let xi = manifold::tangent_project(&x, &z);
            let xi = &xi / xi.norm();
            let plus = manifold::project_stiefel(&(x.matrix() + &xi * h))?.point;
            let minus = manifold::project_stiefel(&(x.matrix() - &xi * h))?.point;
            let fd = (problem::eval_g(&pop, &plus) - problem::eval_g(&pop, &minus)) / (2.0 * h);
            let exact = grad.dot(&xi);
            worst = worst.max((fd - exact).abs() / exact.abs());
        }
    }
    Ok(verdict(worst <= 1e-5, format!("max relative error {worst:.2e} over 200 directions")))
}

/// Trailing 5-point moving average.
fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    xs.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
}

struct PlateauRun {
    pass: bool,
    seconds: f64,
    init: f64,
    last: f64,
    /// Largest rise of the moving average, as a fraction of the total drop.
    rise: f64,
    sin_theta_monotone: bool,
    note: &'static str,
}

fn max_rise(ma: &[f64]) -> f64 {
    ma.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

fn plateau_run(spec: &ExperimentSpec) -> gpm_hppca::Result<PlateauRun> {
    let start = Instant::now();
    let bundle = spec.generate(0)?;
    let (_, res) = experiment::solve_spec(spec, &bundle)?;
    let seconds = start.elapsed().as_secs_f64();
    let dists: Vec<f64> = res.trace.iter().map(|r| r.dist.unwrap()).collect();
    let ma = moving_average(&dists, 5.min(dists.len()));
    let monotone = ma.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let q = bundle.model.q_truth();
    let x0 = solver::pca_init(&bundle.dataset.sample_covariance(), spec.k)?.point;
    let mut xs = vec![x0];
    let inst = Instance::from_bundle(&bundle, false)?;
    for _ in 1..res.trace.len() {
        let next = solver::gpm_step(&inst.problem, xs.last().unwrap(), res.alpha)?.point;
        xs.push(next);
    }
    let sin: Vec<f64> = xs.iter().map(|x| manifold::sin_theta_distance(x, q)).collect();
    let sin_ma = moving_average(&sin, 5.min(sin.len()));
    let sin_theta_monotone = sin_ma.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let plateau = matches!(
        res.termination,
        Termination::ResidualConverged | Termination::StepConverged
    );
    let (init, last) = (dists[0], *dists.last().unwrap());
    let note = if !monotone {
        "moving average rises"
    } else if !plateau {
        "no plateau"
    } else if last >= init {
        "no improvement"
    } else if seconds >= 10.0 {
        "too slow"
    } else {
        ""
    };
    Ok(PlateauRun {
        pass: note.is_empty(),
        seconds,
        init,
        last,
        rise: max_rise(&ma) / (ma[0] - ma.last().unwrap()).max(f64::MIN_POSITIVE),
        sin_theta_monotone,
        note,
    })
}

fn plateau_criterion(noise: NoiseKind, variances: Vec<f64>) -> Check {
    let mut passed = 0;
    let mut notes = Vec::new();
    let mut slowest: f64 = 0.0;
    let mut improvement = Vec::new();
    let mut worst_rise: f64 = 0.0;
    let mut sin_ok = 0;
    for seed in 0..20 {
        let spec = ExperimentSpec {
            seed,
            noise,
            variances: variances.clone(),
            ..Default::default()
        };
        let run = plateau_run(&spec)?;
        slowest = slowest.max(run.seconds);
        improvement.push(run.last / run.init);
        worst_rise = worst_rise.max(run.rise);
        sin_ok += usize::from(run.sin_theta_monotone);
        if run.pass {
            passed += 1;
        } else {
            notes.push(format!("seed {seed}: {}", run.note));
        }
    }
    let mean_ratio = improvement.iter().sum::<f64>() / improvement.len() as f64;
    Ok(verdict(
        passed >= 18,
        format!(
            "{passed}/20 seeds; mean final/initial distance {mean_ratio:.3}; largest moving-average rise {:.1}% of the total drop; slowest {slowest:.2}s (sin-theta moving average monotone in {sin_ok}/20, informational){}",
            100.0 * worst_rise,
            if notes.is_empty() { String::new() } else { format!("; {notes:?}") }
        ),
    ))
}

fn c10() -> Check {
    plateau_criterion(NoiseKind::Gaussian, vec![1.0, 6.0])
}

fn c11() -> Check {
    plateau_criterion(NoiseKind::Uniform, vec![0.5, 3.0])
}

fn c12() -> Check {
    let spec = ExperimentSpec {
        trials: 20,
        seed: 12,
        ..Default::default()
    };
    let rows = experiment::run_robustness(&spec, Sweep::Heterogeneity, 10)?;
    let series = |m: experiment::Method| -> Vec<f64> {
        rows.iter().filter(|r| r.method == m).map(|r| r.mean_error).collect()
    };
    let pca = series(experiment::Method::Pca);
    let hppca = series(experiment::Method::Hppca);
    let range = |xs: &[f64]| {
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - xs.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let failures: usize = rows.iter().map(|r| r.failures).sum();
    let dominated = pca.iter().zip(&hppca).all(|(p, h)| h <= p);
    let (rp, rh) = (range(&pca), range(&hppca));
    let noise_rows = experiment::run_robustness(&spec, Sweep::Noise, 10)?;
    let noise_wins = noise_rows
        .chunks(2)
        .filter(|c| c[1].mean_error <= c[0].mean_error)
        .count();
    Ok(verdict(
        dominated && rh < rp && failures == 0,
        format!(
            "heterogeneity: HPPCA ≤ PCA at every level: {dominated}; range HPPCA {rh:.4} vs PCA {rp:.4}; failed trials {failures}. (noise sweep, informational: HPPCA ≤ PCA at {noise_wins}/10 levels)"
        ),
    ))
}

fn c13() -> Check {
    let mut medians = Vec::new();
    for (i, n) in [500usize, 2000, 8000].into_iter().enumerate() {
        let mut maxes = Vec::new();
        for seed in 0..10 {
            let spec = ExperimentSpec {
                sizes: vec![n / 5, 4 * n / 5],
                seed: 1300 + seed,
                ..Default::default()
            };
            let bundle = spec.generate(i as u64)?;
            let inst = Instance::from_bundle(&bundle, false)?;
            let norms = diagnostics::residual_norms(&inst.residuals()?, numerics::ITERATIVE_TOL)?;
            maxes.push(norms.into_iter().fold(0.0, f64::max));
        }
        maxes.sort_by(f64::total_cmp);
        medians.push((maxes[4] + maxes[5]) / 2.0);
    }
    let pass = medians.windows(2).all(|w| w[1] < w[0]);
    Ok(verdict(
        pass,
        format!(
            "median max‖Δ_k‖ at n = 500, 2000, 8000: {:.4}, {:.4}, {:.4}",
            medians[0], medians[1], medians[2]
        ),
    ))
}

fn c14() -> Check {
    let mut held = 0;
    let mut worst_fraction: f64 = 0.0;
    for seed in 0..10 {
        let spec = ExperimentSpec {
            seed: 1400 + seed,
            ..Default::default()
        };
        let bundle = spec.generate(0)?;
        let dk = diagnostics::davis_kahan_check(
            &bundle.model,
            bundle.dataset.groups(),
            &bundle.dataset.sample_covariance(),
        )?;
        if dk.holds() {
            held += 1;
        }
        worst_fraction = worst_fraction.max(dk.dist_sq / dk.aggregate);
    }
    Ok(verdict(
        held == 10,
        format!("{held}/10 seeds within bound; largest d_F²/bound {worst_fraction:.3}"),
    ))
}

fn report(id: usize, name: &str, outcome: Check, all: &mut bool) {
    let (pass, detail) = match outcome {
        Ok(v) => (v.pass, v.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    *all &= pass;
    println!(
        "criterion {id:>2} [{}] {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful for this harness
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let started = Instant::now();
    let mut all = true;
    match population_runs() {
        Ok(runs) => {
            report(1, "population linear convergence", c1(&runs), &mut all);
            report(2, "sufficient ascent", c2(&runs), &mut all);
            report(3, "safeguard", c3(&runs), &mut all);
            report(4, "fixed-point certificate", c4(&runs), &mut all);
        }
        Err(e) => {
            for (id, name) in [
                (1, "population linear convergence"),
                (2, "sufficient ascent"),
                (3, "safeguard"),
                (4, "fixed-point certificate"),
            ] {
                report(id, name, Err(gpm_hppca::Error::InvalidParameter(e.to_string())), &mut all);
            }
        }
    }
    report(5, "critical points", c5(), &mut all);
    report(6, "optimal value", c6(), &mut all);
    report(7, "decomposition identity", c7(), &mut all);
    report(8, "distance identity", c8(), &mut all);
    report(9, "gradient", c9(), &mut all);
    report(10, "estimation plateau (gaussian)", c10(), &mut all);
    report(11, "estimation plateau (uniform)", c11(), &mut all);
    report(12, "robustness sweeps", c12(), &mut all);
    report(13, "concentration trend", c13(), &mut all);
    report(14, "PCA initialization bound", c14(), &mut all);
    println!(
        "acceptance: {} in {:.1}s",
        if all { "all criteria passed" } else { "FAILURES" },
        started.elapsed().as_secs_f64()
    );
    if !all {
        std::process::exit(1);
    }
}
