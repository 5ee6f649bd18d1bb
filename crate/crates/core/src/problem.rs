//! The heterogeneous quadratic program over `St(d, K)` and its population part.
//!
//! The finite-sample objective is `f(X) = Σ_k x_kᵀ M_k x_k` with
//!
//! ```text
//! M_k = (1/n) Σ_l Σ_i (w_{l,k}/v_l) y_{l,i} y_{l,i}ᵀ − γ_k I,    w_{l,k} = λ_k / (λ_k + v_l)
//! ```
//!
//! It splits exactly as `f = g + h`, where `g(X) = tr(XᵀQΘ²QᵀX diag(a))` is
//! what infinitely many samples would give and `h(X) = Σ_k x_kᵀ Δ_k x_k`
//! collects the sampling error `Δ_k = M_k − a_k QΘ²Qᵀ`.

use crate::error::{Error, Result};
use crate::manifold::StiefelPoint;
use crate::model::{check_strictly_decreasing, GroupedDataset, NoiseGroups, SignalModel};
use crate::numerics::{self, DenseMatrix};

/// The scalar families `w_{l,k}`, `a_k` and `γ_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    w: Vec<Vec<f64>>,
    a: Vec<f64>,
    gamma: Vec<f64>,
    proportions: Vec<f64>,
    variances: Vec<f64>,
}

impl WeightTable {
    /// `w[l][k]`.
    pub fn w(&self) -> &[Vec<f64>] {
        &self.w
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn k(&self) -> usize {
        self.a.len()
    }

    /// Coefficient `w_{l,k} / v_l` multiplying `C_l = (1/n) Y_l Y_lᵀ` in `M_k`.
    pub fn sample_coefficient(&self, l: usize, k: usize) -> f64 {
        self.w[l][k] / self.variances[l]
    }

    pub fn proportions(&self) -> &[f64] {
        &self.proportions
    }
}

pub fn build_weights(lambdas: &[f64], groups: &NoiseGroups) -> Result<WeightTable> {
    check_strictly_decreasing("signal strengths λ", lambdas)?;
    let variances = groups.variances().to_vec();
    let proportions: Vec<f64> = (0..groups.len()).map(|l| groups.proportion(l)).collect();
    let w: Vec<Vec<f64>> = variances
        .iter()
        .map(|v| lambdas.iter().map(|l| l / (l + v)).collect())
        .collect();
    let k = lambdas.len();
    let a: Vec<f64> = (0..k)
        .map(|kk| {
            (0..groups.len())
                .map(|l| w[l][kk] * proportions[l] / variances[l])
                .sum()
        })
        .collect();
    let gamma: Vec<f64> = (0..k)
        .map(|kk| (0..groups.len()).map(|l| w[l][kk] * proportions[l]).sum())
        .collect();
    check_strictly_decreasing("population weights a", &a)?;
    check_strictly_decreasing("shifts γ", &gamma)?;
    Ok(WeightTable {
        w,
        a,
        gamma,
        proportions,
        variances,
    })
}

/// Anything GPM can iterate on: a family of K symmetric operators applied column-wise.
pub trait GpmObjective {
    fn d(&self) -> usize;
    fn k(&self) -> usize;

    /// `[M_1 x_1, …, M_K x_K]`.
    fn apply(&self, x: &DenseMatrix) -> DenseMatrix;

    /// A shift `s` such that every `M_k + sI` is PSD.
    fn psd_shift(&self) -> f64 {
        0.0
    }

    /// `Σ_k x_kᵀ M_k x_k`.
    fn value(&self, x: &StiefelPoint) -> f64 {
        let mx = self.apply(x.matrix());
        x.matrix().component_mul(&mx).sum()
    }
}

#[derive(Debug, Clone)]
enum Operators {
    Dense(Vec<DenseMatrix>),
    /// `M_k x = Σ_l c_{l,k} Y_l (Y_lᵀ x) − γ_k x`, never forming d×d matrices.
    Factored(Vec<DenseMatrix>),
}

/// The finite-sample problem: the K matrices `M_k` plus their weights.
#[derive(Debug, Clone)]
pub struct HppcaProblem {
    ops: Operators,
    weights: WeightTable,
    d: usize,
    n: usize,
}

fn check_lambdas_for(dataset: &GroupedDataset, lambdas: &[f64]) -> Result<()> {
    if lambdas.len() != dataset.k() {
        return Err(Error::Dimension(format!(
            "{} signal strengths for a rank-{} dataset",
            lambdas.len(),
            dataset.k()
        )));
    }
    Ok(())
}

/// Assemble the dense `M_k` from a dataset.
pub fn build_problem(dataset: &GroupedDataset, lambdas: &[f64]) -> Result<HppcaProblem> {
    check_lambdas_for(dataset, lambdas)?;
    let weights = build_weights(lambdas, dataset.groups())?;
    let (d, n) = (dataset.d(), dataset.n());
    let grams = dataset.block_grams();
    let ms = (0..weights.k())
        .map(|k| {
            let mut m = DenseMatrix::identity(d, d) * -weights.gamma[k];
            for (l, g) in grams.iter().enumerate() {
                m += g * (weights.sample_coefficient(l, k) / n as f64);
            }
            m
        })
        .collect();
    Ok(HppcaProblem {
        ops: Operators::Dense(ms),
        weights,
        d,
        n,
    })
}

/// Same problem, applied straight from the sample blocks (memory O(dn) instead of O(Kd²)).
pub fn build_problem_factored(dataset: &GroupedDataset, lambdas: &[f64]) -> Result<HppcaProblem> {
    check_lambdas_for(dataset, lambdas)?;
    let weights = build_weights(lambdas, dataset.groups())?;
    Ok(HppcaProblem {
        ops: Operators::Factored(dataset.blocks().to_vec()),
        weights,
        d: dataset.d(),
        n: dataset.n(),
    })
}

impl HppcaProblem {
    /// A problem with caller-supplied `M_k` (e.g. a noiseless surrogate).
    pub fn from_matrices(ms: Vec<DenseMatrix>, weights: WeightTable, n: usize) -> Result<Self> {
        if ms.len() != weights.k() || ms.is_empty() {
            return Err(Error::Dimension(format!(
                "{} matrices for {} weight columns",
                ms.len(),
                weights.k()
            )));
        }
        let d = ms[0].nrows();
        for m in &ms {
            if m.shape() != (d, d) {
                return Err(Error::Dimension("M_k must all be d×d".into()));
            }
            numerics::ensure_finite(m, "M_k")?;
            numerics::ensure_symmetric(m, numerics::CONSTRUCTION_TOL)?;
        }
        Ok(Self {
            ops: Operators::Dense(ms),
            weights,
            d,
            n,
        })
    }

    pub fn weights(&self) -> &WeightTable {
        &self.weights
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_factored(&self) -> bool {
        matches!(self.ops, Operators::Factored(_))
    }

    /// `M_k` as a dense matrix (materialized on demand for the factored form).
    pub fn m_matrix(&self, k: usize) -> DenseMatrix {
        match &self.ops {
            Operators::Dense(ms) => ms[k].clone(),
            Operators::Factored(blocks) => {
                let mut m = DenseMatrix::identity(self.d, self.d) * -self.weights.gamma[k];
                for (l, y) in blocks.iter().enumerate() {
                    let c = self.weights.sample_coefficient(l, k) / self.n as f64;
                    m += (y * y.transpose()) * c;
                }
                (&m + m.transpose()) * 0.5
            }
        }
    }
}

impl GpmObjective for HppcaProblem {
    fn d(&self) -> usize {
        self.d
    }

    fn psd_shift(&self) -> f64 {
        self.weights.gamma.iter().cloned().fold(0.0, f64::max)
    }

    fn k(&self) -> usize {
        self.weights.k()
    }

    fn apply(&self, x: &DenseMatrix) -> DenseMatrix {
        assert_eq!(x.shape(), (self.d, self.k()), "iterate shape");
        let mut out = DenseMatrix::zeros(self.d, self.k());
        match &self.ops {
            Operators::Dense(ms) => {
                for (k, m) in ms.iter().enumerate() {
                    out.set_column(k, &(m * x.column(k)));
                }
            }
            Operators::Factored(blocks) => {
                let n = self.n as f64;
                for (l, y) in blocks.iter().enumerate() {
                    let proj = y.transpose() * x; // n_l × K
                    let back = y * proj; // d × K
                    for k in 0..self.k() {
                        let c = self.weights.sample_coefficient(l, k) / n;
                        out.column_mut(k).axpy(c, &back.column(k), 1.0);
                    }
                }
                for k in 0..self.k() {
                    out.column_mut(k).axpy(-self.weights.gamma[k], &x.column(k), 1.0);
                }
            }
        }
        out
    }
}

/// The population problem `max tr(XᵀQΘ²QᵀX diag(a))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationProblem {
    q_truth: StiefelPoint,
    lambdas: Vec<f64>,
    a: Vec<f64>,
}

impl PopulationProblem {
    pub fn new(q_truth: StiefelPoint, lambdas: Vec<f64>, a: Vec<f64>) -> Result<Self> {
        let k = q_truth.k();
        if lambdas.len() != k || a.len() != k {
            return Err(Error::Dimension(format!(
                "population problem of rank {k} with {} λ and {} a",
                lambdas.len(),
                a.len()
            )));
        }
        check_strictly_decreasing("signal strengths λ", &lambdas)?;
        check_strictly_decreasing("population weights a", &a)?;
        Ok(Self { q_truth, lambdas, a })
    }

    pub fn from_model(model: &SignalModel, weights: &WeightTable) -> Result<Self> {
        Self::new(
            model.q_truth().clone(),
            model.lambdas().to_vec(),
            weights.a().to_vec(),
        )
    }

    pub fn q_truth(&self) -> &StiefelPoint {
        &self.q_truth
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    /// `g(Q) = Σ_k λ_k a_k`.
    pub fn optimal_value(&self) -> f64 {
        self.lambdas.iter().zip(&self.a).map(|(l, a)| l * a).sum()
    }

    /// `QΘ²Qᵀ` as a dense matrix.
    pub fn signal_covariance(&self) -> DenseMatrix {
        crate::model::planted_covariance(&self.q_truth, &self.lambdas)
    }

    /// `QΘ²QᵀX`, computed through the K×K product `QᵀX`.
    fn signal_times(&self, x: &DenseMatrix) -> DenseMatrix {
        let q = self.q_truth.matrix();
        let mut qtx = q.transpose() * x;
        for (i, l) in self.lambdas.iter().enumerate() {
            qtx.row_mut(i).scale_mut(*l);
        }
        q * qtx
    }
}

impl GpmObjective for PopulationProblem {
    fn d(&self) -> usize {
        self.q_truth.d()
    }

    fn k(&self) -> usize {
        self.q_truth.k()
    }

    fn apply(&self, x: &DenseMatrix) -> DenseMatrix {
        let mut out = self.signal_times(x);
        for (k, a) in self.a.iter().enumerate() {
            out.column_mut(k).scale_mut(*a);
        }
        out
    }
}

/// The sampling residuals `Δ_k = M_k − a_k QΘ²Qᵀ`.
#[derive(Debug, Clone)]
pub struct ResidualSet {
    deltas: Vec<DenseMatrix>,
}

impl ResidualSet {
    pub fn new(deltas: Vec<DenseMatrix>) -> Result<Self> {
        for d in &deltas {
            numerics::ensure_symmetric(d, numerics::CONSTRUCTION_TOL)?;
        }
        Ok(Self { deltas })
    }

    pub fn deltas(&self) -> &[DenseMatrix] {
        &self.deltas
    }
}

pub fn build_residuals(
    problem: &HppcaProblem,
    population: &PopulationProblem,
) -> Result<ResidualSet> {
    if problem.d() != population.d() || problem.k() != population.k() {
        return Err(Error::Dimension(format!(
            "problem is {}×{} but population is {}×{}",
            problem.d(),
            problem.k(),
            population.d(),
            population.k()
        )));
    }
    let signal = population.signal_covariance();
    let deltas = (0..problem.k())
        .map(|k| {
            let delta = problem.m_matrix(k) - &signal * population.a()[k];
            (&delta + delta.transpose()) * 0.5
        })
        .collect();
    ResidualSet::new(deltas)
}

pub fn eval_f(problem: &HppcaProblem, x: &StiefelPoint) -> f64 {
    problem.value(x)
}

pub fn eval_g(population: &PopulationProblem, x: &StiefelPoint) -> f64 {
    population.value(x)
}

pub fn eval_h(residuals: &ResidualSet, x: &StiefelPoint) -> f64 {
    assert_eq!(residuals.deltas.len(), x.k(), "residual count");
    residuals
        .deltas
        .iter()
        .enumerate()
        .map(|(k, delta)| {
            let col = x.matrix().column(k);
            col.dot(&(delta * col))
        })
        .sum()
}

/// Euclidean gradient `∇g(X) = 2 QΘ²QᵀX diag(a)`.
pub fn euclidean_grad_g(population: &PopulationProblem, x: &StiefelPoint) -> DenseMatrix {
    population.apply(x.matrix()) * 2.0
}

/// Riemannian gradient `(I − ½XXᵀ)(∇g − X∇gᵀX)`.
pub fn riemannian_grad_g(population: &PopulationProblem, x: &StiefelPoint) -> DenseMatrix {
    let xm = x.matrix();
    let g = euclidean_grad_g(population, x);
    let inner = &g - xm * (g.transpose() * xm);
    let half_proj = xm * (xm.transpose() * &inner) * 0.5;
    inner - half_proj
}

/// `A_α(X) = αX + [M_1 x_1, …, M_K x_K]`.
pub fn gpm_map<P: GpmObjective + ?Sized>(obj: &P, x: &StiefelPoint, alpha: f64) -> DenseMatrix {
    obj.apply(x.matrix()) + x.matrix() * alpha
}
