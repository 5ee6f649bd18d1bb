//! The heteroscedastic generative model `y = Q Θ z + η`, with known noise groups.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::manifold::StiefelPoint;
use crate::numerics::{self, DenseMatrix, RngStream};

/// Ground truth subspace and signal strengths `λ_1 > … > λ_K > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalModel {
    q_truth: StiefelPoint,
    lambdas: Vec<f64>,
}

pub(crate) fn check_strictly_decreasing(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Ordering(format!(
            "{name} must be finite and positive, got {values:?}"
        )));
    }
    if let Some(w) = values.windows(2).find(|w| w[0] <= w[1]) {
        return Err(Error::Ordering(format!(
            "{name} must be strictly decreasing, but {} ≤ {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

impl SignalModel {
    pub fn new(q_truth: StiefelPoint, lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.len() != q_truth.k() {
            return Err(Error::Dimension(format!(
                "{} signal strengths for a rank-{} subspace",
                lambdas.len(),
                q_truth.k()
            )));
        }
        check_strictly_decreasing("signal strengths λ", &lambdas)?;
        Ok(Self { q_truth, lambdas })
    }

    pub fn q_truth(&self) -> &StiefelPoint {
        &self.q_truth
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn d(&self) -> usize {
        self.q_truth.d()
    }

    pub fn k(&self) -> usize {
        self.q_truth.k()
    }

    /// `Q Θ² Qᵀ`.
    pub fn signal_covariance(&self) -> DenseMatrix {
        let q = self.q_truth.matrix();
        let mut scaled = q.clone();
        for (j, l) in self.lambdas.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*l);
        }
        let s = scaled * q.transpose();
        (&s + s.transpose()) * 0.5
    }
}

/// Known sample groups `(n_l, v_l)`.
///
/// Variances must be positive and pairwise distinct; their order is free, so
/// a clean small group can precede a large noisy one.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseGroups {
    sizes: Vec<usize>,
    variances: Vec<f64>,
}

impl NoiseGroups {
    pub fn new(sizes: Vec<usize>, variances: Vec<f64>) -> Result<Self> {
        if sizes.is_empty() || sizes.len() != variances.len() {
            return Err(Error::Dimension(format!(
                "{} group sizes vs {} variances",
                sizes.len(),
                variances.len()
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "every group needs at least one sample, got sizes {sizes:?}"
            )));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Ordering(format!(
                "noise variances must be finite and positive, got {variances:?}"
            )));
        }
        for i in 0..variances.len() {
            for j in (i + 1)..variances.len() {
                if variances[i] == variances[j] {
                    return Err(Error::Ordering(format!(
                        "noise variances must be strictly distinct, but v_{} = v_{} = {}",
                        i + 1,
                        j + 1,
                        variances[i]
                    )));
                }
            }
        }
        Ok(Self { sizes, variances })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Total sample count `n`.
    pub fn n(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// `n_l / n`.
    pub fn proportion(&self, l: usize) -> f64 {
        self.sizes[l] as f64 / self.n() as f64
    }

    /// `Σ_l (n_l/n) v_l`.
    pub fn mean_variance(&self) -> f64 {
        (0..self.len())
            .map(|l| self.proportion(l) * self.variances[l])
            .sum()
    }

    /// Same variances and proportions at a different total size; `n` must split evenly.
    pub fn rescaled(&self, factor_num: usize, factor_den: usize) -> Result<Self> {
        let sizes = self
            .sizes
            .iter()
            .map(|&s| {
                let scaled = s * factor_num;
                if !scaled.is_multiple_of(factor_den) {
                    Err(Error::InvalidParameter(format!(
                        "group size {s} does not rescale by {factor_num}/{factor_den}"
                    )))
                } else {
                    Ok(scaled / factor_den)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sizes, self.variances.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum NoiseKind {
    #[default]
    Gaussian,
    /// iid uniform on `[−√(3v), √(3v)]`, matching variance `v`.
    Uniform,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Uniform => "uniform",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(NoiseKind::Gaussian),
            "uniform" | "uniform-sub-gaussian" | "subgaussian" => Ok(NoiseKind::Uniform),
            other => Err(Error::InvalidParameter(format!(
                "unknown noise kind `{other}` (expected gaussian or uniform)"
            ))),
        }
    }
}

/// Sample blocks `Y_l` (d×n_l), one per noise group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    k: usize,
    groups: NoiseGroups,
    blocks: Vec<DenseMatrix>,
}

impl GroupedDataset {
    pub fn new(k: usize, groups: NoiseGroups, blocks: Vec<DenseMatrix>) -> Result<Self> {
        if blocks.len() != groups.len() {
            return Err(Error::Dimension(format!(
                "{} blocks for {} groups",
                blocks.len(),
                groups.len()
            )));
        }
        let d = blocks[0].nrows();
        if k == 0 || d <= k {
            return Err(Error::Dimension(format!("need d > K ≥ 1, got d = {d}, K = {k}")));
        }
        for (l, (b, &n_l)) in blocks.iter().zip(groups.sizes()).enumerate() {
            if b.nrows() != d || b.ncols() != n_l {
                return Err(Error::Dimension(format!(
                    "block {l} is {}×{}, expected {d}×{n_l}",
                    b.nrows(),
                    b.ncols()
                )));
            }
            numerics::ensure_finite(b, "dataset block")?;
        }
        Ok(Self { k, groups, blocks })
    }

    pub fn d(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.groups.n()
    }

    pub fn groups(&self) -> &NoiseGroups {
        &self.groups
    }

    pub fn blocks(&self) -> &[DenseMatrix] {
        &self.blocks
    }

    /// `Y_l Y_lᵀ` for every group.
    pub fn block_grams(&self) -> Vec<DenseMatrix> {
        self.blocks
            .iter()
            .map(|y| {
                let g = y * y.transpose();
                (&g + g.transpose()) * 0.5
            })
            .collect()
    }

    /// `C = (1/n) Σ_l Y_l Y_lᵀ`.
    pub fn sample_covariance(&self) -> DenseMatrix {
        let n = self.n() as f64;
        let d = self.d();
        self.block_grams()
            .into_iter()
            .fold(DenseMatrix::zeros(d, d), |acc, g| acc + g)
            / n
    }
}

/// Draw every block: each column is `Q diag(√λ) z + η`.
pub fn sample_dataset(
    model: &SignalModel,
    groups: &NoiseGroups,
    kind: NoiseKind,
    rng: &RngStream,
) -> Result<GroupedDataset> {
    let (d, k) = (model.d(), model.k());
    let mut factor = model.q_truth().matrix().clone();
    for (j, l) in model.lambdas().iter().enumerate() {
        factor.column_mut(j).scale_mut(l.sqrt());
    }
    let mut gen = rng.generator();
    let blocks = groups
        .sizes()
        .iter()
        .zip(groups.variances())
        .map(|(&n_l, &v_l)| {
            let z = numerics::gaussian_from(&mut gen, k, n_l);
            let noise = match kind {
                NoiseKind::Gaussian => numerics::gaussian_from(&mut gen, d, n_l) * v_l.sqrt(),
                NoiseKind::Uniform => numerics::uniform_from(&mut gen, d, n_l, (3.0 * v_l).sqrt()),
            };
            &factor * z + noise
        })
        .collect();
    GroupedDataset::new(k, groups.clone(), blocks)
}

/// `E[C] = QΘ²Qᵀ + (Σ_l (n_l/n) v_l) I`.
pub fn expected_covariance(model: &SignalModel, groups: &NoiseGroups) -> DenseMatrix {
    let d = model.d();
    model.signal_covariance() + DenseMatrix::identity(d, d) * groups.mean_variance()
}

/// `E[C_l] = (n_l/n)(QΘ²Qᵀ + v_l I)` with `C_l = (1/n) Y_l Y_lᵀ`; `l` is zero-based.
pub fn expected_group_covariance(
    model: &SignalModel,
    groups: &NoiseGroups,
    l: usize,
) -> Result<DenseMatrix> {
    if l >= groups.len() {
        return Err(Error::InvalidParameter(format!(
            "group index {l} out of range for {} groups",
            groups.len()
        )));
    }
    let d = model.d();
    let shifted =
        model.signal_covariance() + DenseMatrix::identity(d, d) * groups.variances()[l];
    Ok(shifted * groups.proportion(l))
}

/// Signal-only covariance `Q diag(λ) Qᵀ` from an explicit spectrum, used in tests and docs.
pub fn planted_covariance(q: &StiefelPoint, spectrum: &[f64]) -> DenseMatrix {
    let d = DenseMatrix::from_diagonal(&DVector::from_column_slice(spectrum));
    q.matrix() * d * q.matrix().transpose()
}
