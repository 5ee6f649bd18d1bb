//! Points on the Stiefel manifold `St(d, K)` and the sign-invariant distance.

use crate::error::{Error, Result};
use crate::numerics::{self, DenseMatrix, RngStream};

/// Orthonormality tolerance enforced on every [`StiefelPoint`].
pub const STIEFEL_TOL: f64 = 1e-8;

/// σ_K at or below this makes the polar factor non-unique.
pub const NONUNIQUE_SIGMA: f64 = 1e-12;

/// A d×K matrix with orthonormal columns, d > K.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint {
    x: DenseMatrix,
}

impl StiefelPoint {
    pub fn new(x: DenseMatrix) -> Result<Self> {
        let (d, k) = x.shape();
        if k == 0 || d <= k {
            return Err(Error::Dimension(format!(
                "Stiefel point needs d > K ≥ 1, got {d}×{k}"
            )));
        }
        numerics::ensure_finite(&x, "Stiefel point")?;
        let deviation = numerics::orthonormality_deviation(&x);
        if deviation > STIEFEL_TOL {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(Self { x })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.x
    }

    pub fn d(&self) -> usize {
        self.x.nrows()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    /// `X · diag(q)`.
    pub fn with_signs(&self, q: &SignVector) -> Self {
        assert_eq!(q.len(), self.k(), "sign vector length");
        let mut x = self.x.clone();
        for (j, s) in q.iter().enumerate() {
            if s < 0 {
                x.column_mut(j).neg_mut();
            }
        }
        Self { x }
    }
}

/// A vector in `{+1, −1}^K`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignVector(Vec<i8>);

impl SignVector {
    pub fn new(signs: Vec<i8>) -> Result<Self> {
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidParameter(format!(
                "sign vector entries must be ±1, got {signs:?}"
            )));
        }
        Ok(Self(signs))
    }

    pub fn ones(k: usize) -> Self {
        Self(vec![1; k])
    }

    /// All `2^k` sign vectors, bit j of the index set meaning column j is negated.
    pub fn all(k: usize) -> impl Iterator<Item = SignVector> {
        (0..1u32 << k).map(move |mask| {
            SignVector((0..k).map(|j| if mask >> j & 1 == 1 { -1 } else { 1 }).collect())
        })
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = i8> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }
}

/// Result of projecting onto the Stiefel manifold.
#[derive(Debug, Clone)]
pub struct Projection {
    pub point: StiefelPoint,
    /// σ_K of the input was ≤ [`NONUNIQUE_SIGMA`]; `point` is one of several maximizers.
    pub nonunique: bool,
    pub sigma_min: f64,
}

/// Nearest point of `St(d, K)` to `m`: the polar factor `U Vᵀ` of its thin SVD.
pub fn project_stiefel(m: &DenseMatrix) -> Result<Projection> {
    let svd = numerics::thin_svd(m)?;
    let sigma_min = svd.sigma_min();
    let point = StiefelPoint::new(svd.polar())?;
    Ok(Projection {
        point,
        nonunique: sigma_min <= NONUNIQUE_SIGMA,
        sigma_min,
    })
}

fn check_same_shape(x: &StiefelPoint, q: &StiefelPoint) {
    assert_eq!(
        x.x.shape(),
        q.x.shape(),
        "Stiefel points must have matching shapes"
    );
}

/// Per-column `x_kᵀ q_k`.
fn column_overlaps(x: &StiefelPoint, q_ref: &StiefelPoint) -> Vec<f64> {
    check_same_shape(x, q_ref);
    (0..x.k())
        .map(|j| x.x.column(j).dot(&q_ref.x.column(j)))
        .collect()
}

/// The sign vector minimizing `‖x − q_ref · diag(q)‖_F`; ties resolve to +1.
pub fn sign_align(x: &StiefelPoint, q_ref: &StiefelPoint) -> SignVector {
    SignVector(
        column_overlaps(x, q_ref)
            .into_iter()
            .map(|c| if c < 0.0 { -1 } else { 1 })
            .collect(),
    )
}

/// `d_F(x, q_ref) = min_q ‖x − q_ref · diag(q)‖_F`.
pub fn dist_f(x: &StiefelPoint, q_ref: &StiefelPoint) -> f64 {
    let q = sign_align(x, q_ref);
    (x.matrix() - q_ref.with_signs(&q).matrix()).norm()
}

/// Closed form `√(2(K − Σ_k |x_kᵀ q_k|))`, clamped at zero.
pub fn dist_f_trace(x: &StiefelPoint, q_ref: &StiefelPoint) -> f64 {
    let overlap: f64 = column_overlaps(x, q_ref).iter().map(|c| c.abs()).sum();
    (2.0 * (x.k() as f64 - overlap)).max(0.0).sqrt()
}

/// Subspace sin-Θ distance `‖XXᵀ − QQᵀ‖_F / √2`, invariant to any rotation of the columns.
pub fn sin_theta_distance(x: &StiefelPoint, q_ref: &StiefelPoint) -> f64 {
    check_same_shape(x, q_ref);
    let cross = x.matrix().transpose() * q_ref.matrix();
    (x.k() as f64 - cross.norm_squared()).max(0.0).sqrt()
}

/// A Haar-distributed point: the polar factor of a standard Gaussian d×K matrix.
pub fn random_stiefel(d: usize, k: usize, rng: &RngStream) -> Result<StiefelPoint> {
    if k == 0 || d <= k {
        return Err(Error::Dimension(format!(
            "random Stiefel point needs d > K ≥ 1, got d = {d}, K = {k}"
        )));
    }
    let g = numerics::random_gaussian(d, k, rng)?;
    Ok(project_stiefel(&g)?.point)
}

/// Tangent-space projection `Z − X sym(XᵀZ)`.
pub fn tangent_project(x: &StiefelPoint, z: &DenseMatrix) -> DenseMatrix {
    let xtz = x.matrix().transpose() * z;
    let sym = (&xtz + xtz.transpose()) * 0.5;
    z - x.matrix() * sym
}
