//! Dense linear-algebra kernels and seeded random streams.
//!
//! Matrices are plain [`nalgebra::DMatrix<f64>`]. The decompositions here are
//! thin wrappers that add the contracts the rest of the crate relies on:
//! singular values sorted nonincreasing, orthonormal factors, finite inputs.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;

/// Tolerance for exact constructions (orthonormality, reconstruction).
pub const CONSTRUCTION_TOL: f64 = 1e-10;
/// Tolerance for iterative kernels.
pub const ITERATIVE_TOL: f64 = 1e-8;

pub fn ensure_finite(m: &DenseMatrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Largest entrywise asymmetry `|m_ij − m_ji|`, relative to `max(1, max |m_ij|)`.
pub fn relative_asymmetry(m: &DenseMatrix) -> f64 {
    let n = m.nrows();
    let scale = m.amax().max(1.0);
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

pub fn ensure_symmetric(m: &DenseMatrix, tol: f64) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let asymmetry = relative_asymmetry(m);
    if asymmetry > tol {
        return Err(Error::NotSymmetric { asymmetry, tol });
    }
    Ok(())
}

/// `‖XᵀX − I‖_F` for a tall matrix.
pub fn orthonormality_deviation(x: &DenseMatrix) -> f64 {
    let gram = x.transpose() * x;
    (gram - DenseMatrix::identity(x.ncols(), x.ncols())).norm()
}

/// Thin singular value decomposition `m = u · diag(sigma) · vᵀ`.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    /// d×K, orthonormal columns.
    pub u: DenseMatrix,
    /// Nonincreasing, nonnegative.
    pub sigma: Vec<f64>,
    /// K×K orthogonal.
    pub v: DenseMatrix,
}

impl ThinSvd {
    pub fn sigma_min(&self) -> f64 {
        self.sigma.last().copied().unwrap_or(0.0)
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0)
    }

    pub fn nuclear_norm(&self) -> f64 {
        self.sigma.iter().sum()
    }

    /// `u · diag(sigma) · vᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }

    /// The polar factor `u · vᵀ`.
    pub fn polar(&self) -> DenseMatrix {
        &self.u * self.v.transpose()
    }
}

pub fn thin_svd(m: &DenseMatrix) -> Result<ThinSvd> {
    let (d, k) = m.shape();
    if d < k || k == 0 {
        return Err(Error::Dimension(format!(
            "thin SVD needs rows ≥ cols ≥ 1, got {d}×{k}"
        )));
    }
    ensure_finite(m, "thin_svd input")?;

    let svd = m.clone().svd(true, true);
    let u_raw = svd.u.expect("left singular vectors requested");
    let vt_raw = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut u = DenseMatrix::zeros(d, k);
    let mut v = DenseMatrix::zeros(k, k);
    let mut sigma = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &u_raw.column(src));
        v.set_column(dst, &vt_raw.row(src).transpose());
        sigma.push(svd.singular_values[src].max(0.0));
    }
    Ok(ThinSvd { u, sigma, v })
}

/// Leading eigenpairs of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct TopEigen {
    /// Nonincreasing.
    pub values: Vec<f64>,
    /// d×k, orthonormal columns matching `values`.
    pub vectors: DenseMatrix,
}

pub fn sym_eig_topk(s: &DenseMatrix, k: usize) -> Result<TopEigen> {
    ensure_finite(s, "sym_eig_topk input")?;
    ensure_symmetric(s, CONSTRUCTION_TOL)?;
    let d = s.nrows();
    if k == 0 || k > d {
        return Err(Error::InvalidParameter(format!(
            "requested {k} eigenpairs of a {d}×{d} matrix"
        )));
    }
    let sym = (s + s.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut vectors = DenseMatrix::zeros(d, k);
    let mut values = Vec::with_capacity(k);
    for (dst, &src) in order.iter().take(k).enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
        values.push(eig.eigenvalues[src]);
    }
    Ok(TopEigen { values, vectors })
}

#[derive(Debug, Clone, Copy)]
pub struct PowerOptions {
    /// Relative accuracy requested for the top eigenvalue.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            tol: ITERATIVE_TOL,
            max_iters: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

const POWER_START: RngStream = RngStream::new(0x9e37_79b9_7f4a_7c15, 0);

/// Power iteration for the top eigenvalue of a symmetric PSD matrix.
///
/// Stops once the Rayleigh-quotient increment plus a geometric extrapolation
/// of the remaining tail falls under `tol · λ`. Non-convergence is reported in
/// the returned estimate, not as an error.
pub fn power_iteration(s: &DenseMatrix, opts: PowerOptions) -> Result<PowerEstimate> {
    ensure_finite(s, "power_iteration input")?;
    ensure_symmetric(s, CONSTRUCTION_TOL)?;
    let n = s.nrows();
    if n == 0 {
        return Err(Error::Dimension("empty matrix".into()));
    }

    let mut rng = POWER_START.generator();
    let mut v = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
    v /= v.norm();

    let mut prev: Option<f64> = None;
    let mut prev_delta: Option<f64> = None;
    let mut lambda = 0.0;
    for it in 1..=opts.max_iters {
        let w = s * &v;
        lambda = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(PowerEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            });
        }
        v = w / norm;

        if let Some(p) = prev {
            let delta = (lambda - p).abs();
            let tail = match prev_delta {
                _ if delta == 0.0 => 0.0,
                Some(pd) if pd > 0.0 => {
                    let r = (delta / pd).min(0.999);
                    delta * r / (1.0 - r)
                }
                _ => f64::INFINITY,
            };
            if delta + tail <= opts.tol * lambda.abs() {
                return Ok(PowerEstimate {
                    value: lambda,
                    iterations: it,
                    converged: true,
                });
            }
            prev_delta = Some(delta);
        }
        prev = Some(lambda);
    }
    Ok(PowerEstimate {
        value: lambda,
        iterations: opts.max_iters,
        converged: false,
    })
}

/// Operator norm of a symmetric PSD matrix; errors if power iteration stalls.
pub fn operator_norm(s: &DenseMatrix, tol: f64) -> Result<f64> {
    let est = power_iteration(
        s,
        PowerOptions {
            tol,
            ..PowerOptions::default()
        },
    )?;
    if est.converged {
        Ok(est.value.max(0.0))
    } else {
        Err(Error::NotConverged {
            iterations: est.iterations,
            estimate: est.value,
        })
    }
}

/// Operator norm of a symmetric, possibly indefinite, matrix: `√‖s²‖`.
pub fn symmetric_operator_norm(s: &DenseMatrix, tol: f64) -> Result<f64> {
    ensure_symmetric(s, CONSTRUCTION_TOL)?;
    let sq = s * s;
    let sq = (&sq + sq.transpose()) * 0.5;
    Ok(operator_norm(&sq, tol)?.sqrt())
}

/// A reproducible random stream: ChaCha20 keyed by `seed`, on stream `stream`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub const fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Sibling stream for a tagged purpose and index, e.g. one per trial.
    pub fn substream(&self, purpose: u16, index: u64) -> Self {
        let tagged = ((purpose as u64) << 48) ^ (index & 0x0000_ffff_ffff_ffff);
        Self {
            seed: self.seed,
            stream: self.stream.wrapping_mul(0x0000_0100_0000_01b3) ^ tagged,
        }
    }

    pub fn generator(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

fn check_dims(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension(format!(
            "random matrix needs positive dimensions, got {rows}×{cols}"
        )));
    }
    Ok(())
}

/// Column-major fill of iid standard normals from `rng`.
pub(crate) fn gaussian_from(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> DenseMatrix {
    let data: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    DenseMatrix::from_vec(rows, cols, data)
}

pub(crate) fn uniform_from(
    rng: &mut ChaCha20Rng,
    rows: usize,
    cols: usize,
    half_width: f64,
) -> DenseMatrix {
    let dist = Uniform::new_inclusive(-half_width, half_width).expect("finite positive width");
    let data: Vec<f64> = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    DenseMatrix::from_vec(rows, cols, data)
}

pub fn random_gaussian(rows: usize, cols: usize, rng: &RngStream) -> Result<DenseMatrix> {
    check_dims(rows, cols)?;
    Ok(gaussian_from(&mut rng.generator(), rows, cols))
}

pub fn random_uniform_sym(
    rows: usize,
    cols: usize,
    half_width: f64,
    rng: &RngStream,
) -> Result<DenseMatrix> {
    check_dims(rows, cols)?;
    if !(half_width > 0.0 && half_width.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "uniform half width must be positive, got {half_width}"
        )));
    }
    Ok(uniform_from(&mut rng.generator(), rows, cols, half_width))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Cyclic Jacobi eigenvalue sweeps; independent of the nalgebra path.
    fn jacobi_eigenvalues(s: &DenseMatrix) -> Vec<f64> {
        let n = s.nrows();
        let mut a = s.clone();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)].powi(2))
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let sn = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - sn * akq;
                        a[(k, q)] = sn * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - sn * aqk;
                        a[(q, k)] = sn * apk + c * aqk;
                    }
                }
            }
        }
        let mut vals: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        vals.sort_by(|x, y| y.total_cmp(x));
        vals
    }

    fn seeded(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        random_gaussian(rows, cols, &RngStream::new(seed, 7)).unwrap()
    }

    fn random_psd(n: usize, seed: u64) -> DenseMatrix {
        let g = seeded(n, n, seed);
        &g * g.transpose()
    }

    #[test]
    fn svd_of_orthonormal_columns_has_unit_singular_values() {
        let q = thin_svd(&seeded(3, 2, 1)).unwrap().polar();
        let svd = thin_svd(&q).unwrap();
        assert!((svd.sigma[0] - 1.0).abs() < 1e-12);
        assert!((svd.sigma[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn svd_of_embedded_diagonal() {
        let m = DenseMatrix::from_row_slice(3, 2, &[3.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let svd = thin_svd(&m).unwrap();
        assert_eq!(svd.sigma.len(), 2);
        assert!((svd.sigma[0] - 3.0).abs() < 1e-14);
        assert!((svd.sigma[1] - 1.0).abs() < 1e-14);
        // u spans e1, e2 up to sign
        assert!((svd.u[(0, 0)].abs() - 1.0).abs() < 1e-14);
        assert!((svd.u[(1, 1)].abs() - 1.0).abs() < 1e-14);
        assert!(svd.u[(2, 0)].abs() < 1e-14 && svd.u[(2, 1)].abs() < 1e-14);
    }

    #[test]
    fn svd_matches_gram_eigen_oracle() {
        let m = seeded(6, 3, 11);
        let svd = thin_svd(&m).unwrap();
        let oracle = jacobi_eigenvalues(&(m.transpose() * &m));
        for (s, l) in svd.sigma.iter().zip(&oracle) {
            assert!((s - l.sqrt()).abs() < 1e-9, "{s} vs {}", l.sqrt());
        }
    }

    #[test]
    fn svd_rejects_wide_and_non_finite() {
        assert!(matches!(
            thin_svd(&DenseMatrix::zeros(2, 3)),
            Err(Error::Dimension(_))
        ));
        let mut m = seeded(4, 2, 3);
        m[(1, 1)] = f64::NAN;
        assert!(matches!(thin_svd(&m), Err(Error::NonFinite(_))));
    }

    #[test]
    fn svd_of_rank_deficient_input_keeps_orthonormal_factor() {
        let mut m = seeded(5, 2, 4);
        let c0 = m.column(0).clone_owned();
        m.set_column(1, &(c0 * 2.0));
        let svd = thin_svd(&m).unwrap();
        assert!(svd.sigma_min() < 1e-12);
        assert!(orthonormality_deviation(&svd.u) < 1e-10);
    }

    #[test]
    fn eig_identity_and_planted_spectrum() {
        let top = sym_eig_topk(&DenseMatrix::identity(4, 4), 2).unwrap();
        assert_eq!(top.values.len(), 2);
        assert!(top.values.iter().all(|v| (v - 1.0).abs() < 1e-14));

        let q = thin_svd(&seeded(7, 3, 5)).unwrap().polar();
        let s = &q
            * DenseMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 3.5, 2.0]))
            * q.transpose();
        let top = sym_eig_topk(&s, 3).unwrap();
        for (v, want) in top.values.iter().zip([5.0, 3.5, 2.0]) {
            assert!((v - want).abs() < 1e-9);
        }
        for k in 0..3 {
            let dot = top.vectors.column(k).dot(&q.column(k));
            assert!((dot.abs() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn eig_matches_jacobi_oracle() {
        let g = seeded(8, 8, 9);
        let s = (&g + g.transpose()) * 0.5;
        let top = sym_eig_topk(&s, 3).unwrap();
        let oracle = jacobi_eigenvalues(&s);
        for (v, o) in top.values.iter().zip(&oracle) {
            assert!((v - o).abs() < 1e-9, "{v} vs {o}");
        }
        let residual = &s * &top.vectors
            - &top.vectors * DenseMatrix::from_diagonal(&DVector::from_vec(top.values.clone()));
        assert!(residual.norm() < 1e-8);
        assert!(orthonormality_deviation(&top.vectors) < 1e-10);
    }

    #[test]
    fn eig_rejects_bad_input() {
        let mut s = DenseMatrix::identity(3, 3);
        s[(0, 1)] = 1e-3;
        assert!(matches!(
            sym_eig_topk(&s, 1),
            Err(Error::NotSymmetric { .. })
        ));
        assert!(sym_eig_topk(&DenseMatrix::identity(3, 3), 0).is_err());
        assert!(sym_eig_topk(&DenseMatrix::identity(3, 3), 4).is_err());
    }

    #[test]
    fn operator_norm_trivial_cases() {
        assert!((operator_norm(&DenseMatrix::identity(5, 5), 1e-10).unwrap() - 1.0).abs() < 1e-12);
        let d = DenseMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 0.0]));
        assert!((operator_norm(&d, 1e-10).unwrap() - 3.0).abs() < 1e-9);
        assert_eq!(operator_norm(&DenseMatrix::zeros(3, 3), 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn operator_norm_matches_eigen_on_many_psd_instances() {
        for seed in 0..100 {
            let s = random_psd(10, 1000 + seed);
            let top = sym_eig_topk(&s, 1).unwrap().values[0];
            let pw = operator_norm(&s, 1e-10).unwrap();
            assert!((pw - top).abs() <= 1e-8 * top, "seed {seed}: {pw} vs {top}");
        }
    }

    #[test]
    fn operator_norm_flags_non_convergence() {
        let s = random_psd(10, 3);
        let err = power_iteration(
            &s,
            PowerOptions {
                tol: 1e-15,
                max_iters: 2,
            },
        )
        .unwrap();
        assert!(!err.converged);
        assert!(matches!(
            operator_norm(&DenseMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]), 1e-8),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn indefinite_norm_via_square() {
        let d = DenseMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -2.0, 1.0]));
        assert!((symmetric_operator_norm(&d, 1e-12).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_stream_is_deterministic_and_standard() {
        let s = RngStream::new(0, 0);
        assert_eq!(random_gaussian(2, 2, &s).unwrap(), random_gaussian(2, 2, &s).unwrap());
        assert_ne!(
            random_gaussian(2, 2, &s).unwrap(),
            random_gaussian(2, 2, &RngStream::new(0, 1)).unwrap()
        );

        let x = random_gaussian(1000, 1, &RngStream::new(42, 3)).unwrap();
        let mean = x.mean();
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 999.0;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((var - 1.0).abs() < 0.15, "var {var}");

        assert!(random_gaussian(3, 0, &s).is_err());
    }

    #[test]
    fn uniform_stream_support_and_variance() {
        let hw = 3f64.sqrt();
        let s = RngStream::new(5, 2);
        let x = random_uniform_sym(10_000, 1, hw, &s).unwrap();
        assert!(x.iter().all(|v| v.abs() <= hw));
        let mean = x.mean();
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9999.0;
        assert!((var - 1.0).abs() < 0.1, "var {var}");
        assert_eq!(x, random_uniform_sym(10_000, 1, hw, &s).unwrap());
        assert!(random_uniform_sym(2, 2, 0.0, &s).is_err());
        assert!(random_uniform_sym(2, 2, -1.0, &s).is_err());
    }

    #[test]
    fn substreams_are_distinct() {
        let base = RngStream::new(1, 0);
        let a = base.substream(1, 0);
        let b = base.substream(1, 1);
        let c = base.substream(2, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, base.substream(1, 0));
    }
}
