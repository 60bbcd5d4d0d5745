//! Gaussian-kernel Gram machinery: bandwidth selection by the median
//! heuristic, Gram construction, a regularized symmetric pseudo-inverse,
//! and centered kernel-ridge regression.

use crate::error::{Error, Result};
use crate::linalg;
use nalgebra::{DMatrix, DVector};

/// A dense set of points in R^dim, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    data: Vec<f64>,
    dim: usize,
    n: usize,
}

impl PointSet {
    /// Builds a point set from `n` rows of length `dim` laid out row-major.
    pub fn from_flat(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            if !data.is_empty() {
                return Err(Error::DimensionMismatch {
                    left: data.len(),
                    right: 0,
                });
            }
            // Zero-dimensional points are legal (no covariates); the row
            // count must be supplied via `with_n`.
            return Ok(Self { data, dim: 0, n: 0 });
        }
        if data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                left: data.len(),
                right: dim,
            });
        }
        let n = data.len() / dim;
        Ok(Self { data, dim, n })
    }

    /// A set of `n` zero-dimensional points.
    pub fn empty_dim(n: usize) -> Self {
        Self {
            data: Vec::new(),
            dim: 0,
            n,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Selects the given rows into a new point set.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            data,
            dim: self.dim,
            n: idx.len(),
        }
    }

    /// Prepends a scalar column (used to form (y, x) points).
    pub fn with_prepended(&self, col: &[f64]) -> Self {
        assert_eq!(col.len(), self.n);
        let dim = self.dim + 1;
        let mut data = Vec::with_capacity(self.n * dim);
        for i in 0..self.n {
            data.push(col[i]);
            data.extend_from_slice(self.row(i));
        }
        Self {
            data,
            dim,
            n: self.n,
        }
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n).map(move |i| self.row(i))
    }
}

/// Gaussian kernel configuration: k(u, v) = exp(-||u - v||^2 / kappa).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub bandwidth: f64,
}

impl KernelConfig {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "kernel bandwidth must be finite and positive, got {bandwidth}"
            )));
        }
        Ok(Self { bandwidth })
    }
}

fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

/// Evaluates the Gaussian kernel at a pair of points.
pub fn kernel_eval(u: &[f64], v: &[f64], config: &KernelConfig) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    Ok((-sq_dist(u, v) / config.bandwidth).exp())
}

#[inline]
pub(crate) fn kernel_eval_unchecked(u: &[f64], v: &[f64], config: &KernelConfig) -> f64 {
    (-sq_dist(u, v) / config.bandwidth).exp()
}

/// A kernel Gram matrix between two point sets.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub entries: DMatrix<f64>,
    pub config: KernelConfig,
}

/// Builds the Gram matrix with `entries[(i, j)] = k(rows[i], cols[j])`.
pub fn gram(rows: &PointSet, cols: &PointSet, config: &KernelConfig) -> Result<GramMatrix> {
    if rows.dim() != cols.dim() {
        return Err(Error::DimensionMismatch {
            left: rows.dim(),
            right: cols.dim(),
        });
    }
    let mut entries = DMatrix::zeros(rows.n(), cols.n());
    for j in 0..cols.n() {
        let cj = cols.row(j);
        for i in 0..rows.n() {
            entries[(i, j)] = kernel_eval_unchecked(rows.row(i), cj, config);
        }
    }
    Ok(GramMatrix {
        entries,
        config: *config,
    })
}

/// Bandwidth by the median heuristic: the median of all pairwise squared
/// distances. Falls back to the smallest positive squared distance when the
/// median is zero, and to 1.0 when every pair coincides.
pub fn median_heuristic(points: &PointSet) -> Result<KernelConfig> {
    let n = points.n();
    if n < 2 {
        return Err(Error::TooFewPoints { need: 2, got: n });
    }
    let mut d2 = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d2.push(sq_dist(points.row(i), points.row(j)));
        }
    }
    d2.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = d2.len();
    let median = if m % 2 == 1 {
        d2[m / 2]
    } else {
        0.5 * (d2[m / 2 - 1] + d2[m / 2])
    };
    let kappa = if median > 0.0 {
        median
    } else {
        d2.iter().copied().find(|&v| v > 0.0).unwrap_or(1.0)
    };
    KernelConfig::new(kappa)
}

/// Eigendecomposition-backed pseudo-inverse of a symmetric matrix.
/// Eigenvalues with magnitude below `rel_tol * max |eigenvalue|` are
/// treated as zero.
#[derive(Debug, Clone)]
pub struct SymPinv {
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
    retained: Vec<bool>,
}

impl SymPinv {
    pub fn new(m: &DMatrix<f64>, rel_tol: f64) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { op: "pinv_apply" });
        }
        let (eigvals, eigvecs) = linalg::sym_eigen(m);
        let max_abs = eigvals.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
        let cutoff = rel_tol * max_abs;
        let retained = eigvals.iter().map(|&v| v.abs() > cutoff).collect();
        Ok(Self {
            eigvals,
            eigvecs,
            retained,
        })
    }

    pub fn n_retained(&self) -> usize {
        self.retained.iter().filter(|&&r| r).count()
    }

    /// Applies the pseudo-inverse to each column of `b`.
    pub fn apply(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut coef = linalg::gemm(&self.eigvecs, true, b, false);
        for (i, &keep) in self.retained.iter().enumerate() {
            let scale = if keep { 1.0 / self.eigvals[i] } else { 0.0 };
            coef.row_mut(i).scale_mut(scale);
        }
        linalg::matmul(&self.eigvecs, &coef)
    }

    /// Projects each column of `b` onto the retained eigenspace.
    pub fn project(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut coef = linalg::gemm(&self.eigvecs, true, b, false);
        for (i, &keep) in self.retained.iter().enumerate() {
            if !keep {
                coef.row_mut(i).scale_mut(0.0);
            }
        }
        linalg::matmul(&self.eigvecs, &coef)
    }
}

/// Default eigenvalue cutoff for pseudo-inverse applications.
pub const PINV_REL_TOL: f64 = 1e-8;

/// Applies the Moore–Penrose pseudo-inverse of a symmetric matrix to `b`.
pub fn pinv_apply(m: &DMatrix<f64>, b: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    Ok(SymPinv::new(m, rel_tol)?.apply(b))
}

/// Centered kernel-ridge regressions sharing one factorization: predictions
/// are `mean_t + k(x)' (K + M*lambda*I)^{-1} (t - mean_t)` per target `t`.
/// Centering makes the fit exact for constant targets (and collapses to the
/// sample mean when all covariates coincide).
#[derive(Debug, Clone)]
pub struct KernelRidgeSet {
    xs: PointSet,
    config: KernelConfig,
    means: Vec<f64>,
    /// One coefficient column per target.
    alphas: DMatrix<f64>,
}

impl KernelRidgeSet {
    /// Fits one ridge regression per target column. `lambda` multiplies the
    /// sample size inside the regularizer, i.e. the solve is
    /// `(K + M*lambda*I) alpha = t - mean_t`.
    pub fn fit(xs: PointSet, targets: &[&[f64]], config: KernelConfig, lambda: f64) -> Result<Self> {
        let m = xs.n();
        if m == 0 {
            return Err(Error::EmptySample { op: "kernel_ridge" });
        }
        for t in targets {
            if t.len() != m {
                return Err(Error::LengthMismatch {
                    column: "ridge target",
                    expected: m,
                    got: t.len(),
                });
            }
        }
        let mut k = gram(&xs, &xs, &config)?.entries;
        let ridge = (m as f64) * lambda;
        for i in 0..m {
            k[(i, i)] += ridge;
        }
        let mut rhs = DMatrix::zeros(m, targets.len());
        let mut means = Vec::with_capacity(targets.len());
        for (j, t) in targets.iter().enumerate() {
            let mean = t.iter().sum::<f64>() / m as f64;
            means.push(mean);
            for i in 0..m {
                rhs[(i, j)] = t[i] - mean;
            }
        }
        let alphas = match linalg::chol_solve(&k, &rhs) {
            Some(a) => a,
            None => pinv_apply(&k, &rhs, PINV_REL_TOL)?,
        };
        Ok(Self {
            xs,
            config,
            means,
            alphas,
        })
    }

    pub fn n_targets(&self) -> usize {
        self.means.len()
    }

    /// Prediction of target `j` at a new point.
    pub fn predict(&self, j: usize, x: &[f64]) -> f64 {
        let mut acc = self.means[j];
        for (i, xi) in self.xs.iter_rows().enumerate() {
            acc += self.alphas[(i, j)] * kernel_eval_unchecked(x, xi, &self.config);
        }
        acc
    }

    /// Predictions of every target at a new point.
    pub fn predict_all(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.means.clone();
        for (i, xi) in self.xs.iter_rows().enumerate() {
            let k = kernel_eval_unchecked(x, xi, &self.config);
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.alphas[(i, j)] * k;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, dim: usize, seed: u64) -> PointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        PointSet::from_flat(data, dim).unwrap()
    }

    #[test]
    fn kernel_eval_zero_distance_is_one() {
        let cfg = KernelConfig::new(3.7).unwrap();
        let u = [1.0, -2.0];
        assert_abs_diff_eq!(kernel_eval(&u, &u, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn kernel_eval_direct_formula() {
        // ||0 - 2||^2 / 4 = 1 -> e^{-1}.
        let cfg = KernelConfig::new(4.0).unwrap();
        let v = kernel_eval(&[0.0], &[2.0], &cfg).unwrap();
        assert_abs_diff_eq!(v, (-1.0f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.367879, epsilon = 1e-6);
    }

    #[test]
    fn kernel_eval_symmetric() {
        let cfg = KernelConfig::new(1.3).unwrap();
        let a = random_points(20, 3, 1);
        let b = random_points(20, 3, 2);
        for i in 0..20 {
            let uv = kernel_eval(a.row(i), b.row(i), &cfg).unwrap();
            let vu = kernel_eval(b.row(i), a.row(i), &cfg).unwrap();
            assert_eq!(uv, vu);
        }
    }

    #[test]
    fn kernel_eval_dimension_mismatch() {
        let cfg = KernelConfig::new(1.0).unwrap();
        assert!(matches!(
            kernel_eval(&[0.0], &[0.0, 1.0], &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gram_unit_diagonal_and_symmetry() {
        let cfg = KernelConfig::new(2.0).unwrap();
        let s = random_points(25, 2, 3);
        let g = gram(&s, &s, &cfg).unwrap().entries;
        for i in 0..25 {
            assert_abs_diff_eq!(g[(i, i)], 1.0);
            for j in 0..25 {
                assert_eq!(g[(i, j)], g[(j, i)]);
                assert!(g[(i, j)] > 0.0 && g[(i, j)] <= 1.0);
            }
        }
    }

    #[test]
    fn gram_is_positive_semidefinite() {
        // Smallest eigenvalue >= -1e-8 * m for random point sets.
        for seed in 0..5u64 {
            let m = 20;
            let s = random_points(m, 3, 10 + seed);
            let cfg = median_heuristic(&s).unwrap();
            let g = gram(&s, &s, &cfg).unwrap().entries;
            let (w, _) = linalg::sym_eigen(&g);
            assert!(w[0] >= -1e-8 * m as f64, "min eig {} at seed {seed}", w[0]);
        }
    }

    #[test]
    fn gram_single_identical_point() {
        let cfg = KernelConfig::new(1.0).unwrap();
        let s = PointSet::from_flat(vec![5.0], 1).unwrap();
        let g = gram(&s, &s, &cfg).unwrap().entries;
        assert_eq!(g.nrows(), 1);
        assert_abs_diff_eq!(g[(0, 0)], 1.0);
    }

    #[test]
    fn median_heuristic_enumerated() {
        // Points {0, 1, 2}: squared distances {1, 1, 4}, median 1.
        let s = PointSet::from_flat(vec![0.0, 1.0, 2.0], 1).unwrap();
        assert_abs_diff_eq!(median_heuristic(&s).unwrap().bandwidth, 1.0);
    }

    #[test]
    fn median_heuristic_scales_quadratically() {
        let s = random_points(15, 2, 4);
        let base = median_heuristic(&s).unwrap().bandwidth;
        let scaled_data: Vec<f64> = s.iter_rows().flatten().map(|v| 3.0 * v).collect();
        let scaled = PointSet::from_flat(scaled_data, 2).unwrap();
        let got = median_heuristic(&scaled).unwrap().bandwidth;
        assert_abs_diff_eq!(got, 9.0 * base, epsilon = 1e-9 * base.abs());
    }

    #[test]
    fn median_heuristic_degenerate_fallback() {
        let s = PointSet::from_flat(vec![2.0, 2.0, 2.0], 1).unwrap();
        assert_abs_diff_eq!(median_heuristic(&s).unwrap().bandwidth, 1.0);
        // Duplicate-heavy: median 0 but one positive pair exists.
        let s = PointSet::from_flat(vec![2.0, 2.0, 2.0, 2.0, 5.0], 1).unwrap();
        assert_abs_diff_eq!(median_heuristic(&s).unwrap().bandwidth, 9.0);
    }

    #[test]
    fn median_heuristic_permutation_and_translation_invariant() {
        let s = random_points(12, 2, 5);
        let base = median_heuristic(&s).unwrap().bandwidth;
        let mut idx: Vec<usize> = (0..12).collect();
        idx.reverse();
        let perm = s.select(&idx);
        assert_eq!(median_heuristic(&perm).unwrap().bandwidth, base);
        let shifted_data: Vec<f64> = s.iter_rows().flatten().map(|v| v + 7.5).collect();
        let shifted = PointSet::from_flat(shifted_data, 2).unwrap();
        let got = median_heuristic(&shifted).unwrap().bandwidth;
        assert_abs_diff_eq!(got, base, epsilon = 1e-12);
    }

    #[test]
    fn median_heuristic_too_few_points() {
        let s = PointSet::from_flat(vec![1.0], 1).unwrap();
        assert!(matches!(
            median_heuristic(&s),
            Err(Error::TooFewPoints { .. })
        ));
    }

    #[test]
    fn pinv_identity_returns_input() {
        let m = DMatrix::identity(3, 3);
        let b = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]);
        let x = pinv_apply(&m, &b, PINV_REL_TOL).unwrap();
        assert!((x - b).norm() < 1e-12);
    }

    #[test]
    fn pinv_annihilates_null_direction() {
        // diag(2, 0) applied to [4, 3] -> [2, 0].
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(2, 1, &[4.0, 3.0]);
        let x = pinv_apply(&m, &b, PINV_REL_TOL).unwrap();
        assert_abs_diff_eq!(x[(0, 0)], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[(1, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pinv_round_trip_on_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 12;
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let m = &a * a.transpose() + DMatrix::identity(n, n);
        let v = DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-1.0..1.0));
        let x = pinv_apply(&m, &(&m * &v), PINV_REL_TOL).unwrap();
        assert!((x - v).norm() < 1e-8);
    }

    #[test]
    fn pinv_penrose_identity() {
        // M * M^+ * M = M within 1e-8 relative Frobenius error.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let n = 10;
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let m = (&a + a.transpose()).scale(0.5);
            let pinv_m = pinv_apply(&m, &DMatrix::identity(n, n), PINV_REL_TOL).unwrap();
            let rec = &m * pinv_m * &m;
            assert!((rec - &m).norm() / m.norm() < 1e-8);
        }
    }

    #[test]
    fn pinv_rejects_non_finite() {
        let m = DMatrix::from_row_slice(2, 2, &[f64::NAN, 0.0, 0.0, 1.0]);
        let b = DMatrix::zeros(2, 1);
        assert!(matches!(
            pinv_apply(&m, &b, PINV_REL_TOL),
            Err(Error::NonFiniteInput { .. })
        ));
    }

    #[test]
    fn ridge_constant_covariates_give_group_mean() {
        let xs = PointSet::from_flat(vec![1.0; 6], 1).unwrap();
        let t = [0.0, 1.0, 1.0, 0.0, 1.0, 1.0];
        let fit = KernelRidgeSet::fit(xs, &[&t], KernelConfig::new(1.0).unwrap(), 0.1).unwrap();
        assert_abs_diff_eq!(fit.predict(0, &[1.0]), 4.0 / 6.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.predict(0, &[9.0]), 4.0 / 6.0, epsilon = 1e-10);
    }

    #[test]
    fn ridge_recovers_smooth_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200;
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let t: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        let ps = PointSet::from_flat(xs.clone(), 1).unwrap();
        let cfg = median_heuristic(&ps).unwrap();
        let fit = KernelRidgeSet::fit(ps, &[&t], cfg, 1e-4).unwrap();
        for x in [-1.5, -0.5, 0.0, 0.8, 1.7] {
            assert_abs_diff_eq!(fit.predict(0, &[x]), x.sin(), epsilon = 0.05);
        }
    }
}
