//! Direct density-ratio estimation over (y, x) points and the derived
//! odds-ratio and baseline-odds evaluators.
//!
//! Two fitters are provided: a KL importance estimator (log-likelihood
//! objective, nonnegative coefficients, mean-one normalization over the
//! denominator sample) solved by multiplicative updates, and a closed-form
//! least-squares importance fit.

use crate::error::{Error, Result, Warning};
use crate::kernel::{gram, kernel_eval_unchecked, KernelConfig, PointSet, SymPinv, PINV_REL_TOL};
use crate::linalg;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Optimizer settings for the KL fit.
#[derive(Debug, Clone, Copy)]
pub struct KlOptions {
    pub max_iter: usize,
    /// Stop when the objective improves by less than this.
    pub tol: f64,
}

impl Default for KlOptions {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            tol: 1e-8,
        }
    }
}

/// A fitted density ratio r̂(y, x) = Σ_j γ_j k((y,x), s_j) with γ ≥ 0,
/// normalized to mean one over the fit's denominator sample.
#[derive(Debug, Clone)]
pub struct DensityRatioFit {
    /// Support points, one (y, x…) row per numerator-sample point.
    pub support: PointSet,
    pub gamma: Vec<f64>,
    pub kernel: KernelConfig,
    pub clamp: (f64, f64),
    /// Mean of the unclamped evaluation over the denominator sample,
    /// recorded at fit time (should be 1 within 1e-4).
    pub normalization: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl DensityRatioFit {
    /// Unclamped evaluation at an assembled (y, x) point.
    pub fn eval_unclamped(&self, y: f64, x: &[f64]) -> f64 {
        let kappa = self.kernel.bandwidth;
        let mut acc = 0.0;
        for (j, s) in self.support.iter_rows().enumerate() {
            let dy = y - s[0];
            let dx2: f64 = x
                .iter()
                .zip(&s[1..])
                .map(|(a, b)| {
                    let d = a - b;
                    d * d
                })
                .sum();
            acc += self.gamma[j] * (-(dy * dy + dx2) / kappa).exp();
        }
        acc
    }

    /// Clamped evaluation.
    pub fn eval(&self, y: f64, x: &[f64]) -> f64 {
        self.eval_unclamped(y, x).clamp(self.clamp.0, self.clamp.1)
    }

    /// Unclamped evaluations on the product grid {ys} × {xs}: entry (i, j)
    /// is r̂(ys[i], xs[j]). The Gaussian kernel factorizes over the y and x
    /// coordinates, so this is two small Gram blocks and one matrix product
    /// instead of |ys|·|xs|·|support| kernel evaluations.
    pub fn eval_grid_unclamped(&self, ys: &[f64], xs: &PointSet) -> DMatrix<f64> {
        let s = self.support.n();
        let kappa = self.kernel.bandwidth;
        let mut vy = DMatrix::zeros(ys.len(), s);
        for (j, sp) in self.support.iter_rows().enumerate() {
            for (i, &y) in ys.iter().enumerate() {
                let d = y - sp[0];
                vy[(i, j)] = self.gamma[j] * (-(d * d) / kappa).exp();
            }
        }
        let mut ux = DMatrix::zeros(xs.n(), s);
        for (j, sp) in self.support.iter_rows().enumerate() {
            let sx = &sp[1..];
            for i in 0..xs.n() {
                let d2: f64 = xs
                    .row(i)
                    .iter()
                    .zip(sx)
                    .map(|(a, b)| {
                        let d = a - b;
                        d * d
                    })
                    .sum();
                ux[(i, j)] = (-d2 / kappa).exp();
            }
        }
        linalg::gemm(&vy, false, &ux, true)
    }

    /// Warning surfaced by the fit, if any.
    pub fn warning(&self) -> Option<Warning> {
        if self.converged {
            None
        } else {
            Some(Warning::NonConvergence {
                op: "fit_kl_ratio",
                iters: self.iterations,
            })
        }
    }
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

/// KL importance estimation of the ratio numerator/denominator of two
/// (y, x) samples. Support points are the numerator sample. The coefficient
/// vector maximizes the mean log of the ratio over the numerator sample
/// subject to γ ≥ 0 and mean one over the denominator sample, by
/// multiplicative updates (each iteration is an exact EM step, so the
/// objective ascends monotonically).
pub fn fit_kl_ratio(
    numerator: &PointSet,
    denominator: &PointSet,
    kernel: &KernelConfig,
    opt: &KlOptions,
    clamp: (f64, f64),
) -> Result<DensityRatioFit> {
    if numerator.n() == 0 || denominator.n() == 0 {
        return Err(Error::EmptySample { op: "fit_kl_ratio" });
    }
    let s = numerator.n();
    let n1 = numerator.n() as f64;
    let k11 = gram(numerator, numerator, kernel)?.entries;
    let k01 = gram(denominator, numerator, kernel)?.entries;
    let b = column_means(&k01);

    let mut gamma = DVector::from_element(s, 1.0);
    let norm = b.dot(&gamma);
    gamma /= norm;

    let mut prev_obj = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut last_improvement = f64::INFINITY;
    let floor = 1e-300;
    for iter in 0..opt.max_iter {
        iterations = iter + 1;
        let u = (&k11 * &gamma).map(|v| v.max(floor));
        let obj = u.iter().map(|v| v.ln()).sum::<f64>() / n1;
        debug_assert!(
            obj >= prev_obj - 1e-10 * (1.0 + prev_obj.abs()),
            "KL objective must ascend: {prev_obj} -> {obj}"
        );
        last_improvement = obj - prev_obj;
        if last_improvement < opt.tol && iter > 0 {
            converged = true;
            break;
        }
        prev_obj = obj;
        // EM step: gamma_j <- gamma_j * mean_i(K[i,j]/u_i) / b_j.
        let inv_u = u.map(|v| 1.0 / v);
        let g = linalg::gemm(
            &k11,
            true,
            &DMatrix::from_column_slice(inv_u.len(), 1, inv_u.as_slice()),
            false,
        );
        for j in 0..s {
            gamma[j] *= g[(j, 0)] / (n1 * b[j]);
        }
        // Guard against float drift off the constraint.
        let c = b.dot(&gamma);
        gamma /= c;
    }
    if !converged && last_improvement <= 1e-6 {
        // Hit the cap while the objective had already flattened out.
        converged = true;
    }
    let normalization = b.dot(&gamma);
    Ok(DensityRatioFit {
        support: numerator.clone(),
        gamma: gamma.iter().copied().collect(),
        kernel: *kernel,
        clamp,
        normalization,
        converged,
        iterations,
    })
}

/// Closed-form least-squares importance fitting of the same ratio: the
/// coefficients minimize the penalized quadratic criterion
/// γ'Hγ − 2h'γ + λγ'Kγ with H the denominator second-moment matrix of the
/// kernel features and h the numerator feature mean; negatives are then
/// clipped to zero and the denominator-mean-one normalization restored.
pub fn fit_lsif_ratio(
    numerator: &PointSet,
    denominator: &PointSet,
    kernel: &KernelConfig,
    lambda: f64,
    clamp: (f64, f64),
) -> Result<DensityRatioFit> {
    if numerator.n() == 0 || denominator.n() == 0 {
        return Err(Error::EmptySample { op: "fit_lsif_ratio" });
    }
    let s = numerator.n();
    let k11 = gram(numerator, numerator, kernel)?.entries;
    let k01 = gram(denominator, numerator, kernel)?.entries;
    let n0 = denominator.n() as f64;
    let h_mat = linalg::gemm(&k01, true, &k01, false) / n0;
    let h_vec = column_means(&k11);
    let system = &h_mat + k11.scale(lambda);
    let pinv = SymPinv::new(&system, PINV_REL_TOL)?;
    let rhs = DMatrix::from_column_slice(s, 1, h_vec.as_slice());
    let raw = pinv.apply(&rhs);

    // First-order stationarity on the retained eigenspace.
    let resid = pinv.project(&(&system * &raw - &rhs));
    debug_assert!(
        resid.norm() <= 1e-6 * (1.0 + raw.norm()),
        "LSIF stationarity violated: {}",
        resid.norm()
    );

    let mut gamma: Vec<f64> = raw.iter().map(|&g| g.max(0.0)).collect();
    let b = column_means(&k01);
    let mut c: f64 = gamma.iter().zip(b.iter()).map(|(g, bj)| g * bj).sum();
    if c <= 1e-12 {
        // Everything clipped away; fall back to a flat fit.
        gamma = vec![1.0; s];
        c = gamma.iter().zip(b.iter()).map(|(g, bj)| g * bj).sum();
    }
    for g in &mut gamma {
        *g /= c;
    }
    let normalization = gamma.iter().zip(b.iter()).map(|(g, bj)| g * bj).sum();
    Ok(DensityRatioFit {
        support: numerator.clone(),
        gamma,
        kernel: *kernel,
        clamp,
        normalization,
        converged: true,
        iterations: 1,
    })
}

/// Fits r̂₁: the ratio of the period-1 to period-0 control outcome
/// densities, with numerator the control (Y1, X) sample and denominator the
/// control (Y0, X) sample.
pub fn fit_r1(
    control_y1x: &PointSet,
    control_y0x: &PointSet,
    kernel: &KernelConfig,
    opt: &KlOptions,
    clamp: (f64, f64),
) -> Result<DensityRatioFit> {
    if control_y1x.n() == 0 || control_y0x.n() == 0 {
        return Err(Error::EmptyControlSample { op: "fit_r1" });
    }
    fit_kl_ratio(control_y1x, control_y0x, kernel, opt, clamp)
}

/// The reference outcome y_R: either a global scalar or a covariate-
/// conditional value (the kernel-weighted median of control Y0).
#[derive(Debug, Clone)]
pub enum ReferenceOutcome {
    Scalar(f64),
    Conditional {
        /// Control (y0, x) pairs sorted by y0.
        y_sorted: Vec<f64>,
        x_sorted: PointSet,
        kernel: KernelConfig,
    },
}

/// Selection mode for the reference outcome.
#[derive(Debug, Clone, Copy)]
pub enum ReferenceMode {
    GlobalMedian,
    ConditionalMedian(KernelConfig),
}

impl ReferenceOutcome {
    /// The reference value at covariates `x`.
    pub fn value_at(&self, x: &[f64]) -> f64 {
        match self {
            ReferenceOutcome::Scalar(v) => *v,
            ReferenceOutcome::Conditional {
                y_sorted,
                x_sorted,
                kernel,
            } => {
                let weights: Vec<f64> = x_sorted
                    .iter_rows()
                    .map(|xi| kernel_eval_unchecked(x, xi, kernel))
                    .collect();
                weighted_lower_median(y_sorted, &weights)
            }
        }
    }
}

/// The smallest y whose cumulative weight reaches half the total;
/// `y_sorted` must be ascending. Always an observed value.
fn weighted_lower_median(y_sorted: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    let half = 0.5 * total;
    let mut acc = 0.0;
    for (y, w) in y_sorted.iter().zip(weights) {
        acc += w;
        if acc >= half {
            return *y;
        }
    }
    *y_sorted.last().unwrap()
}

/// Picks the reference outcome from the control pre-period sample.
pub fn select_reference_outcome(
    control_y0: &[f64],
    control_x: &PointSet,
    mode: ReferenceMode,
) -> Result<ReferenceOutcome> {
    if control_y0.is_empty() {
        return Err(Error::EmptyControlSample {
            op: "select_reference_outcome",
        });
    }
    let mut order: Vec<usize> = (0..control_y0.len()).collect();
    order.sort_by(|&i, &j| control_y0[i].partial_cmp(&control_y0[j]).unwrap());
    let y_sorted: Vec<f64> = order.iter().map(|&i| control_y0[i]).collect();
    match mode {
        ReferenceMode::GlobalMedian => {
            let uniform = vec![1.0; y_sorted.len()];
            Ok(ReferenceOutcome::Scalar(weighted_lower_median(
                &y_sorted, &uniform,
            )))
        }
        ReferenceMode::ConditionalMedian(kernel) => Ok(ReferenceOutcome::Conditional {
            y_sorted,
            x_sorted: control_x.select(&order),
            kernel,
        }),
    }
}

/// Odds-ratio evaluator α̂₁(y, x) = r̂₀(y, x) / r̂₀(y_R(x), x), clamped.
#[derive(Debug, Clone)]
pub struct Alpha1Fit {
    pub r0: Arc<DensityRatioFit>,
    pub y_ref: Arc<ReferenceOutcome>,
    pub clamp: (f64, f64),
}

impl Alpha1Fit {
    pub fn eval(&self, y: f64, x: &[f64]) -> f64 {
        let denom = self.r0.eval_unclamped(self.y_ref.value_at(x), x);
        let num = self.r0.eval_unclamped(y, x);
        safe_ratio(num, denom).clamp(self.clamp.0, self.clamp.1)
    }

    /// Clamped evaluations on the product grid {ys} × {xs}; entry (i, j) is
    /// α̂₁(ys[i], xs[j]).
    pub fn eval_grid(&self, ys: &[f64], xs: &PointSet) -> DMatrix<f64> {
        let mut grid = self.r0.eval_grid_unclamped(ys, xs);
        for j in 0..xs.n() {
            let x = xs.row(j);
            let denom = self.r0.eval_unclamped(self.y_ref.value_at(x), x);
            for i in 0..ys.len() {
                grid[(i, j)] = safe_ratio(grid[(i, j)], denom).clamp(self.clamp.0, self.clamp.1);
            }
        }
        grid
    }
}

fn safe_ratio(num: f64, denom: f64) -> f64 {
    if denom <= 0.0 {
        // Both masses vanished at this point; the ratio is uninformative
        // and the clamp decides.
        if num <= 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        num / denom
    }
}

/// Baseline-odds evaluator β̂₀(x) = r̂₀(y_R(x), x) · p/(1−p), clamped.
#[derive(Debug, Clone)]
pub struct Beta0Fit {
    pub r0: Arc<DensityRatioFit>,
    pub y_ref: Arc<ReferenceOutcome>,
    pub odds_treated: f64,
    pub clamp: (f64, f64),
}

impl Beta0Fit {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let r = self.r0.eval_unclamped(self.y_ref.value_at(x), x);
        (r * self.odds_treated).clamp(self.clamp.0, self.clamp.1)
    }
}

/// Derives the odds-ratio and baseline-odds evaluators from the fitted
/// treated-vs-control pre-period ratio r̂₀.
pub fn derive_alpha1_beta0(
    r0: DensityRatioFit,
    y_ref: ReferenceOutcome,
    p_treated: f64,
) -> Result<(Alpha1Fit, Beta0Fit)> {
    if !(p_treated > 0.0 && p_treated < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "p_treated must lie in (0, 1), got {p_treated}"
        )));
    }
    let clamp = r0.clamp;
    let r0 = Arc::new(r0);
    let y_ref = Arc::new(y_ref);
    Ok((
        Alpha1Fit {
            r0: Arc::clone(&r0),
            y_ref: Arc::clone(&y_ref),
            clamp,
        },
        Beta0Fit {
            r0,
            y_ref,
            odds_treated: p_treated / (1.0 - p_treated),
            clamp,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::median_heuristic;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const CLAMP: (f64, f64) = (1e-3, 1e3);

    fn normal_sample(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn yx_points(y: &[f64], x: &[f64]) -> PointSet {
        let xs = PointSet::from_flat(x.to_vec(), 1).unwrap();
        xs.with_prepended(y)
    }

    fn check_constraint(fit: &DensityRatioFit, den: &PointSet) {
        let mean: f64 = den
            .iter_rows()
            .map(|p| fit.eval_unclamped(p[0], &p[1..]))
            .sum::<f64>()
            / den.n() as f64;
        assert!(
            (mean - 1.0).abs() <= 1e-4,
            "normalization constraint violated: {mean}"
        );
        assert!((fit.normalization - 1.0).abs() <= 1e-4);
    }

    #[test]
    fn kl_identical_distribution_ratio_near_one() {
        let y = normal_sample(500, 1);
        let x = normal_sample(500, 2);
        let pts = yx_points(&y, &x);
        let kernel = median_heuristic(&pts).unwrap();
        let fit = fit_kl_ratio(&pts, &pts, &kernel, &KlOptions::default(), CLAMP).unwrap();
        check_constraint(&fit, &pts);
        assert!(fit.gamma.iter().all(|&g| g >= 0.0));
        let devs: Vec<f64> = pts
            .iter_rows()
            .map(|p| (fit.eval(p[0], &p[1..]) - 1.0).abs())
            .collect();
        let max_dev = devs.iter().cloned().fold(0.0f64, f64::max);
        let mean_dev = devs.iter().sum::<f64>() / devs.len() as f64;
        assert!(max_dev <= 0.25, "max |r - 1| = {max_dev}");
        assert!(mean_dev <= 0.1, "mean |r - 1| = {mean_dev}");
    }

    #[test]
    fn kl_detects_mean_shift() {
        // Numerator N(1,1), denominator N(0,1): ratio should be > 1 to the
        // right of the overlap and < 1 to the left.
        let y1: Vec<f64> = normal_sample(400, 3).iter().map(|v| v + 1.0).collect();
        let y0 = normal_sample(400, 4);
        let pts1 = PointSet::from_flat(y1, 1).unwrap();
        let pts0 = PointSet::from_flat(y0, 1).unwrap();
        let kernel = median_heuristic(&pts0).unwrap();
        let fit = fit_kl_ratio(&pts1, &pts0, &kernel, &KlOptions::default(), CLAMP).unwrap();
        assert!(fit.eval(2.0, &[]) > fit.eval(-2.0, &[]));
    }

    #[test]
    fn kl_empty_sample_errors() {
        let pts = PointSet::from_flat(vec![0.0], 1).unwrap();
        let empty = PointSet::from_flat(Vec::new(), 1).unwrap();
        let kernel = KernelConfig::new(1.0).unwrap();
        assert!(matches!(
            fit_kl_ratio(&empty, &pts, &kernel, &KlOptions::default(), CLAMP),
            Err(Error::EmptySample { .. })
        ));
    }

    #[test]
    fn kl_nonconvergence_is_warning_not_failure() {
        let y = normal_sample(100, 5);
        let pts = PointSet::from_flat(y, 1).unwrap();
        let kernel = median_heuristic(&pts).unwrap();
        let opt = KlOptions {
            max_iter: 1,
            tol: 1e-16,
        };
        let fit = fit_kl_ratio(&pts, &pts, &kernel, &opt, CLAMP).unwrap();
        assert!(matches!(
            fit.warning(),
            Some(Warning::NonConvergence { .. })
        ));
        check_constraint(&fit, &pts);
    }

    #[test]
    fn eval_grid_matches_pointwise() {
        let y = normal_sample(60, 6);
        let x = normal_sample(60, 7);
        let pts = yx_points(&y, &x);
        let kernel = median_heuristic(&pts).unwrap();
        let fit = fit_kl_ratio(&pts, &pts, &kernel, &KlOptions::default(), CLAMP).unwrap();
        let ys = [-1.0, 0.3, 2.0];
        let xs = PointSet::from_flat(vec![-0.5, 0.0, 1.5, 0.7], 1).unwrap();
        let grid = fit.eval_grid_unclamped(&ys, &xs);
        for (i, &yv) in ys.iter().enumerate() {
            for j in 0..xs.n() {
                assert_abs_diff_eq!(
                    grid[(i, j)],
                    fit.eval_unclamped(yv, xs.row(j)),
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn lsif_identical_distribution_ratio_near_one() {
        let y = normal_sample(500, 8);
        let x = normal_sample(500, 9);
        let pts = yx_points(&y, &x);
        let kernel = median_heuristic(&pts).unwrap();
        let fit = fit_lsif_ratio(&pts, &pts, &kernel, 1e-3, CLAMP).unwrap();
        check_constraint(&fit, &pts);
        assert!(fit.gamma.iter().all(|&g| g >= 0.0));
        let mean_dev: f64 = pts
            .iter_rows()
            .map(|p| (fit.eval(p[0], &p[1..]) - 1.0).abs())
            .sum::<f64>()
            / pts.n() as f64;
        assert!(mean_dev <= 0.15, "mean |r - 1| = {mean_dev}");
    }

    #[test]
    fn lsif_huge_lambda_shrinks_raw_coefficients() {
        let y = normal_sample(100, 10);
        let pts = PointSet::from_flat(y, 1).unwrap();
        let kernel = median_heuristic(&pts).unwrap();
        // Reproduce the pre-normalization solve: with lambda = 1e6 the raw
        // solution must be near zero.
        let k11 = gram(&pts, &pts, &kernel).unwrap().entries;
        let h = linalg::gemm(&k11, true, &k11, false) / pts.n() as f64;
        let hv = DMatrix::from_fn(pts.n(), 1, |j, _| k11.column(j).sum() / pts.n() as f64);
        let system = &h + k11.scale(1e6);
        let raw = crate::kernel::pinv_apply(&system, &hv, PINV_REL_TOL).unwrap();
        assert!(raw.norm() < 1e-4, "raw norm {}", raw.norm());
        // The public fit still satisfies normalization after the rescale.
        let fit = fit_lsif_ratio(&pts, &pts, &kernel, 1e6, CLAMP).unwrap();
        check_constraint(&fit, &pts);
    }

    #[test]
    fn reference_global_median() {
        let x = PointSet::from_flat(vec![0.0, 0.0, 0.0], 1).unwrap();
        let r = select_reference_outcome(&[1.0, 2.0, 3.0], &x, ReferenceMode::GlobalMedian)
            .unwrap();
        assert_eq!(r.value_at(&[0.0]), 2.0);
    }

    #[test]
    fn reference_conditional_with_huge_bandwidth_equals_global() {
        let y = normal_sample(51, 11);
        let x = PointSet::from_flat(normal_sample(51, 12), 1).unwrap();
        let global = select_reference_outcome(&y, &x, ReferenceMode::GlobalMedian).unwrap();
        let cond = select_reference_outcome(
            &y,
            &x,
            ReferenceMode::ConditionalMedian(KernelConfig::new(1e12).unwrap()),
        )
        .unwrap();
        for probe in [-1.0, 0.0, 2.0] {
            assert_eq!(cond.value_at(&[probe]), global.value_at(&[probe]));
        }
    }

    #[test]
    fn reference_empty_controls_errors() {
        let x = PointSet::from_flat(Vec::new(), 1).unwrap();
        assert!(matches!(
            select_reference_outcome(&[], &x, ReferenceMode::GlobalMedian),
            Err(Error::EmptyControlSample { .. })
        ));
    }

    #[test]
    fn alpha1_is_one_at_reference() {
        let y = normal_sample(200, 13);
        let x = normal_sample(200, 14);
        let pts = yx_points(&y, &x);
        let kernel = median_heuristic(&pts).unwrap();
        let fit = fit_kl_ratio(&pts, &pts, &kernel, &KlOptions::default(), CLAMP).unwrap();
        let xs = PointSet::from_flat(x.clone(), 1).unwrap();
        let y_ref = select_reference_outcome(&y, &xs, ReferenceMode::GlobalMedian).unwrap();
        let (alpha1, _) = derive_alpha1_beta0(fit, y_ref, 0.5).unwrap();
        for probe in [-2.0, 0.0, 0.7, 3.0] {
            let yr = alpha1.y_ref.value_at(&[probe]);
            assert_abs_diff_eq!(alpha1.eval(yr, &[probe]), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn beta0_is_one_for_flat_ratio_and_even_odds() {
        // A single support point with weight chosen so the evaluation at
        // that point is exactly 1, and p = 0.5.
        let fit = DensityRatioFit {
            support: PointSet::from_flat(vec![0.0, 0.0], 2).unwrap(),
            gamma: vec![1.0],
            kernel: KernelConfig::new(1e12).unwrap(),
            clamp: CLAMP,
            normalization: 1.0,
            converged: true,
            iterations: 1,
        };
        let (alpha1, beta0) =
            derive_alpha1_beta0(fit, ReferenceOutcome::Scalar(0.0), 0.5).unwrap();
        // With an enormous bandwidth the fit is ~1 everywhere.
        for probe in [-1.0, 0.0, 2.0] {
            assert_abs_diff_eq!(beta0.eval(&[probe]), 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(alpha1.eval(1.3, &[probe]), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn alpha1_grid_matches_pointwise() {
        let y = normal_sample(80, 15);
        let x = normal_sample(80, 16);
        let pts = yx_points(&y, &x);
        let kernel = median_heuristic(&pts).unwrap();
        let fit = fit_kl_ratio(&pts, &pts, &kernel, &KlOptions::default(), CLAMP).unwrap();
        let xs = PointSet::from_flat(x.clone(), 1).unwrap();
        let y_ref = select_reference_outcome(&y, &xs, ReferenceMode::GlobalMedian).unwrap();
        let (alpha1, _) = derive_alpha1_beta0(fit, y_ref, 0.4).unwrap();
        let ys = [-0.8, 0.1, 1.9];
        let probes = PointSet::from_flat(vec![-1.0, 0.2, 0.9], 1).unwrap();
        let grid = alpha1.eval_grid(&ys, &probes);
        for (i, &yv) in ys.iter().enumerate() {
            for j in 0..probes.n() {
                assert_abs_diff_eq!(
                    grid[(i, j)],
                    alpha1.eval(yv, probes.row(j)),
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn fit_r1_identical_distributions() {
        // Y1 | A=0 and Y0 | A=0 share the same law: ratio ~ 1.
        let y1 = normal_sample(1000, 17);
        let y0 = normal_sample(1000, 18);
        let x = normal_sample(1000, 19);
        let p1 = yx_points(&y1, &x);
        let p0 = yx_points(&y0, &x);
        let kernel = median_heuristic(&p0).unwrap();
        let fit = fit_r1(&p1, &p0, &kernel, &KlOptions::default(), CLAMP).unwrap();
        check_constraint(&fit, &p0);
        let mean_dev: f64 = p0
            .iter_rows()
            .map(|p| (fit.eval(p[0], &p[1..]) - 1.0).abs())
            .sum::<f64>()
            / p0.n() as f64;
        assert!(mean_dev <= 0.15, "mean |r1 - 1| = {mean_dev}");
        for p in p0.iter_rows().take(50) {
            let v = fit.eval(p[0], &p[1..]);
            assert!(v >= CLAMP.0 && v <= CLAMP.1);
        }
    }
}
