//! Simulation data-generating processes with analytic ground truth, oracle
//! odds-ratio formulas, overlap diagnostics, a placebo test over extra
//! pre-treatment periods, and the Monte-Carlo study driver.

use crate::data::{EstimatorConfig, OutcomeKind, PanelDataset};
use crate::error::{Error, Result, Warning};
use crate::estimator::{
    estimate_att, estimate_att_binary, estimate_qtt, mix_seed, pt_baseline_att,
};
use crate::kernel::{kernel_eval_unchecked, median_heuristic, KernelConfig, PointSet};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

fn expit(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Gaussian family with a location shift between arms in each period:
/// Y₀(0) | A ~ N(m0 + g0·A, s0²), Y₁(0) | A ~ N(m1 + g1·A, s1²),
/// Y₁(1) = Y₁(0) + att. The equi-confounding condition holds exactly when
/// g0/s0² = g1/s1².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianCustomParams {
    pub d: usize,
    pub m0: f64,
    pub m1: f64,
    pub g0: f64,
    pub g1: f64,
    pub s0: f64,
    pub s1: f64,
    pub att: f64,
}

impl Default for GaussianCustomParams {
    fn default() -> Self {
        GaussianCustomParams {
            d: 1,
            m0: 1.0,
            m1: 1.5,
            g0: 0.5,
            g1: 0.5,
            s0: 1.0,
            s1: 1.0,
            att: 0.5,
        }
    }
}

/// Bernoulli family with a common logit shift g between arms in both
/// periods (so the odds ratio is exp{y·g} in each); treatment has no
/// effect, so the true ATT is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliCustomParams {
    pub d: usize,
    pub base0: f64,
    pub base1: f64,
    pub g: f64,
}

impl Default for BernoulliCustomParams {
    fn default() -> Self {
        BernoulliCustomParams {
            d: 1,
            base0: -0.5,
            base1: 0.0,
            g: 1.0,
        }
    }
}

/// Poisson family with a common log-rate shift g between arms in both
/// periods (odds ratio exp{y·g}); true ATT is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonCustomParams {
    pub d: usize,
    pub log_rate0: f64,
    pub log_rate1: f64,
    pub g: f64,
}

impl Default for PoissonCustomParams {
    fn default() -> Self {
        PoissonCustomParams {
            d: 1,
            log_rate0: 0.0,
            log_rate1: 0.2,
            g: 0.3,
        }
    }
}

/// Treatment independent of everything: A ~ Ber(p), outcomes Gaussian and
/// independent of (A, X) under control, with an additive effect on the
/// treated in the post period. The odds ratio is identically 1 and the
/// counterfactual post-period quantiles are analytic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoConfoundingParams {
    pub d: usize,
    pub p_treated: f64,
    pub mean_y0: f64,
    pub sd_y0: f64,
    pub mean_y1: f64,
    pub sd_y1: f64,
    pub att: f64,
}

impl Default for NoConfoundingParams {
    fn default() -> Self {
        NoConfoundingParams {
            d: 1,
            p_treated: 0.5,
            mean_y0: 0.0,
            sd_y0: 1.0,
            mean_y1: 0.5,
            sd_y1: 1.0,
            att: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DgpFamily {
    Sec6Continuous,
    Sec6Binary,
    GaussianCustom(GaussianCustomParams),
    BernoulliCustom(BernoulliCustomParams),
    PoissonCustom(PoissonCustomParams),
    NoConfounding(NoConfoundingParams),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpSpec {
    pub family: DgpFamily,
    pub n: usize,
    pub seed: u64,
}

impl DgpSpec {
    /// Parses a CLI-facing family name with default custom parameters.
    pub fn parse(name: &str, n: usize, seed: u64) -> Result<Self> {
        let family = match name {
            "sec6-continuous" => DgpFamily::Sec6Continuous,
            "sec6-binary" => DgpFamily::Sec6Binary,
            "gaussian-custom" => DgpFamily::GaussianCustom(GaussianCustomParams::default()),
            "bernoulli-custom" => DgpFamily::BernoulliCustom(BernoulliCustomParams::default()),
            "poisson-custom" => DgpFamily::PoissonCustom(PoissonCustomParams::default()),
            "no-confounding" => DgpFamily::NoConfounding(NoConfoundingParams::default()),
            other => return Err(Error::UnknownDgp(other.to_string())),
        };
        Ok(DgpSpec { family, n, seed })
    }

    pub fn name(&self) -> &'static str {
        match self.family {
            DgpFamily::Sec6Continuous => "sec6-continuous",
            DgpFamily::Sec6Binary => "sec6-binary",
            DgpFamily::GaussianCustom(_) => "gaussian-custom",
            DgpFamily::BernoulliCustom(_) => "bernoulli-custom",
            DgpFamily::PoissonCustom(_) => "poisson-custom",
            DgpFamily::NoConfounding(_) => "no-confounding",
        }
    }

    pub fn true_att(&self) -> f64 {
        match self.family {
            DgpFamily::Sec6Continuous => 0.5,
            DgpFamily::Sec6Binary => 0.0,
            DgpFamily::GaussianCustom(p) => p.att,
            DgpFamily::BernoulliCustom(_) => 0.0,
            DgpFamily::PoissonCustom(_) => 0.0,
            DgpFamily::NoConfounding(p) => p.att,
        }
    }

    /// The q-th quantile of Y₁(0) among the treated, where analytic.
    pub fn true_qtt(&self, q: f64) -> Option<f64> {
        match self.family {
            DgpFamily::NoConfounding(p) => {
                let z = Normal::new(0.0, 1.0).ok()?.inverse_cdf(q);
                Some(p.mean_y1 + p.sd_y1 * z)
            }
            _ => None,
        }
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        match self.family {
            DgpFamily::Sec6Binary | DgpFamily::BernoulliCustom(_) => OutcomeKind::Binary,
            _ => OutcomeKind::Continuous,
        }
    }
}

/// Draws one panel from the process described by the spec: covariates iid
/// standard normal, treatment by a logistic propensity (or a constant one
/// for the unconfounded family), outcomes per the family displays.
pub fn simulate(spec: &DgpSpec) -> Result<PanelDataset> {
    let n = spec.n;
    if n < 2 {
        return Err(Error::TooFewPoints { need: 2, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = match spec.family {
        DgpFamily::Sec6Continuous | DgpFamily::Sec6Binary => 3,
        DgpFamily::GaussianCustom(p) => p.d,
        DgpFamily::BernoulliCustom(p) => p.d,
        DgpFamily::PoissonCustom(p) => p.d,
        DgpFamily::NoConfounding(p) => p.d,
    };
    let mut xflat = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        xflat.push(rng.sample::<f64, _>(StandardNormal));
    }
    let x = if d == 0 {
        PointSet::empty_dim(n)
    } else {
        PointSet::from_flat(xflat, d)?
    };
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    for i in 0..n {
        let xi = x.row(i);
        let xsum: f64 = xi.iter().sum();
        let (x1, x2) = (
            xi.first().copied().unwrap_or(0.0),
            xi.get(1).copied().unwrap_or(0.0),
        );
        match spec.family {
            DgpFamily::Sec6Continuous => {
                let ai = (rng.gen::<f64>() < expit(xsum / 4.0)) as u8;
                let af = ai as f64;
                let e0: f64 = rng.sample(StandardNormal);
                let e1: f64 = rng.sample(StandardNormal);
                y0.push(3.0 + 0.4 * (1.0 + x1) * af + 0.2 * (x1 + x2) + 2.0 * e0);
                // Observed Y₁ = Y₁(A): the additive effect applies to the
                // treated only.
                y1.push(3.5 + 0.5 * af + 0.1 * (1.0 + x1) * af - 0.2 * (x1 + x2) + e1);
                a.push(ai);
            }
            DgpFamily::Sec6Binary => {
                let ai = (rng.gen::<f64>() < expit(xsum / 4.0)) as u8;
                let af = ai as f64;
                let p0 = expit(-1.0 + (2.0 - 0.1 * x1) * af + 0.1 * x1);
                let p1 = expit(0.25 + (2.0 - 0.1 * x1) * af + 0.1 * x1 + 0.1 * x2);
                y0.push((rng.gen::<f64>() < p0) as u8 as f64);
                y1.push((rng.gen::<f64>() < p1) as u8 as f64);
                a.push(ai);
            }
            DgpFamily::GaussianCustom(p) => {
                let prop = if d == 0 { 0.5 } else { expit(xsum / 4.0) };
                let ai = (rng.gen::<f64>() < prop) as u8;
                let af = ai as f64;
                let e0: f64 = rng.sample(StandardNormal);
                let e1: f64 = rng.sample(StandardNormal);
                y0.push(p.m0 + p.g0 * af + p.s0 * e0);
                y1.push(p.m1 + p.g1 * af + p.s1 * e1 + p.att * af);
                a.push(ai);
            }
            DgpFamily::BernoulliCustom(p) => {
                let prop = if d == 0 { 0.5 } else { expit(xsum / 4.0) };
                let ai = (rng.gen::<f64>() < prop) as u8;
                let af = ai as f64;
                y0.push((rng.gen::<f64>() < expit(p.base0 + p.g * af)) as u8 as f64);
                y1.push((rng.gen::<f64>() < expit(p.base1 + p.g * af)) as u8 as f64);
                a.push(ai);
            }
            DgpFamily::PoissonCustom(p) => {
                let prop = if d == 0 { 0.5 } else { expit(xsum / 4.0) };
                let ai = (rng.gen::<f64>() < prop) as u8;
                let af = ai as f64;
                let l0 = (p.log_rate0 + p.g * af).exp();
                let l1 = (p.log_rate1 + p.g * af).exp();
                y0.push(rng.sample(Poisson::new(l0).map_err(|_| {
                    Error::InvalidConfig("poisson rate must be positive".into())
                })?));
                y1.push(rng.sample(Poisson::new(l1).map_err(|_| {
                    Error::InvalidConfig("poisson rate must be positive".into())
                })?));
                a.push(ai);
            }
            DgpFamily::NoConfounding(p) => {
                let ai = (rng.gen::<f64>() < p.p_treated) as u8;
                let af = ai as f64;
                let e0: f64 = rng.sample(StandardNormal);
                let e1: f64 = rng.sample(StandardNormal);
                y0.push(p.mean_y0 + p.sd_y0 * e0);
                y1.push(p.mean_y1 + p.sd_y1 * e1 + p.att * af);
                a.push(ai);
            }
        }
    }
    Ok(PanelDataset {
        y0,
        y1,
        a,
        x,
        outcome_kind: spec.outcome_kind(),
    })
}

/// The analytic post-period odds ratio α₁*(y, x), normalized to 1 at the
/// reference outcome (0 for every family here).
pub fn true_odds_ratio(spec: &DgpSpec, y: f64, x: &[f64]) -> Result<f64> {
    let x1 = x.first().copied().unwrap_or(0.0);
    match spec.family {
        DgpFamily::Sec6Continuous => Ok((0.1 * y * (x1 + 1.0)).exp()),
        // Logit difference between the arms' post-period displays.
        DgpFamily::Sec6Binary => Ok((y * (2.0 - 0.1 * x1)).exp()),
        DgpFamily::GaussianCustom(p) => Ok((y * p.g1 / (p.s1 * p.s1)).exp()),
        DgpFamily::BernoulliCustom(p) => Ok((y * p.g).exp()),
        DgpFamily::PoissonCustom(p) => Ok((y * p.g).exp()),
        DgpFamily::NoConfounding(_) => Ok(1.0),
    }
}

/// Per-unit conditional supports of the four outcome laws and the rate of
/// containment violations.
#[derive(Debug, Clone)]
pub struct OverlapReport {
    pub threshold: f64,
    pub grid: Vec<f64>,
    /// Per unit: support intervals of f(y₀|A=0,x), f(y₀|A=1,x),
    /// f(y₁|A=0,x), and the reweighted counterfactual f(y₁(0)|A=1,x).
    pub supports: Vec<[(f64, f64); 4]>,
    pub violation_rate: f64,
}

const OVERLAP_GRID: usize = 64;

fn silverman_bandwidth(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let sd = (ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n).sqrt();
    let mut sorted = ys.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let last = sorted.len() - 1;
    let iqr = sorted[(0.75 * last as f64) as usize] - sorted[(0.25 * last as f64) as usize];
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    if h.is_finite() && h > 0.0 {
        h
    } else {
        1e-3
    }
}

/// Grid densities for one law: rows index the y grid, columns index the
/// probe units. `sample_y`/`sample_x` are the arm's observations.
fn conditional_density_grid(
    grid: &[f64],
    sample_y: &[f64],
    sample_x: &PointSet,
    probes: &PointSet,
    kernel: &KernelConfig,
) -> DMatrix<f64> {
    let m = sample_y.len();
    let h = silverman_bandwidth(sample_y);
    let norm = h * (2.0 * std::f64::consts::PI).sqrt();
    let phi = DMatrix::from_fn(grid.len(), m, |g, i| {
        let z = (grid[g] - sample_y[i]) / h;
        (-0.5 * z * z).exp() / norm
    });
    let mut w = DMatrix::from_fn(m, probes.n(), |i, u| {
        kernel_eval_unchecked(sample_x.row(i), probes.row(u), kernel)
    });
    for u in 0..probes.n() {
        let s: f64 = w.column(u).iter().sum();
        if s > 0.0 {
            for i in 0..m {
                w[(i, u)] /= s;
            }
        } else {
            for i in 0..m {
                w[(i, u)] = 1.0 / m as f64;
            }
        }
    }
    &phi * &w
}

/// Estimates the four conditional outcome laws per unit (the fourth by
/// odds-ratio reweighting of the control post-period law) and reports the
/// rate of units whose required support containments fail.
pub fn overlap_diagnostic(
    data: &PanelDataset,
    kernel: Option<KernelConfig>,
    threshold: f64,
) -> Result<OverlapReport> {
    let n = data.n();
    let ctrl = data.control_indices();
    let trt = data.treated_indices();
    if ctrl.is_empty() {
        return Err(Error::DegenerateTreatmentArm { arm: 0 });
    }
    if trt.is_empty() {
        return Err(Error::DegenerateTreatmentArm { arm: 1 });
    }
    let kernel = match kernel {
        Some(k) => k,
        None => median_heuristic(&data.x)?,
    };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in data.y0.iter().chain(&data.y1) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let grid: Vec<f64> = (0..OVERLAP_GRID)
        .map(|g| lo + (hi - lo) * g as f64 / (OVERLAP_GRID - 1) as f64)
        .collect();

    let y0_ctrl: Vec<f64> = ctrl.iter().map(|&i| data.y0[i]).collect();
    let y0_trt: Vec<f64> = trt.iter().map(|&i| data.y0[i]).collect();
    let y1_ctrl: Vec<f64> = ctrl.iter().map(|&i| data.y1[i]).collect();
    let x_ctrl = data.x.select(&ctrl);
    let x_trt = data.x.select(&trt);
    let f1 = conditional_density_grid(&grid, &y0_ctrl, &x_ctrl, &data.x, &kernel);
    let f2 = conditional_density_grid(&grid, &y0_trt, &x_trt, &data.x, &kernel);
    let f3 = conditional_density_grid(&grid, &y1_ctrl, &x_ctrl, &data.x, &kernel);

    // Fourth law by odds-ratio reweighting of the control post-period law,
    // renormalized on the grid.
    let y0x = data.x.with_prepended(&data.y0);
    let y0x_ctrl = y0x.select(&ctrl);
    let y0x_trt = y0x.select(&trt);
    let kernel_yx = median_heuristic(&y0x)?;
    let r0 = crate::density_ratio::fit_kl_ratio(
        &y0x_trt,
        &y0x_ctrl,
        &kernel_yx,
        &crate::density_ratio::KlOptions::default(),
        (1e-3, 1e3),
    )?;
    let y_ref = match data.outcome_kind {
        OutcomeKind::Binary => crate::density_ratio::ReferenceOutcome::Scalar(0.0),
        OutcomeKind::Continuous => crate::density_ratio::select_reference_outcome(
            &y0_ctrl,
            &x_ctrl,
            crate::density_ratio::ReferenceMode::GlobalMedian,
        )?,
    };
    let (alpha1, _) =
        crate::density_ratio::derive_alpha1_beta0(r0, y_ref, data.p_treated())?;
    let alpha_grid = alpha1.eval_grid(&grid, &data.x);
    let step = if grid.len() > 1 { grid[1] - grid[0] } else { 1.0 };
    let mut f4 = DMatrix::zeros(grid.len(), n);
    for u in 0..n {
        let mut mass = 0.0;
        for g in 0..grid.len() {
            f4[(g, u)] = alpha_grid[(g, u)] * f3[(g, u)];
            mass += f4[(g, u)] * step;
        }
        if mass > 0.0 {
            for g in 0..grid.len() {
                f4[(g, u)] /= mass;
            }
        }
    }

    let support_of = |f: &DMatrix<f64>, u: usize| -> (f64, f64) {
        let mut s_lo = f64::NAN;
        let mut s_hi = f64::NAN;
        for g in 0..grid.len() {
            if f[(g, u)] >= threshold {
                if s_lo.is_nan() {
                    s_lo = grid[g];
                }
                s_hi = grid[g];
            }
        }
        (s_lo, s_hi)
    };
    let mut supports = Vec::with_capacity(n);
    let mut violations = 0usize;
    for u in 0..n {
        supports.push([
            support_of(&f1, u),
            support_of(&f2, u),
            support_of(&f3, u),
            support_of(&f4, u),
        ]);
        // Required containments: the treated pre-period law inside the
        // control pre-period law, and the counterfactual post-period law
        // inside the control post-period law.
        let mut bad = false;
        for g in 0..grid.len() {
            if (f2[(g, u)] >= threshold && f1[(g, u)] < threshold)
                || (f4[(g, u)] >= threshold && f3[(g, u)] < threshold)
            {
                bad = true;
                break;
            }
        }
        if bad {
            violations += 1;
        }
    }
    Ok(OverlapReport {
        threshold,
        grid,
        supports,
        violation_rate: violations as f64 / n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaceboFamily {
    Gaussian,
    Binary,
    Poisson,
}

/// Per-period GLM fit: returns the treatment coefficient, its variance,
/// and (Gaussian only) the residual variance.
fn glm_treatment_coef(
    y: &[f64],
    a: &[u8],
    x: &PointSet,
    family: PlaceboFamily,
) -> Result<(f64, f64, f64)> {
    let n = y.len();
    let p = 2 + x.dim();
    let design = DMatrix::from_fn(n, p, |i, j| match j {
        0 => 1.0,
        1 => a[i] as f64,
        _ => x.row(i)[j - 2],
    });
    let yv = DVector::from_column_slice(y);
    match family {
        PlaceboFamily::Gaussian => {
            let xtx = design.transpose() * &design;
            let xty = design.transpose() * &yv;
            let chol = xtx
                .clone()
                .cholesky()
                .ok_or(Error::NonFiniteInput { op: "placebo_ols" })?;
            let beta = chol.solve(&xty);
            let resid = &yv - &design * &beta;
            let sigma2 = resid.norm_squared() / (n - p) as f64;
            let xtx_inv = chol.inverse();
            Ok((beta[1], sigma2 * xtx_inv[(1, 1)], sigma2))
        }
        PlaceboFamily::Binary | PlaceboFamily::Poisson => {
            let mut beta = DVector::zeros(p);
            for _ in 0..50 {
                let eta = &design * &beta;
                let (mu, w): (Vec<f64>, Vec<f64>) = match family {
                    PlaceboFamily::Binary => {
                        let mu: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
                        let w = mu.iter().map(|&m| (m * (1.0 - m)).max(1e-10)).collect();
                        (mu, w)
                    }
                    _ => {
                        let mu: Vec<f64> = eta.iter().map(|&e| e.exp().min(1e6)).collect();
                        let w = mu.iter().map(|&m| m.max(1e-10)).collect();
                        (mu, w)
                    }
                };
                let mut xtwx = DMatrix::zeros(p, p);
                let mut score = DVector::zeros(p);
                for i in 0..n {
                    let xi = design.row(i).transpose();
                    xtwx += &xi * xi.transpose() * w[i];
                    score += &xi * (y[i] - mu[i]);
                }
                let chol = xtwx.clone().cholesky().ok_or(Error::NonFiniteInput {
                    op: "placebo_irls",
                })?;
                let step = chol.solve(&score);
                beta += &step;
                if step.norm() < 1e-10 {
                    break;
                }
            }
            // Recompute the information at the solution for the variance.
            let eta = &design * &beta;
            let w: Vec<f64> = match family {
                PlaceboFamily::Binary => eta
                    .iter()
                    .map(|&e| {
                        let m = expit(e);
                        (m * (1.0 - m)).max(1e-10)
                    })
                    .collect(),
                _ => eta.iter().map(|&e| e.exp().max(1e-10).min(1e6)).collect(),
            };
            let mut xtwx = DMatrix::zeros(p, p);
            for i in 0..n {
                let xi = design.row(i).transpose();
                xtwx += &xi * xi.transpose() * w[i];
            }
            let inv = xtwx.cholesky().ok_or(Error::NonFiniteInput {
                op: "placebo_irls",
            })?;
            Ok((beta[1], inv.inverse()[(1, 1)], 1.0))
        }
    }
}

/// Wald test that the period-specific treatment coefficients agree across
/// the T+1 pre-treatment periods (Gaussian coefficients are scaled by the
/// period residual variance before comparison). Returns the statistic and
/// its chi-square(T) p-value.
pub fn placebo_orec_test(
    pre_periods: &[Vec<f64>],
    a: &[u8],
    x: &PointSet,
    family: PlaceboFamily,
) -> Result<(f64, f64)> {
    let t_plus_1 = pre_periods.len();
    if t_plus_1 < 2 {
        return Err(Error::TooFewPeriods { got: t_plus_1 });
    }
    let mut theta = Vec::with_capacity(t_plus_1);
    let mut var_theta = Vec::with_capacity(t_plus_1);
    for y in pre_periods {
        if y.len() != a.len() {
            return Err(Error::LengthMismatch {
                column: "pre_period",
                expected: a.len(),
                got: y.len(),
            });
        }
        let (gamma, var_gamma, sigma2) = glm_treatment_coef(y, a, x, family)?;
        match family {
            PlaceboFamily::Gaussian => {
                // Delta method for γ̂/σ̂²: γ̂ and σ̂² are independent under
                // OLS, and var(σ̂²) = 2σ⁴/(n−p).
                let dof = (y.len() - (2 + x.dim())) as f64;
                theta.push(gamma / sigma2);
                var_theta
                    .push((var_gamma + gamma * gamma * 2.0 / dof) / (sigma2 * sigma2));
            }
            _ => {
                theta.push(gamma);
                var_theta.push(var_gamma);
            }
        }
    }
    let t = t_plus_1 - 1;
    // Successive differences; the periods are fit on independent outcome
    // draws, so the covariance of the differences is tridiagonal.
    let d = DVector::from_fn(t, |i, _| theta[i] - theta[i + 1]);
    let mut cov = DMatrix::zeros(t, t);
    for i in 0..t {
        cov[(i, i)] = var_theta[i] + var_theta[i + 1];
        if i + 1 < t {
            cov[(i, i + 1)] = -var_theta[i + 1];
            cov[(i + 1, i)] = -var_theta[i + 1];
        }
    }
    let chol = cov.cholesky().ok_or(Error::NonFiniteInput {
        op: "placebo_wald",
    })?;
    let stat = d.dot(&chol.solve(&d));
    let dist = ChiSquared::new(t as f64)
        .map_err(|_| Error::TooFewPeriods { got: t_plus_1 })?;
    let p_value = 1.0 - dist.cdf(stat);
    Ok((stat, p_value))
}

/// Draws a multi-period Gaussian panel for placebo testing: period t has
/// Y_t = 1 + γ_t·A + 0.5·X₁ + σ·ε.
pub fn simulate_placebo_panel(
    n: usize,
    gammas: &[f64],
    sigma: f64,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<u8>, PointSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xflat: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let x = PointSet::from_flat(xflat, 1).expect("finite draws");
    let a: Vec<u8> = (0..n)
        .map(|i| (rng.gen::<f64>() < expit(x.row(i)[0] / 2.0)) as u8)
        .collect();
    let periods = gammas
        .iter()
        .map(|&g| {
            (0..n)
                .map(|i| {
                    1.0 + g * a[i] as f64
                        + 0.5 * x.row(i)[0]
                        + sigma * rng.sample::<f64, _>(StandardNormal)
                })
                .collect()
        })
        .collect();
    (periods, a, x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorKind {
    Orec,
    Pt,
    Qtt(f64),
}

impl EstimatorKind {
    pub fn label(&self) -> String {
        match self {
            EstimatorKind::Orec => "orec".to_string(),
            EstimatorKind::Pt => "pt".to_string(),
            EstimatorKind::Qtt(q) => format!("qtt{q}"),
        }
    }
}

/// Monte-Carlo metrics for one estimator.
#[derive(Debug, Clone)]
pub struct McReport {
    pub estimator: String,
    pub n: usize,
    pub reps: usize,
    pub mean_bias: f64,
    pub ese: f64,
    pub mean_ase: f64,
    pub mean_bse: f64,
    pub coverage_asymptotic: f64,
    pub coverage_bootstrap: f64,
    pub per_rep: Vec<f64>,
    pub warnings: Vec<Warning>,
}

impl McReport {
    pub fn csv_header() -> &'static str {
        "estimator,n,reps,mean_bias,ese,mean_ase,mean_bse,cov_asym,cov_boot"
    }

    pub fn csv_row(&self) -> String {
        let fmt = |v: f64| {
            if v.is_nan() {
                "NA".to_string()
            } else {
                format!("{v:.6}")
            }
        };
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.estimator,
            self.n,
            self.reps,
            fmt(self.mean_bias),
            fmt(self.ese),
            fmt(self.mean_ase),
            fmt(self.mean_bse),
            fmt(self.coverage_asymptotic),
            fmt(self.coverage_bootstrap),
        )
    }
}

fn nan_mean(vals: &[f64]) -> f64 {
    let finite: Vec<f64> = vals.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        f64::NAN
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

/// Runs each selected estimator on fresh draws with deterministically
/// mixed per-rep seeds and aggregates bias, spread, average standard
/// errors, and coverage.
pub fn monte_carlo_study(
    spec: &DgpSpec,
    reps: usize,
    config: &EstimatorConfig,
    estimators: &[EstimatorKind],
) -> Result<Vec<McReport>> {
    if reps < 1 {
        return Err(Error::InvalidConfig("reps must be >= 1".into()));
    }
    struct Acc {
        estimates: Vec<f64>,
        ases: Vec<f64>,
        bses: Vec<f64>,
        cov_asym: Vec<f64>,
        cov_boot: Vec<f64>,
        warnings: Vec<Warning>,
    }
    let mut accs: Vec<Acc> = estimators
        .iter()
        .map(|_| Acc {
            estimates: Vec::with_capacity(reps),
            ases: Vec::new(),
            bses: Vec::new(),
            cov_asym: Vec::new(),
            cov_boot: Vec::new(),
            warnings: Vec::new(),
        })
        .collect();
    let binary = spec.outcome_kind() == OutcomeKind::Binary;
    for r in 0..reps {
        let rep_spec = DgpSpec {
            seed: mix_seed(spec.seed, r as u64),
            ..*spec
        };
        let data = simulate(&rep_spec)?;
        for (e, kind) in estimators.iter().enumerate() {
            let mut cfg = config.clone();
            cfg.seed = mix_seed(config.seed, r as u64);
            match kind {
                EstimatorKind::Orec => {
                    let truth = spec.true_att();
                    let est = if binary {
                        estimate_att_binary(&data, &cfg)?
                    } else {
                        estimate_att(&data, &cfg)?
                    };
                    accs[e].estimates.push(est.tau_hat);
                    accs[e].ases.push(est.ase);
                    accs[e]
                        .cov_asym
                        .push((est.ci.0 <= truth && truth <= est.ci.1) as u8 as f64);
                    if let (Some(se), Some(ci)) = (est.se_boot, est.ci_boot) {
                        accs[e].bses.push(se);
                        accs[e]
                            .cov_boot
                            .push((ci.0 <= truth && truth <= ci.1) as u8 as f64);
                    }
                    accs[e].warnings.extend(est.warnings);
                }
                EstimatorKind::Pt => {
                    // Skip the expensive resample bootstrap inside the
                    // study; only the point estimate feeds the metrics.
                    cfg.bootstrap_b = 0;
                    let est = pt_baseline_att(&data, &cfg)?;
                    accs[e].estimates.push(est.tau_hat);
                }
                EstimatorKind::Qtt(q) => {
                    let truth = spec.true_qtt(*q).ok_or(Error::NoClosedForm)?;
                    let est = estimate_qtt(&data, &cfg, *q)?;
                    accs[e].estimates.push(est.theta_hat);
                    accs[e].ases.push(est.ase);
                    if let Some(ci) = est.ci {
                        accs[e]
                            .cov_asym
                            .push((ci.0 <= truth && truth <= ci.1) as u8 as f64);
                    }
                    accs[e].warnings.extend(est.warnings);
                }
            }
        }
    }
    let mut reports = Vec::with_capacity(estimators.len());
    for (e, kind) in estimators.iter().enumerate() {
        let acc = &mut accs[e];
        let truth = match kind {
            EstimatorKind::Qtt(q) => spec.true_qtt(*q).unwrap_or(f64::NAN),
            _ => spec.true_att(),
        };
        let mean_est = nan_mean(&acc.estimates);
        let ese = if reps == 1 {
            acc.warnings.push(Warning::SingleRep);
            0.0
        } else {
            let var = acc
                .estimates
                .iter()
                .map(|t| (t - mean_est) * (t - mean_est))
                .sum::<f64>()
                / (reps as f64 - 1.0);
            var.sqrt()
        };
        reports.push(McReport {
            estimator: kind.label(),
            n: spec.n,
            reps,
            mean_bias: mean_est - truth,
            ese,
            mean_ase: nan_mean(&acc.ases),
            mean_bse: nan_mean(&acc.bses),
            coverage_asymptotic: nan_mean(&acc.cov_asym),
            coverage_bootstrap: nan_mean(&acc.cov_boot),
            per_rep: std::mem::take(&mut acc.estimates),
            warnings: std::mem::take(&mut acc.warnings),
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spec(family: DgpFamily, n: usize, seed: u64) -> DgpSpec {
        DgpSpec { family, n, seed }
    }

    #[test]
    fn simulate_deterministic_given_seed() {
        let s = spec(DgpFamily::Sec6Continuous, 50, 9);
        let d1 = simulate(&s).unwrap();
        let d2 = simulate(&s).unwrap();
        assert_eq!(d1.y0, d2.y0);
        assert_eq!(d1.y1, d2.y1);
        assert_eq!(d1.a, d2.a);
    }

    #[test]
    fn sec6_continuous_control_pre_mean_near_three() {
        let d = simulate(&spec(DgpFamily::Sec6Continuous, 5000, 1)).unwrap();
        let ctrl = d.control_indices();
        let mean = ctrl.iter().map(|&i| d.y0[i]).sum::<f64>() / ctrl.len() as f64;
        assert!((mean - 3.0).abs() <= 0.2, "control pre mean {mean}");
    }

    #[test]
    fn sec6_binary_control_pre_rate_near_expit_minus_one() {
        let d = simulate(&spec(DgpFamily::Sec6Binary, 5000, 2)).unwrap();
        let ctrl = d.control_indices();
        let rate = ctrl.iter().map(|&i| d.y0[i]).sum::<f64>() / ctrl.len() as f64;
        assert!((rate - 0.269).abs() <= 0.03, "control pre rate {rate}");
        assert_eq!(d.outcome_kind, OutcomeKind::Binary);
    }

    #[test]
    fn odds_ratio_examples() {
        let s = spec(DgpFamily::Sec6Continuous, 10, 0);
        let v = true_odds_ratio(&s, 1.0, &[1.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(v, (0.2f64).exp(), epsilon = 1e-12);
        // Normalization at the reference outcome, every family.
        let fams = [
            DgpFamily::Sec6Continuous,
            DgpFamily::Sec6Binary,
            DgpFamily::GaussianCustom(GaussianCustomParams::default()),
            DgpFamily::BernoulliCustom(BernoulliCustomParams::default()),
            DgpFamily::PoissonCustom(PoissonCustomParams::default()),
            DgpFamily::NoConfounding(NoConfoundingParams::default()),
        ];
        for f in fams {
            let v = true_odds_ratio(&spec(f, 10, 0), 0.0, &[0.7]).unwrap();
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
        // Gaussian display: shift δ, variance s² → exp{yδ/s²}.
        let p = GaussianCustomParams {
            g1: 0.8,
            s1: 2.0,
            ..GaussianCustomParams::default()
        };
        let v = true_odds_ratio(&spec(DgpFamily::GaussianCustom(p), 10, 0), 1.5, &[0.0]).unwrap();
        assert_abs_diff_eq!(v, (1.5 * 0.8 / 4.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn unknown_dgp_name_rejected() {
        assert!(matches!(
            DgpSpec::parse("nonsense", 100, 0),
            Err(Error::UnknownDgp(_))
        ));
        assert!(DgpSpec::parse("sec6-continuous", 100, 0).is_ok());
    }

    #[test]
    fn placebo_too_few_periods() {
        let (periods, a, x) = simulate_placebo_panel(50, &[0.5], 1.0, 3);
        assert!(matches!(
            placebo_orec_test(&periods, &a, &x, PlaceboFamily::Gaussian),
            Err(Error::TooFewPeriods { .. })
        ));
    }

    #[test]
    fn placebo_detects_gross_drift() {
        let (periods, a, x) = simulate_placebo_panel(800, &[0.5, 1.5, 2.5], 1.0, 4);
        let (_, p) = placebo_orec_test(&periods, &a, &x, PlaceboFamily::Gaussian).unwrap();
        assert!(p < 0.05, "p = {p}");
    }

    #[test]
    fn placebo_accepts_constant_coefficients_typically() {
        let (periods, a, x) = simulate_placebo_panel(800, &[0.5, 0.5, 0.5], 1.0, 5);
        let (_, p) = placebo_orec_test(&periods, &a, &x, PlaceboFamily::Gaussian).unwrap();
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn overlap_zero_threshold_no_violations() {
        let d = simulate(&spec(
            DgpFamily::NoConfounding(NoConfoundingParams::default()),
            120,
            6,
        ))
        .unwrap();
        let rep = overlap_diagnostic(&d, None, 0.0).unwrap();
        assert_abs_diff_eq!(rep.violation_rate, 0.0);
        let lo = rep.grid[0];
        let hi = *rep.grid.last().unwrap();
        for s in &rep.supports {
            for (a, b) in s {
                assert_abs_diff_eq!(*a, lo);
                assert_abs_diff_eq!(*b, hi);
            }
        }
    }

    #[test]
    fn monte_carlo_single_rep_flags_warning() {
        let s = spec(
            DgpFamily::NoConfounding(NoConfoundingParams {
                d: 1,
                ..NoConfoundingParams::default()
            }),
            150,
            11,
        );
        let config = EstimatorConfig {
            k_folds: 2,
            bootstrap_b: 20,
            ..EstimatorConfig::default()
        };
        let reports = monte_carlo_study(&s, 1, &config, &[EstimatorKind::Orec]).unwrap();
        assert_eq!(reports.len(), 1);
        assert_abs_diff_eq!(reports[0].ese, 0.0);
        assert!(reports[0]
            .warnings
            .iter()
            .any(|w| matches!(w, Warning::SingleRep)));
        let row = reports[0].csv_row();
        assert_eq!(row.split(',').count(), 9);
        assert_eq!(McReport::csv_header().split(',').count(), 9);
    }
}
