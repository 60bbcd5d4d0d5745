//! Closed-form adversarial (minimax) RKHS estimation of the treated-odds
//! weight β₁ and the counterfactual regression μ, plus the reparametrized
//! density ratio r̂₂ and the ζ terms feeding both programs.
//!
//! Both nuisances solve the same regularized linear system
//!   γ̂ = −{K Q₀ Γ Q₀ K + M⁻¹ λ K}† {K Q₀ Γ q₁},
//! with Γ = 0.25·K_ξ{M⁻¹K_ξ + λ_ξ I}†, where Q₀ = diag(ζ̂₁) and q₁ is the
//! treatment vector (for β₁) or ζ̂₂ (for μ). Since Q₀ is shared, a single
//! `MinimaxSolver` factorization serves both fits.

use crate::data::CvRisk;
use crate::density_ratio::Alpha1Fit;
use crate::error::{Error, Result, Warning};
use crate::kernel::{gram, kernel_eval_unchecked, KernelConfig, PointSet, SymPinv, PINV_REL_TOL};
use crate::linalg;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Bandwidths and regularization strengths for one minimax program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimaxHyperParams {
    pub kappa_beta: f64,
    pub kappa_xi: f64,
    pub lambda_beta: f64,
    pub lambda_xi: f64,
}

impl MinimaxHyperParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("kappa_beta", self.kappa_beta),
            ("kappa_xi", self.kappa_xi),
            ("lambda_beta", self.lambda_beta),
            ("lambda_xi", self.lambda_xi),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-unit ζ̂₁(O), ζ̂₂(O) computed from the Step-1 nuisances.
#[derive(Debug, Clone)]
pub struct ZetaTerms {
    pub zeta1: Vec<f64>,
    pub zeta2: Vec<f64>,
}

/// The reparametrized density ratio
/// r̂₂(y, a, x) = [a/β̂₀(x) + (1−a)·α̂₁(y, x)]·r̂₁(y, x), clamped.
pub fn r2_hat(
    y: f64,
    a: u8,
    x: &[f64],
    alpha1: &impl Fn(f64, &[f64]) -> f64,
    r1: &impl Fn(f64, &[f64]) -> f64,
    beta0: &impl Fn(&[f64]) -> f64,
    clamp: (f64, f64),
) -> f64 {
    let front = if a == 1 {
        1.0 / beta0(x)
    } else {
        alpha1(y, x)
    };
    (front * r1(y, x)).clamp(clamp.0, clamp.1)
}

/// Computes ζ̂₁ and ζ̂₂ per unit:
/// ζ̂₁ = −(1−A)·α̂₁(Y₁,X) − (2A−1)·r̂₂(Y₀,A,X);
/// ζ̂₂ = Y₁(1−A)·α̂₁(Y₁,X) + Y₀(2A−1)·r̂₂(Y₀,A,X).
pub fn zeta_terms(
    y0: &[f64],
    y1: &[f64],
    a: &[u8],
    x: &PointSet,
    alpha1: &impl Fn(f64, &[f64]) -> f64,
    r2: &impl Fn(f64, u8, &[f64]) -> f64,
) -> ZetaTerms {
    let n = y0.len();
    let mut zeta1 = Vec::with_capacity(n);
    let mut zeta2 = Vec::with_capacity(n);
    for i in 0..n {
        let xi = x.row(i);
        let sgn = 2.0 * a[i] as f64 - 1.0;
        let ctrl = 1.0 - a[i] as f64;
        let al = if a[i] == 0 { alpha1(y1[i], xi) } else { 0.0 };
        let r2v = r2(y0[i], a[i], xi);
        zeta1.push(-ctrl * al - sgn * r2v);
        zeta2.push(y1[i] * ctrl * al + y0[i] * sgn * r2v);
    }
    ZetaTerms { zeta1, zeta2 }
}

/// Shared factorization of the closed-form system for a fixed adversary
/// weighting Q₀ = diag(q0). Solving for a new q₁ is a cheap multiply.
pub struct MinimaxSolver {
    support_x: PointSet,
    k_beta: DMatrix<f64>,
    gamma_mat: DMatrix<f64>,
    /// D = diag(q0)·K_β.
    d: DMatrix<f64>,
    system: DMatrix<f64>,
    system_pinv: SymPinv,
    hp: MinimaxHyperParams,
    pub warning: Option<Warning>,
}

impl MinimaxSolver {
    pub fn new(support_x: &PointSet, q0: &[f64], hp: MinimaxHyperParams) -> Result<Self> {
        hp.validate()?;
        let m = support_x.n();
        if m < 2 {
            return Err(Error::TooFewPoints { need: 2, got: m });
        }
        if q0.len() != m {
            return Err(Error::LengthMismatch {
                column: "q0",
                expected: m,
                got: q0.len(),
            });
        }
        let mf = m as f64;
        let kb_cfg = KernelConfig::new(hp.kappa_beta)?;
        let kx_cfg = KernelConfig::new(hp.kappa_xi)?;
        let k_beta = gram(support_x, support_x, &kb_cfg)?.entries;
        let k_xi = gram(support_x, support_x, &kx_cfg)?.entries;

        // Γ = 0.25·K_ξ{M⁻¹K_ξ + λ_ξ I}†. The bracket is PD for λ_ξ > 0, so
        // a Cholesky solve applies; K_ξ commutes with the bracket, hence the
        // product is symmetric and we symmetrize away float drift.
        let mut bracket = k_xi.clone() / mf;
        for i in 0..m {
            bracket[(i, i)] += hp.lambda_xi;
        }
        let c = match linalg::chol_solve(&bracket, &k_xi) {
            Some(c) => c,
            None => SymPinv::new(&bracket, PINV_REL_TOL)?.apply(&k_xi),
        };
        let gamma_mat = (&c + c.transpose()).scale(0.125);

        // D = Q₀ K_β (row-scaled Gram).
        let mut d = k_beta.clone();
        for (i, &q) in q0.iter().enumerate() {
            d.row_mut(i).scale_mut(q);
        }
        // System B = D' Γ D + M⁻¹ λ_β K_β.
        let gd = linalg::matmul(&gamma_mat, &d);
        let mut system = linalg::gemm(&d, true, &gd, false);
        system += k_beta.scale(hp.lambda_beta / mf);
        let system = (&system + system.transpose()).scale(0.5);
        let system_pinv = SymPinv::new(&system, PINV_REL_TOL)?;
        let warning = if system_pinv.n_retained() == 0 {
            Some(Warning::SingularSystem { op: "minimax" })
        } else {
            None
        };
        Ok(Self {
            support_x: support_x.clone(),
            k_beta,
            gamma_mat,
            d,
            system,
            system_pinv,
            hp,
            warning,
        })
    }

    /// Right-hand side K_β Q₀ Γ q₁ of the stationarity system.
    pub fn rhs(&self, q1: &[f64]) -> DVector<f64> {
        let q1v = DMatrix::from_column_slice(q1.len(), 1, q1);
        let gq = linalg::matmul(&self.gamma_mat, &q1v);
        DVector::from_column_slice(linalg::gemm(&self.d, true, &gq, false).as_slice())
    }

    /// Coefficients γ̂ = −B†·rhs(q₁).
    pub fn solve(&self, q1: &[f64]) -> DVector<f64> {
        let rhs = self.rhs(q1);
        let sol = self
            .system_pinv
            .apply(&DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()));
        -DVector::from_column_slice(sol.as_slice())
    }

    /// Norm of the stationarity residual B·γ + rhs projected onto the
    /// retained eigenspace (zero for the exact closed-form solution).
    pub fn stationarity_residual(&self, gamma: &DVector<f64>, q1: &[f64]) -> f64 {
        let r = &self.system * gamma + self.rhs(q1);
        self.system_pinv
            .project(&DMatrix::from_column_slice(r.len(), 1, r.as_slice()))
            .norm()
    }

    /// Scale of the stationarity system, for relative residual checks.
    pub fn system_scale(&self) -> f64 {
        self.system.norm()
    }

    /// The profiled adversarial objective
    /// J(γ) = u'Γu + (λ_β/M)·γ'K_βγ with u = Q₀K_βγ + q₁, whose gradient
    /// vanishes at the closed-form solution.
    pub fn profiled_objective(&self, gamma: &DVector<f64>, q1: &[f64]) -> f64 {
        let mut u = &self.d * gamma;
        for (i, &q) in q1.iter().enumerate() {
            u[i] += q;
        }
        let quad = u.dot(&(&self.gamma_mat * &u));
        let pen = gamma.dot(&(&self.k_beta * gamma)) * self.hp.lambda_beta
            / self.support_x.n() as f64;
        quad + pen
    }

    pub fn hyperparams(&self) -> MinimaxHyperParams {
        self.hp
    }
}

/// Plug-in evaluator for β₁ built from the Step-1 fits:
/// β̂₁,PI(x) = odds of A given x (kernel-weighted) divided by the
/// kernel-weighted control mean of α̂₁(Y₁, x).
#[derive(Debug, Clone)]
pub struct PluginBeta1 {
    /// Estimation-fold covariates and treatment indicators.
    pub est_x: PointSet,
    pub a: Vec<u8>,
    /// Control subset with post-period outcomes.
    pub ctrl_x: PointSet,
    pub ctrl_y1: Vec<f64>,
    pub alpha1: Alpha1Fit,
    pub kernel_x: KernelConfig,
    pub clamp: (f64, f64),
}

impl PluginBeta1 {
    /// Plug-in values at a batch of probe covariates.
    pub fn values(&self, probes: &PointSet) -> Vec<f64> {
        // alpha_grid[(j, i)] = α̂₁(ctrl_y1[j], probes[i]).
        let alpha_grid = self.alpha1.eval_grid(&self.ctrl_y1, probes);
        let mut out = Vec::with_capacity(probes.n());
        for i in 0..probes.n() {
            let p = probes.row(i);
            let (mut w1, mut w0) = (0.0, 0.0);
            for (j, xj) in self.est_x.iter_rows().enumerate() {
                let k = kernel_eval_unchecked(p, xj, &self.kernel_x);
                if self.a[j] == 1 {
                    w1 += k;
                } else {
                    w0 += k;
                }
            }
            let odds = if w0 > 0.0 { w1 / w0 } else { f64::INFINITY };
            let (mut num, mut den) = (0.0, 0.0);
            for (j, xj) in self.ctrl_x.iter_rows().enumerate() {
                let k = kernel_eval_unchecked(p, xj, &self.kernel_x);
                num += k * alpha_grid[(j, i)];
                den += k;
            }
            let alpha_bar = if den > 0.0 { num / den } else { 1.0 };
            out.push((odds / alpha_bar).clamp(self.clamp.0, self.clamp.1));
        }
        out
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let probe = PointSet::from_flat(x.to_vec(), x.len().max(1))
            .unwrap_or_else(|_| PointSet::empty_dim(1));
        let probe = if x.is_empty() {
            PointSet::empty_dim(1)
        } else {
            probe
        };
        self.values(&probe)[0]
    }
}

/// A fitted minimax nuisance: a kernel expansion over the estimation-fold
/// covariates, optionally multiplied by a plug-in anchor, optionally
/// clamped.
#[derive(Debug, Clone)]
pub struct MinimaxFit {
    pub support_x: PointSet,
    pub gamma: DVector<f64>,
    pub kernel: KernelConfig,
    pub anchor: Option<PluginBeta1>,
    pub clamp: Option<(f64, f64)>,
    pub warning: Option<Warning>,
}

impl MinimaxFit {
    fn expansion(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (j, s) in self.support_x.iter_rows().enumerate() {
            acc += self.gamma[j] * kernel_eval_unchecked(x, s, &self.kernel);
        }
        acc
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let anchor = match &self.anchor {
            Some(p) => p.value(x),
            None => 1.0,
        };
        let raw = anchor * self.expansion(x);
        match self.clamp {
            Some((lo, hi)) => raw.clamp(lo, hi),
            None => raw,
        }
    }

    /// Batch evaluation (anchored fits batch the anchor too).
    pub fn eval_batch(&self, probes: &PointSet) -> Vec<f64> {
        let anchors = match &self.anchor {
            Some(p) => p.values(probes),
            None => vec![1.0; probes.n()],
        };
        probes
            .iter_rows()
            .zip(anchors)
            .map(|(x, anc)| {
                let raw = anc * self.expansion(x);
                match self.clamp {
                    Some((lo, hi)) => raw.clamp(lo, hi),
                    None => raw,
                }
            })
            .collect()
    }
}

/// Fits β̂₁ by the closed-form minimax program with q₁ the treatment
/// vector; the evaluator is clamped positive via `ratio_clamp`.
pub fn fit_beta1_minimax(
    support_x: &PointSet,
    zeta: &ZetaTerms,
    a: &[u8],
    hp: MinimaxHyperParams,
    ratio_clamp: (f64, f64),
) -> Result<MinimaxFit> {
    let solver = MinimaxSolver::new(support_x, &zeta.zeta1, hp)?;
    Ok(beta1_from_solver(&solver, a, ratio_clamp))
}

pub(crate) fn beta1_from_solver(
    solver: &MinimaxSolver,
    a: &[u8],
    ratio_clamp: (f64, f64),
) -> MinimaxFit {
    let q1: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let gamma = solver.solve(&q1);
    MinimaxFit {
        support_x: solver.support_x.clone(),
        gamma,
        kernel: KernelConfig::new(solver.hp.kappa_beta).unwrap(),
        anchor: None,
        clamp: Some(ratio_clamp),
        warning: solver.warning.clone(),
    }
}

/// Fits μ̂ by the mirrored program with q₁ = ζ̂₂. Continuous outcomes are
/// unclamped; binary outcomes clamp to [1e−3, 1−1e−3].
pub fn fit_mu_minimax(
    support_x: &PointSet,
    zeta: &ZetaTerms,
    hp: MinimaxHyperParams,
    binary: bool,
) -> Result<MinimaxFit> {
    let solver = MinimaxSolver::new(support_x, &zeta.zeta1, hp)?;
    Ok(mu_from_solver(&solver, &zeta.zeta2, binary))
}

pub(crate) fn mu_from_solver(solver: &MinimaxSolver, q1: &[f64], binary: bool) -> MinimaxFit {
    let gamma = solver.solve(q1);
    MinimaxFit {
        support_x: solver.support_x.clone(),
        gamma,
        kernel: KernelConfig::new(solver.hp.kappa_beta).unwrap(),
        anchor: None,
        clamp: if binary { Some((1e-3, 1.0 - 1e-3)) } else { None },
        warning: solver.warning.clone(),
    }
}

/// Ratio of the largest to smallest plug-in value beyond which the anchored
/// program replaces the plain one.
pub const ANCHOR_TRIGGER_RATIO: f64 = 10.0;

/// Fits β̂₁, switching to the anchored multiplicative-correction program
/// when the plug-in values vary by more than a factor of
/// `ANCHOR_TRIGGER_RATIO` over the fold: the correction b₁ is fitted with
/// the plug-in absorbed into the adversary weighting, and the returned
/// evaluator is anchor × b̂₁.
pub fn regularize_beta1(
    plugin: &PluginBeta1,
    support_x: &PointSet,
    zeta: &ZetaTerms,
    a: &[u8],
    hp: MinimaxHyperParams,
    ratio_clamp: (f64, f64),
) -> Result<MinimaxFit> {
    let pv = plugin.values(support_x);
    let max = pv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = pv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max / min > ANCHOR_TRIGGER_RATIO) {
        return fit_beta1_minimax(support_x, zeta, a, hp, ratio_clamp);
    }
    let q0_anchored: Vec<f64> = zeta
        .zeta1
        .iter()
        .zip(&pv)
        .map(|(z, p)| z * p)
        .collect();
    let solver = MinimaxSolver::new(support_x, &q0_anchored, hp)?;
    let q1: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let gamma = solver.solve(&q1);
    Ok(MinimaxFit {
        support_x: support_x.clone(),
        gamma,
        kernel: KernelConfig::new(hp.kappa_beta).unwrap(),
        anchor: Some(plugin.clone()),
        clamp: Some(ratio_clamp),
        warning: solver.warning,
    })
}

/// Selects hyperparameters by V-fold cross-validation of the projected
/// adversarial risk (or the MSE against the plug-in evaluator). Ties are
/// broken by the smallest (λ_β, λ_ξ) lexicographically.
#[allow(clippy::too_many_arguments)]
pub fn cv_select_hyperparams(
    support_x: &PointSet,
    q0: &[f64],
    q1: &[f64],
    grid: &[MinimaxHyperParams],
    v_folds: usize,
    seed: u64,
    risk: CvRisk,
    plugin: Option<&PluginBeta1>,
) -> Result<MinimaxHyperParams> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    if v_folds < 2 {
        return Err(Error::InvalidConfig("v_folds must be >= 2".into()));
    }
    let m = support_x.n();
    let mut order: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let splits: Vec<Vec<usize>> = (0..v_folds)
        .map(|v| order.iter().copied().skip(v).step_by(v_folds).collect())
        .collect();

    let plugin_vals_all = plugin.map(|p| p.values(support_x));

    let mut best: Option<(f64, MinimaxHyperParams)> = None;
    for hp in grid {
        let mut total = 0.0;
        for val_idx in &splits {
            let train_idx: Vec<usize> = (0..m).filter(|i| !val_idx.contains(i)).collect();
            if train_idx.len() < 2 || val_idx.len() < 2 {
                continue;
            }
            let xs_tr = support_x.select(&train_idx);
            let q0_tr: Vec<f64> = train_idx.iter().map(|&i| q0[i]).collect();
            let q1_tr: Vec<f64> = train_idx.iter().map(|&i| q1[i]).collect();
            let solver = MinimaxSolver::new(&xs_tr, &q0_tr, *hp)?;
            let gamma = solver.solve(&q1_tr);
            let xs_val = support_x.select(val_idx);
            let kb = KernelConfig::new(hp.kappa_beta)?;
            let k_cross = gram(&xs_val, &xs_tr, &kb)?.entries;
            let f_val = &k_cross * &gamma;
            total += match risk {
                CvRisk::Projected => {
                    let nv = val_idx.len();
                    // Moment residuals u = q0 ⊙ f + q1 on the validation
                    // split, measured through the validation Γ kernel.
                    let mut u = DVector::zeros(nv);
                    for (pos, &i) in val_idx.iter().enumerate() {
                        u[pos] = q0[i] * f_val[pos] + q1[i];
                    }
                    let kx = KernelConfig::new(hp.kappa_xi)?;
                    let k_xi = gram(&xs_val, &xs_val, &kx)?.entries;
                    let mut bracket = k_xi.clone() / nv as f64;
                    for i in 0..nv {
                        bracket[(i, i)] += hp.lambda_xi;
                    }
                    let gu = match linalg::chol_solve(
                        &bracket,
                        &DMatrix::from_column_slice(nv, 1, u.as_slice()),
                    ) {
                        Some(s) => 0.25 * (&k_xi * s),
                        None => {
                            0.25
                                * (&k_xi
                                    * SymPinv::new(&bracket, PINV_REL_TOL)?.apply(
                                        &DMatrix::from_column_slice(nv, 1, u.as_slice()),
                                    ))
                        }
                    };
                    u.dot(&DVector::from_column_slice(gu.as_slice())) / (nv * nv) as f64
                }
                CvRisk::MseVsPlugin => {
                    let pv = plugin_vals_all
                        .as_ref()
                        .ok_or_else(|| {
                            Error::InvalidConfig(
                                "MseVsPlugin CV requires a plug-in evaluator".into(),
                            )
                        })?;
                    val_idx
                        .iter()
                        .enumerate()
                        .map(|(pos, &i)| {
                            let d = f_val[pos] - pv[i];
                            d * d
                        })
                        .sum::<f64>()
                        / val_idx.len() as f64
                }
            };
        }
        let better = match &best {
            None => true,
            Some((best_risk, best_hp)) => {
                total < *best_risk
                    || (total == *best_risk
                        && (hp.lambda_beta, hp.lambda_xi)
                            < (best_hp.lambda_beta, best_hp.lambda_xi))
            }
        };
        if better {
            best = Some((total, *hp));
        }
    }
    Ok(best.expect("non-empty grid always yields a candidate").1)
}
