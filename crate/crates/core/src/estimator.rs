//! Cross-fitted estimation: per-fold nuisance fitting, EIF evaluation,
//! ATT and QTT point estimates, asymptotic and multiplier-bootstrap
//! inference, median adjustment over repeated cross-fits, the binary-
//! outcome fast path, and the parallel-trends baseline.

use crate::data::{
    make_folds, BandwidthPolicy, EstimatorConfig, FoldAssignment, LambdaPolicy, OutcomeKind,
    PanelDataset,
};
use crate::density_ratio::{
    derive_alpha1_beta0, fit_kl_ratio, select_reference_outcome, Alpha1Fit, Beta0Fit,
    DensityRatioFit, KlOptions, ReferenceMode, ReferenceOutcome,
};
use crate::error::{Error, Result, Warning};
use crate::kernel::{
    kernel_eval_unchecked, median_heuristic, KernelConfig, KernelRidgeSet, PointSet,
};
use crate::minimax::{
    beta1_from_solver, cv_select_hyperparams, mu_from_solver, zeta_terms, MinimaxFit,
    MinimaxHyperParams, MinimaxSolver, PluginBeta1, ANCHOR_TRIGGER_RATIO,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::Arc;

/// Deterministically derives a stream seed from a master seed
/// (SplitMix64-style mixing), so repetitions, folds, and bootstrap draws
/// replay exactly.
pub fn mix_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Point-evaluator bundle required by the EIF.
pub trait Nuisances {
    fn beta1(&self, x: &[f64]) -> f64;
    fn alpha1(&self, y: f64, x: &[f64]) -> f64;
    fn mu(&self, x: &[f64]) -> f64;
    fn r2(&self, y: f64, a: u8, x: &[f64]) -> f64;
    /// R̂(y, a, x) = β̂₁(x)·r̂₂(y, a, x).
    fn rr(&self, y: f64, a: u8, x: &[f64]) -> f64 {
        self.beta1(x) * self.r2(y, a, x)
    }
}

/// The EIF integrand
/// ψ̂₀ = β̂₁(x)α̂₁(y₁,x)(1−a){y₁−μ̂(x)} + aμ̂(x) + (2a−1)R̂(y₀,a,x){y₀−μ̂(x)}.
pub fn eif_psi0(y0: f64, y1: f64, a: u8, x: &[f64], ns: &impl Nuisances) -> f64 {
    let mu = ns.mu(x);
    let b1 = ns.beta1(x);
    let sgn = 2.0 * a as f64 - 1.0;
    let ctrl_term = if a == 0 {
        b1 * ns.alpha1(y1, x) * (y1 - mu)
    } else {
        0.0
    };
    let a_term = a as f64 * mu;
    let aug = sgn * b1 * ns.r2(y0, a, x) * (y0 - mu);
    ctrl_term + a_term + aug
}

/// The per-fold nuisance bundle for the continuous path.
pub struct NuisanceSet {
    pub alpha1: Alpha1Fit,
    pub beta0: Beta0Fit,
    pub r1: Arc<DensityRatioFit>,
    pub beta1: MinimaxFit,
    pub mu: MinimaxFit,
    pub clamp: (f64, f64),
    /// Estimation-fold control data and the covariate kernel, kept for the
    /// conditional-CDF weighting in the quantile estimator.
    pub est_ctrl_x: PointSet,
    pub est_ctrl_y1: Vec<f64>,
    pub kernel_x: KernelConfig,
    pub warnings: Vec<Warning>,
}

impl Nuisances for NuisanceSet {
    fn beta1(&self, x: &[f64]) -> f64 {
        self.beta1.eval(x)
    }
    fn alpha1(&self, y: f64, x: &[f64]) -> f64 {
        self.alpha1.eval(y, x)
    }
    fn mu(&self, x: &[f64]) -> f64 {
        self.mu.eval(x)
    }
    fn r2(&self, y: f64, a: u8, x: &[f64]) -> f64 {
        crate::minimax::r2_hat(
            y,
            a,
            x,
            &|yy, xx| self.alpha1.eval(yy, xx),
            &|yy, xx| self.r1.eval(yy, xx),
            &|xx| self.beta0.eval(xx),
            self.clamp,
        )
    }
}

fn resolve_bandwidth(policy: BandwidthPolicy, points: &PointSet) -> Result<KernelConfig> {
    match policy {
        BandwidthPolicy::MedianHeuristic => median_heuristic(points),
        BandwidthPolicy::Fixed(k) => KernelConfig::new(k),
    }
}

/// Ratio of the adversary penalty λ_ξ to the target penalty λ_β under
/// `LambdaPolicy::Fixed` (continuous path only).
const XI_LAMBDA_FACTOR: f64 = 10.0;

/// The μ̂ program runs with penalties `MU_LAMBDA_FACTOR` times lighter than
/// the β̂₁ program's. β̂₁ benefits from heavy shrinkage (it multiplies the
/// volatile α̂₁ weights, and a wiggly fit feeds bias straight into τ̂), while
/// μ̂ must track E[Y₁ | A = 1, X] closely: over-smoothing μ̂ inflates the
/// (y − μ̂) residuals in the influence function and with them the asymptotic
/// standard error, without making the point estimate any more stable.
const MU_LAMBDA_FACTOR: f64 = 30.0;

fn resolve_hyperparams(
    config: &EstimatorConfig,
    est_x: &PointSet,
    q0: &[f64],
    q1: &[f64],
    plugin: Option<&PluginBeta1>,
    cv_seed: u64,
) -> Result<MinimaxHyperParams> {
    let kappa = resolve_bandwidth(config.bandwidth, est_x)?.bandwidth;
    let m = est_x.n() as f64;
    match &config.lambda {
        LambdaPolicy::Auto => Ok(MinimaxHyperParams {
            kappa_beta: kappa,
            kappa_xi: kappa,
            lambda_beta: 1.0 / m,
            lambda_xi: 1.0 / m,
        }),
        // The adversary program is noisier than the target program (its
        // moment involves the ζ terms directly), so a fixed λ penalizes
        // the adversary ten times harder.
        LambdaPolicy::Fixed(l) => Ok(MinimaxHyperParams {
            kappa_beta: kappa,
            kappa_xi: kappa,
            lambda_beta: *l,
            lambda_xi: XI_LAMBDA_FACTOR * l,
        }),
        LambdaPolicy::GridCv(lambdas) => {
            let mut grid = Vec::with_capacity(lambdas.len() * lambdas.len());
            for &lb in lambdas {
                for &lx in lambdas {
                    grid.push(MinimaxHyperParams {
                        kappa_beta: kappa,
                        kappa_xi: kappa,
                        lambda_beta: lb,
                        lambda_xi: lx,
                    });
                }
            }
            cv_select_hyperparams(est_x, q0, q1, &grid, 3, cv_seed, config.cv_risk, plugin)
        }
    }
}

/// Fits all Step-1/Step-2 nuisances on the estimation fold (the complement
/// of the evaluation fold).
pub fn fit_fold_nuisances(
    data: &PanelDataset,
    est_idx: &[usize],
    config: &EstimatorConfig,
    fold_seed: u64,
) -> Result<NuisanceSet> {
    let est = data.select(est_idx);
    let clamp = config.ratio_clamp;
    let mut warnings = Vec::new();

    let ctrl_idx = est.control_indices();
    let trt_idx = est.treated_indices();
    if ctrl_idx.is_empty() {
        return Err(Error::DegenerateTreatmentArm { arm: 0 });
    }
    if trt_idx.is_empty() {
        return Err(Error::DegenerateTreatmentArm { arm: 1 });
    }

    let y0x = est.x.with_prepended(&est.y0);
    let y1x = est.x.with_prepended(&est.y1);
    let kernel_yx = resolve_bandwidth(config.bandwidth, &y0x)?;
    let opts = KlOptions::default();

    // Step 1: r̂₀ (treated vs control pre-period) and r̂₁ (control post vs
    // pre), both over (y, x) points.
    let r0 = fit_kl_ratio(
        &y0x.select(&trt_idx),
        &y0x.select(&ctrl_idx),
        &kernel_yx,
        &opts,
        clamp,
    )?;
    if let Some(w) = r0.warning() {
        warnings.push(w);
    }
    let ctrl_y0: Vec<f64> = ctrl_idx.iter().map(|&i| est.y0[i]).collect();
    let y_ref = match data.outcome_kind {
        OutcomeKind::Binary => ReferenceOutcome::Scalar(0.0),
        OutcomeKind::Continuous => select_reference_outcome(
            &ctrl_y0,
            &est.x.select(&ctrl_idx),
            ReferenceMode::GlobalMedian,
        )?,
    };
    let (alpha1, beta0) = derive_alpha1_beta0(r0, y_ref, est.p_treated())?;
    let r1 = fit_kl_ratio(
        &y1x.select(&ctrl_idx),
        &y0x.select(&ctrl_idx),
        &kernel_yx,
        &opts,
        clamp,
    )?;
    if let Some(w) = r1.warning() {
        warnings.push(w);
    }
    let r1 = Arc::new(r1);

    // ζ terms on the estimation fold.
    let alpha1_f = |y: f64, x: &[f64]| alpha1.eval(y, x);
    let r1_f = |y: f64, x: &[f64]| r1.eval(y, x);
    let beta0_f = |x: &[f64]| beta0.eval(x);
    let r2_f = |y: f64, a: u8, x: &[f64]| {
        crate::minimax::r2_hat(y, a, x, &alpha1_f, &r1_f, &beta0_f, clamp)
    };
    let zeta = zeta_terms(&est.y0, &est.y1, &est.a, &est.x, &alpha1_f, &r2_f);

    // Step 2: β̂₁ and μ̂ solve the same saddle-point system (same ζ̂₁), β̂₁
    // with the full penalties and μ̂ with penalties MU_LAMBDA_FACTOR lighter.
    let est_ctrl_x = est.x.select(&ctrl_idx);
    let est_ctrl_y1: Vec<f64> = ctrl_idx.iter().map(|&i| est.y1[i]).collect();
    let q1_a: Vec<f64> = est.a.iter().map(|&v| v as f64).collect();
    let hp_probe_plugin = PluginBeta1 {
        est_x: est.x.clone(),
        a: est.a.clone(),
        ctrl_x: est_ctrl_x.clone(),
        ctrl_y1: est_ctrl_y1.clone(),
        alpha1: alpha1.clone(),
        kernel_x: resolve_bandwidth(config.bandwidth, &est.x)?,
        clamp,
    };
    let hp = resolve_hyperparams(
        config,
        &est.x,
        &zeta.zeta1,
        &q1_a,
        Some(&hp_probe_plugin),
        fold_seed,
    )?;
    let mut plugin = hp_probe_plugin;
    plugin.kernel_x = KernelConfig::new(hp.kappa_beta)?;

    let solver = MinimaxSolver::new(&est.x, &zeta.zeta1, hp)?;
    if let Some(w) = &solver.warning {
        warnings.push(w.clone());
    }
    let binary = data.outcome_kind == OutcomeKind::Binary;
    let mu = {
        let mut hp_mu = hp;
        hp_mu.lambda_beta = hp.lambda_beta / MU_LAMBDA_FACTOR;
        hp_mu.lambda_xi = hp.lambda_xi / MU_LAMBDA_FACTOR;
        let mu_solver = MinimaxSolver::new(&est.x, &zeta.zeta1, hp_mu)?;
        if let Some(w) = &mu_solver.warning {
            warnings.push(w.clone());
        }
        mu_from_solver(&mu_solver, &zeta.zeta2, binary)
    };

    // β̂₁ with the plug-in anchor when its range is wide.
    let pv = plugin.values(&est.x);
    let pmax = pv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pmin = pv.iter().cloned().fold(f64::INFINITY, f64::min);
    let beta1 = if pmax / pmin > ANCHOR_TRIGGER_RATIO {
        let q0_anch: Vec<f64> = zeta.zeta1.iter().zip(&pv).map(|(z, p)| z * p).collect();
        let anch_solver = MinimaxSolver::new(&est.x, &q0_anch, hp)?;
        if let Some(w) = &anch_solver.warning {
            warnings.push(w.clone());
        }
        let gamma = anch_solver.solve(&q1_a);
        MinimaxFit {
            support_x: est.x.clone(),
            gamma,
            kernel: KernelConfig::new(hp.kappa_beta)?,
            anchor: Some(plugin),
            clamp: Some(clamp),
            warning: None,
        }
    } else {
        beta1_from_solver(&solver, &est.a, clamp)
    };

    Ok(NuisanceSet {
        alpha1,
        beta0,
        r1,
        beta1,
        mu,
        clamp,
        est_ctrl_x,
        est_ctrl_y1,
        kernel_x: KernelConfig::new(hp.kappa_beta)?,
        warnings,
    })
}

/// Per-unit EIF pieces from one cross-fit.
#[derive(Debug, Clone)]
pub struct EifRecord {
    /// ψ̂₀ evaluated with the unit's out-of-fold nuisances.
    pub psi0: Vec<f64>,
    /// A·Y₁ − ψ̂₀, the ATT EIF numerator.
    pub psi: Vec<f64>,
    pub folds: FoldAssignment,
}

#[derive(Debug, Clone)]
pub struct AttEstimate {
    pub tau_hat: f64,
    pub tau0_hat: f64,
    pub sigma0_sq: f64,
    pub sigma_sq: f64,
    /// Asymptotic standard error σ̂/√N.
    pub ase: f64,
    pub ci: (f64, f64),
    pub se_boot: Option<f64>,
    pub ci_boot: Option<(f64, f64)>,
    pub bootstrap_draws: Option<Vec<f64>>,
    pub per_fold: Vec<f64>,
    pub records: EifRecord,
    /// Fraction of EIF nuisance evaluations that hit a clamp bound.
    pub clamp_hit_rate: f64,
    pub warnings: Vec<Warning>,
}

/// Standard-normal two-sided critical value z_{1−α/2}.
pub fn z_quantile(alpha_level: f64) -> f64 {
    Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(1.0 - alpha_level / 2.0)
}

fn aggregate_att(
    data: &PanelDataset,
    config: &EstimatorConfig,
    folds: FoldAssignment,
    psi0: Vec<f64>,
    per_fold: Vec<f64>,
    clamp_hits: usize,
    clamp_evals: usize,
    warnings: Vec<Warning>,
) -> AttEstimate {
    let n = data.n();
    let p_a = data.p_treated();
    let tau0_hat = per_fold.iter().sum::<f64>() / per_fold.len() as f64;
    let mean_ay1 = (0..n)
        .map(|i| data.a[i] as f64 * data.y1[i])
        .sum::<f64>()
        / n as f64;
    let tau_hat = mean_ay1 / p_a - tau0_hat;
    let psi: Vec<f64> = (0..n)
        .map(|i| data.a[i] as f64 * data.y1[i] - psi0[i])
        .collect();
    let records = EifRecord { psi0, psi, folds };
    let (sigma0_sq, sigma_sq) = asymptotic_variance(&records, data, tau_hat, tau0_hat);
    let ase = (sigma_sq / n as f64).sqrt();
    let z = z_quantile(config.alpha_level);
    let ci = (tau_hat - z * ase, tau_hat + z * ase);
    let mut est = AttEstimate {
        tau_hat,
        tau0_hat,
        sigma0_sq,
        sigma_sq,
        ase,
        ci,
        se_boot: None,
        ci_boot: None,
        bootstrap_draws: None,
        per_fold,
        records,
        clamp_hit_rate: if clamp_evals == 0 {
            0.0
        } else {
            clamp_hits as f64 / clamp_evals as f64
        },
        warnings,
    };
    if config.bootstrap_b > 0 {
        let boot = multiplier_bootstrap(
            &est.records,
            data,
            tau_hat,
            config,
            mix_seed(config.seed, 0xB007),
        );
        est.se_boot = Some(boot.se);
        est.ci_boot = Some(boot.ci);
        est.bootstrap_draws = Some(boot.draws);
    }
    est
}

fn is_clamped(v: f64, clamp: (f64, f64)) -> bool {
    v <= clamp.0 || v >= clamp.1
}

/// Cross-fitted ATT estimation for continuous outcomes (one cross-fit; see
/// `median_adjust` for combining repetitions).
pub fn estimate_att(data: &PanelDataset, config: &EstimatorConfig) -> Result<AttEstimate> {
    config.validate()?;
    let n = data.n();
    let p_a = data.p_treated();
    let folds = make_folds(n, config, &data.a, config.seed)?;
    let mut psi0 = vec![0.0; n];
    let mut per_fold = Vec::with_capacity(folds.k);
    let mut warnings = Vec::new();
    let mut clamp_hits = 0usize;
    let mut clamp_evals = 0usize;
    for k in 0..folds.k {
        let est_idx = folds.complement_indices(k);
        let ns = fit_fold_nuisances(data, &est_idx, config, mix_seed(config.seed, k as u64))?;
        warnings.extend(ns.warnings.iter().cloned());
        let eval_idx = folds.fold_indices(k);
        let mut fold_sum = 0.0;
        for &i in &eval_idx {
            let x = data.x.row(i);
            psi0[i] = eif_psi0(data.y0[i], data.y1[i], data.a[i], x, &ns);
            // Clamp-hit accounting on the ratio evaluations feeding ψ̂₀.
            if data.a[i] == 0 {
                clamp_evals += 1;
                if is_clamped(ns.alpha1(data.y1[i], x), config.ratio_clamp) {
                    clamp_hits += 1;
                }
            }
            clamp_evals += 1;
            if is_clamped(ns.r2(data.y0[i], data.a[i], x), config.ratio_clamp) {
                clamp_hits += 1;
            }
            fold_sum += psi0[i];
        }
        per_fold.push(fold_sum / eval_idx.len() as f64 / p_a);
    }
    Ok(aggregate_att(
        data, config, folds, psi0, per_fold, clamp_hits, clamp_evals, warnings,
    ))
}

/// σ̂₀² and σ̂² from the per-fold EIF displays, with 𝕡(A) computed on the
/// full sample.
pub fn asymptotic_variance(
    records: &EifRecord,
    data: &PanelDataset,
    tau_hat: f64,
    tau0_hat: f64,
) -> (f64, f64) {
    let p_a = data.p_treated();
    let k = records.folds.k;
    let mut sigma0 = 0.0;
    let mut sigma = 0.0;
    for fold in 0..k {
        let idx = records.folds.fold_indices(fold);
        let m = idx.len() as f64;
        let mut s0 = 0.0;
        let mut s = 0.0;
        for &i in &idx {
            let a = data.a[i] as f64;
            let v0 = (records.psi0[i] - a * tau0_hat) / p_a;
            s0 += v0 * v0;
            let v = (a * (data.y1[i] - tau_hat) - records.psi0[i]) / p_a;
            s += v * v;
        }
        sigma0 += s0 / m;
        sigma += s / m;
    }
    (sigma0 / k as f64, sigma / k as f64)
}

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    pub se: f64,
    pub ci: (f64, f64),
    pub draws: Vec<f64>,
}

/// Multiplier bootstrap: per draw, i.i.d. multipliers ε ~ N(1, 1) reweight
/// the per-unit (mean-zero) influence values; each draw's estimate is
/// τ̂ plus the K-fold average of the reweighted fold means.
pub fn multiplier_bootstrap(
    records: &EifRecord,
    data: &PanelDataset,
    tau_hat: f64,
    config: &EstimatorConfig,
    seed: u64,
) -> BootstrapResult {
    multiplier_bootstrap_with(records, data, tau_hat, config, seed, |rng| {
        1.0 + rng.sample::<f64, _>(rand_distr::StandardNormal)
    })
}

/// Bootstrap with a custom multiplier sampler (test hook: a constant 1
/// multiplier must give zero spread).
pub fn multiplier_bootstrap_with(
    records: &EifRecord,
    data: &PanelDataset,
    tau_hat: f64,
    config: &EstimatorConfig,
    seed: u64,
    mut draw_multiplier: impl FnMut(&mut ChaCha8Rng) -> f64,
) -> BootstrapResult {
    let n = data.n();
    let p_a = data.p_treated();
    // Centered influence values: mean-zero by the definitional identity
    // between τ̂ and the fold means of ψ̂₀.
    let infl: Vec<f64> = (0..n)
        .map(|i| (data.a[i] as f64 * (data.y1[i] - tau_hat) - records.psi0[i]) / p_a)
        .collect();
    let k = records.folds.k;
    let fold_members: Vec<Vec<usize>> = (0..k).map(|f| records.folds.fold_indices(f)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = config.bootstrap_b;
    let mut draws = Vec::with_capacity(b);
    let mut eps = vec![0.0; n];
    for _ in 0..b {
        for e in eps.iter_mut() {
            *e = draw_multiplier(&mut rng);
        }
        let mut acc = 0.0;
        for members in &fold_members {
            let s: f64 = members.iter().map(|&i| eps[i] * infl[i]).sum();
            acc += s / members.len() as f64;
        }
        draws.push(tau_hat + acc / k as f64);
    }
    let mean = draws.iter().sum::<f64>() / b as f64;
    let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (b as f64 - 1.0).max(1.0);
    let se = var.sqrt();
    let mut sorted = draws.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| -> f64 {
        let idx = ((p * b as f64).ceil() as usize).clamp(1, b) - 1;
        sorted[idx]
    };
    let ci = (
        q(config.alpha_level / 2.0),
        q(1.0 - config.alpha_level / 2.0),
    );
    BootstrapResult { se, ci, draws }
}

fn median_of(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Median adjustment over repeated cross-fits:
/// τ̂_med = median_s τ̂_s; σ̂²_med = median_s{σ̂²_s + (τ̂_s − τ̂_med)²}.
pub fn median_adjust(estimates: &[(f64, f64)]) -> (f64, f64) {
    assert!(!estimates.is_empty(), "median_adjust needs S >= 1");
    let tau_med = median_of(estimates.iter().map(|e| e.0).collect());
    let sigma_med = median_of(
        estimates
            .iter()
            .map(|&(t, s2)| s2 + (t - tau_med) * (t - tau_med))
            .collect(),
    );
    (tau_med, sigma_med)
}

/// Conditional joint-cell probability fits for binary outcomes:
/// `p0` maps (y, a, x) to P(Y₀=y, A=a | X=x) and `p1` maps (y, x) to
/// P(Y₁=y, A=0 | X=x).
pub struct BinaryCellFits {
    ridge: KernelRidgeSet,
    clip: (f64, f64),
}

impl BinaryCellFits {
    /// The four p0 cells at x, ordered (y=0,a=0), (1,0), (0,1), (1,1),
    /// renormalized to sum to one and then clipped.
    pub fn p0_cells(&self, x: &[f64]) -> [f64; 4] {
        let preds = self.ridge.predict_all(x);
        let sum: f64 = preds[..4].iter().sum();
        let mut out = [0.0; 4];
        for (i, o) in out.iter_mut().enumerate() {
            let renorm = if sum.abs() > 1e-12 {
                preds[i] / sum
            } else {
                0.25
            };
            *o = renorm.clamp(self.clip.0, self.clip.1);
        }
        out
    }

    /// The four p0 cells before clipping (their sum is 1 by construction).
    pub fn p0_cells_preclip(&self, x: &[f64]) -> [f64; 4] {
        let preds = self.ridge.predict_all(x);
        let sum: f64 = preds[..4].iter().sum();
        let mut out = [0.0; 4];
        for (i, o) in out.iter_mut().enumerate() {
            *o = if sum.abs() > 1e-12 {
                preds[i] / sum
            } else {
                0.25
            };
        }
        out
    }

    pub fn p0(&self, y: u8, a: u8, x: &[f64]) -> f64 {
        self.p0_cells(x)[(y as usize) + 2 * (a as usize)]
    }

    pub fn p1(&self, y: u8, x: &[f64]) -> f64 {
        let preds = self.ridge.predict_all(x);
        preds[4 + y as usize].clamp(self.clip.0, self.clip.1)
    }
}

/// Ridge penalty for the binary joint-cell fits (see `estimate_att_binary`).
const BINARY_CELL_LAMBDA: f64 = 0.5;

/// Kernel-ridge fits of the joint-cell indicators on the estimation fold.
pub fn fit_binary_cells(
    est: &PanelDataset,
    kernel: KernelConfig,
    lambda: f64,
) -> Result<BinaryCellFits> {
    if est.outcome_kind != OutcomeKind::Binary {
        return Err(Error::WrongOutcomeKind { expected: "binary" });
    }
    let m = est.n();
    let mut targets: Vec<Vec<f64>> = vec![vec![0.0; m]; 6];
    for i in 0..m {
        let y0 = est.y0[i] as usize;
        let a = est.a[i] as usize;
        targets[y0 + 2 * a][i] = 1.0;
        if a == 0 {
            let y1 = est.y1[i] as usize;
            targets[4 + y1][i] = 1.0;
        }
    }
    let target_refs: Vec<&[f64]> = targets.iter().map(|t| t.as_slice()).collect();
    let ridge = KernelRidgeSet::fit(est.x.clone(), &target_refs, kernel, lambda)?;
    Ok(BinaryCellFits {
        ridge,
        clip: (1e-3, 1.0 - 1e-3),
    })
}

/// Cross-fitted ATT estimation for binary outcomes: cell-probability fits
/// give α̂₁ and μ̂ by ratios, β̂₁ comes from the inefficient-moment
/// minimax program, and ψ̂₀ uses the augmentation
/// (2A−1)(2Y₀−1){p̂₀(0,1|X)+p̂₀(1,1|X)}μ̂(1−μ̂)/p̂₀(Y₀,A|X).
pub fn estimate_att_binary(data: &PanelDataset, config: &EstimatorConfig) -> Result<AttEstimate> {
    config.validate()?;
    if data.outcome_kind != OutcomeKind::Binary {
        return Err(Error::WrongOutcomeKind { expected: "binary" });
    }
    let n = data.n();
    let p_a = data.p_treated();
    let folds = make_folds(n, config, &data.a, config.seed)?;
    let mut psi0 = vec![0.0; n];
    let mut per_fold = Vec::with_capacity(folds.k);
    let mut warnings = Vec::new();
    let clamp = config.ratio_clamp;
    for k in 0..folds.k {
        let est_idx = folds.complement_indices(k);
        let est = data.select(&est_idx);
        let m = est.n() as f64;
        let kernel_x = resolve_bandwidth(config.bandwidth, &est.x)?;
        let lambda = match &config.lambda {
            LambdaPolicy::Fixed(l) => *l,
            _ => 1.0 / m,
        };
        // The cell fits use a moderate fixed ridge penalty: the 1/p̂₀
        // augmentation term amplifies any overfit wiggles in the cells,
        // while the downstream ratios are insensitive to extra smoothing.
        let cells = fit_binary_cells(&est, kernel_x, BINARY_CELL_LAMBDA)?;
        let alpha1 = |y: f64, x: &[f64]| -> f64 {
            let c = cells.p0_cells(x);
            // [p̂₀(y,1)p̂₀(0,0)] / [p̂₀(y,0)p̂₀(0,1)]; equals 1 at y = 0.
            let yi = y as usize;
            ((c[yi + 2] * c[0]) / (c[yi] * c[2])).clamp(clamp.0, clamp.1)
        };

        // Inefficient-moment minimax fit for β₁: adversary weighting
        // q0 = −α̂₁(Y₁,X)(1−A) against q1 = A.
        let mut q0 = Vec::with_capacity(est.n());
        for i in 0..est.n() {
            let ctrl = 1.0 - est.a[i] as f64;
            let al = if est.a[i] == 0 {
                alpha1(est.y1[i], est.x.row(i))
            } else {
                0.0
            };
            q0.push(-al * ctrl);
        }
        let kappa = kernel_x.bandwidth;
        let hp = MinimaxHyperParams {
            kappa_beta: kappa,
            kappa_xi: kappa,
            lambda_beta: lambda,
            lambda_xi: lambda,
        };
        let solver = MinimaxSolver::new(&est.x, &q0, hp)?;
        if let Some(w) = &solver.warning {
            warnings.push(w.clone());
        }
        let beta1 = beta1_from_solver(&solver, &est.a, clamp);

        let eval_idx = folds.fold_indices(k);
        let mut fold_sum = 0.0;
        for &i in &eval_idx {
            let x = data.x.row(i);
            // Plug-in μ̂: reweight the control post-period cells by α̂₁.
            // This keeps μ̂ inside (0, 1) by construction and avoids the
            // attenuation a smoothed regression of α̂₁(Y₁)Y₁ can suffer.
            let muv = {
                let preds = cells.ridge.predict_all(x);
                let (c4, c5) = (preds[4].max(1e-6), preds[5].max(1e-6));
                let al = alpha1(1.0, x);
                al * c5 / (al * c5 + c4)
            };
            let b1 = beta1.eval(x);
            let a = data.a[i];
            let ctrl_term = if a == 0 {
                b1 * alpha1(data.y1[i], x) * (data.y1[i] - muv)
            } else {
                0.0
            };
            let c = cells.p0_cells(x);
            let p_y0a = c[data.y0[i] as usize + 2 * a as usize];
            let p_treated_cells = c[2] + c[3];
            let sgn = 2.0 * a as f64 - 1.0;
            let sgn_y0 = 2.0 * data.y0[i] - 1.0;
            let aug = sgn * sgn_y0 * p_treated_cells * muv * (1.0 - muv) / p_y0a;
            psi0[i] = ctrl_term + a as f64 * muv + aug;
            fold_sum += psi0[i];
        }
        per_fold.push(fold_sum / eval_idx.len() as f64 / p_a);
    }
    Ok(aggregate_att(
        data, config, folds, psi0, per_fold, 0, 0, warnings,
    ))
}

#[derive(Debug, Clone)]
pub struct QttEstimate {
    pub q: f64,
    pub theta_prelim: f64,
    pub theta_hat: f64,
    pub ase: f64,
    /// Suppressed when the density at the quantile is degenerate.
    pub ci: Option<(f64, f64)>,
    pub per_fold: Vec<QttFoldDiag>,
    pub warnings: Vec<Warning>,
}

/// Fold-level quantile diagnostics (Newton-step contraction checks).
#[derive(Debug, Clone)]
pub struct QttFoldDiag {
    pub theta_prelim: f64,
    pub theta_hat: f64,
    /// |𝕡_{I_k} Ω̂(·; θ̃)| before the one-step update.
    pub moment_prelim: f64,
    /// |𝕡_{I_k} Ω̂(·; θ̂)| after it.
    pub moment_updated: f64,
}

fn weighted_quantile(ys: &[f64], ws: &[f64], q: f64) -> f64 {
    let mut order: Vec<usize> = (0..ys.len()).collect();
    order.sort_by(|&i, &j| ys[i].partial_cmp(&ys[j]).unwrap());
    let total: f64 = ws.iter().sum();
    let target = q * total;
    let mut acc = 0.0;
    for &i in &order {
        acc += ws[i];
        if acc >= target {
            return ys[i];
        }
    }
    ys[order[ys.len() - 1]]
}

/// Weighted Gaussian KDE with Silverman bandwidth on the weighted sample.
fn weighted_kde(ys: &[f64], ws: &[f64], t: f64) -> f64 {
    let total: f64 = ws.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mean = ys.iter().zip(ws).map(|(y, w)| y * w).sum::<f64>() / total;
    let var = ys
        .iter()
        .zip(ws)
        .map(|(y, w)| w * (y - mean) * (y - mean))
        .sum::<f64>()
        / total;
    let sd = var.sqrt();
    let q25 = weighted_quantile(ys, ws, 0.25);
    let q75 = weighted_quantile(ys, ws, 0.75);
    let iqr = (q75 - q25).max(0.0);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let n_eff = total * total / ws.iter().map(|w| w * w).sum::<f64>();
    let mut h = 0.9 * spread * n_eff.powf(-0.2);
    if !(h.is_finite() && h > 0.0) {
        h = 1e-3;
    }
    let norm = (2.0 * std::f64::consts::PI).sqrt();
    ys.iter()
        .zip(ws)
        .map(|(y, w)| {
            let z = (t - y) / h;
            w * (-0.5 * z * z).exp() / (h * norm)
        })
        .sum::<f64>()
        / total
}

const QTT_DENSITY_MIN: f64 = 1e-6;

/// Cross-fitted one-step estimation of the q-th counterfactual quantile of
/// Y₁(0) among the treated. The preliminary estimate solves the IPW moment
/// (the efficient moment with the conditional CDF and augmentation ratio
/// set to zero): a β̂₁α̂₁-weighted empirical quantile of control Y₁. One
/// Newton step with the full efficient moment and the estimated density
/// Jacobian follows.
pub fn estimate_qtt(data: &PanelDataset, config: &EstimatorConfig, q: f64) -> Result<QttEstimate> {
    config.validate()?;
    if data.outcome_kind != OutcomeKind::Continuous {
        return Err(Error::WrongOutcomeKind {
            expected: "continuous",
        });
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "quantile level must lie in (0,1), got {q}"
        )));
    }
    let n = data.n();
    let p_a = data.p_treated();
    let folds = make_folds(n, config, &data.a, config.seed)?;
    let mut per_fold = Vec::with_capacity(folds.k);
    let mut warnings = Vec::new();
    let mut sigma_b_acc = 0.0;
    let mut sigma_m_acc = 0.0;
    for k in 0..folds.k {
        let est_idx = folds.complement_indices(k);
        let ns = fit_fold_nuisances(data, &est_idx, config, mix_seed(config.seed, k as u64))?;
        warnings.extend(ns.warnings.iter().cloned());
        let eval_idx = folds.fold_indices(k);

        // Weighted preliminary quantile over evaluation-fold controls.
        let eval_ctrl: Vec<usize> = eval_idx
            .iter()
            .copied()
            .filter(|&i| data.a[i] == 0)
            .collect();
        if eval_ctrl.is_empty() {
            return Err(Error::EmptyControlSample { op: "estimate_qtt" });
        }
        let ys: Vec<f64> = eval_ctrl.iter().map(|&i| data.y1[i]).collect();
        let ws: Vec<f64> = eval_ctrl
            .iter()
            .map(|&i| {
                let x = data.x.row(i);
                ns.beta1(x) * ns.alpha1(data.y1[i], x)
            })
            .collect();
        let theta_prelim = weighted_quantile(&ys, &ws, q);

        // Conditional CDF weights: for each evaluation unit, an α̂₁- and
        // kernel-weighted empirical CDF over the estimation-fold controls.
        // alpha_grid[(j, i)] = α̂₁(est_ctrl_y1[j], x_eval_i).
        let eval_x = data.x.select(&eval_idx);
        let alpha_grid = ns.alpha1.eval_grid(&ns.est_ctrl_y1, &eval_x);
        let f1_at = |theta: f64| -> Vec<f64> {
            (0..eval_idx.len())
                .map(|pos| {
                    let x = eval_x.row(pos);
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for (j, xj) in ns.est_ctrl_x.iter_rows().enumerate() {
                        let w = kernel_eval_unchecked(x, xj, &ns.kernel_x) * alpha_grid[(j, pos)];
                        den += w;
                        if ns.est_ctrl_y1[j] <= theta {
                            num += w;
                        }
                    }
                    if den > 0.0 {
                        num / den
                    } else {
                        q
                    }
                })
                .collect()
        };
        let omega_mean_and_sq = |theta: f64, f1: &[f64]| -> (f64, f64) {
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for (pos, &i) in eval_idx.iter().enumerate() {
                let xi = eval_x.row(pos);
                let a = data.a[i];
                let f = f1[pos];
                let mut v = 0.0;
                if a == 0 {
                    let ind = (data.y1[i] <= theta) as u8 as f64;
                    v += ns.beta1(xi) * ns.alpha1(data.y1[i], xi) * (ind - f);
                } else {
                    v += f - q;
                }
                let ind0 = (data.y0[i] <= theta) as u8 as f64;
                let sgn = 2.0 * a as f64 - 1.0;
                v += sgn * ns.rr(data.y0[i], a, xi) * (ind0 - f);
                sum += v;
                sumsq += v * v;
            }
            let m = eval_idx.len() as f64;
            (sum / m, sumsq / m)
        };

        let f1_prelim = f1_at(theta_prelim);
        let (omega_prelim, _) = omega_mean_and_sq(theta_prelim, &f1_prelim);
        let dens_prelim = weighted_kde(&ys, &ws, theta_prelim);
        if dens_prelim < QTT_DENSITY_MIN {
            warnings.push(Warning::DegenerateDensity);
        }
        let v_hat = p_a * dens_prelim.max(QTT_DENSITY_MIN);
        let theta_hat = theta_prelim - omega_prelim / v_hat;

        let f1_hat = f1_at(theta_hat);
        let (omega_hat, omega_hat_sq) = omega_mean_and_sq(theta_hat, &f1_hat);
        let dens_hat = weighted_kde(&ys, &ws, theta_hat);
        if dens_hat < QTT_DENSITY_MIN {
            warnings.push(Warning::DegenerateDensity);
        }
        sigma_b_acc += p_a * dens_hat;
        sigma_m_acc += omega_hat_sq;
        per_fold.push(QttFoldDiag {
            theta_prelim,
            theta_hat,
            moment_prelim: omega_prelim.abs(),
            moment_updated: omega_hat.abs(),
        });
    }
    let kf = folds.k as f64;
    let theta_prelim = per_fold.iter().map(|d| d.theta_prelim).sum::<f64>() / kf;
    let mut theta_hat = per_fold.iter().map(|d| d.theta_hat).sum::<f64>() / kf;

    // Keep the point estimate inside the observed outcome range expanded by
    // one interquartile range (a wild Newton step cannot escape it).
    let mut all_y: Vec<f64> = data.y0.iter().chain(&data.y1).copied().collect();
    all_y.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let last = all_y.len() - 1;
    let iqr = all_y[(0.75 * last as f64) as usize] - all_y[(0.25 * last as f64) as usize];
    let lo_bound = all_y[0] - iqr.abs();
    let hi_bound = all_y[last] + iqr.abs();
    theta_hat = theta_hat.clamp(lo_bound, hi_bound);

    let degenerate = warnings
        .iter()
        .any(|w| matches!(w, Warning::DegenerateDensity));
    let sigma_b = sigma_b_acc / kf;
    let sigma_m = sigma_m_acc / kf;
    let ase = if sigma_b > 0.0 {
        (sigma_m / (sigma_b * sigma_b) / n as f64).sqrt()
    } else {
        f64::INFINITY
    };
    let ci = if degenerate || !ase.is_finite() {
        None
    } else {
        let z = z_quantile(config.alpha_level);
        Some((theta_hat - z * ase, theta_hat + z * ase))
    };
    Ok(QttEstimate {
        q,
        theta_prelim,
        theta_hat,
        ase,
        ci,
        per_fold,
        warnings,
    })
}

/// Outcome-regression parallel-trends baseline:
/// τ̂₀,PT = 𝕡_{A=1}{m̂₁(X) − m̂₀(X) + ĝ₀(X)} with kernel-ridge fits of
/// E(Y₁|A=0,X), E(Y₀|A=0,X), E(Y₀|A=1,X); standard error by a
/// nonparametric bootstrap over units (skipped when `bootstrap_b` is 0).
pub fn pt_baseline_att(data: &PanelDataset, config: &EstimatorConfig) -> Result<AttEstimate> {
    let tau_hat = pt_point_estimate(data, config)?;
    let n = data.n();
    let p_a = data.p_treated();
    let mean_ay1 = (0..n)
        .map(|i| data.a[i] as f64 * data.y1[i])
        .sum::<f64>()
        / n as f64;
    let tau0_hat = mean_ay1 / p_a - tau_hat;

    let mut se_boot = None;
    let mut ci_boot = None;
    let mut draws_out = None;
    let mut ase = 0.0;
    let mut ci = (tau_hat, tau_hat);
    if config.bootstrap_b > 0 {
        let b = config.bootstrap_b;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x9717));
        let mut draws = Vec::with_capacity(b);
        for _ in 0..b {
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let resampled = data.select(&idx);
            if resampled.treated_indices().is_empty() || resampled.control_indices().is_empty() {
                continue;
            }
            if let Ok(t) = pt_point_estimate(&resampled, config) {
                draws.push(t);
            }
        }
        if draws.len() >= 2 {
            let mean = draws.iter().sum::<f64>() / draws.len() as f64;
            let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
                / (draws.len() as f64 - 1.0);
            let se = var.sqrt();
            let mut sorted = draws.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let qf = |p: f64| -> f64 {
                let idx = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
                sorted[idx]
            };
            let z = z_quantile(config.alpha_level);
            ase = se;
            ci = (tau_hat - z * se, tau_hat + z * se);
            se_boot = Some(se);
            ci_boot = Some((qf(config.alpha_level / 2.0), qf(1.0 - config.alpha_level / 2.0)));
            draws_out = Some(draws);
        }
    }
    Ok(AttEstimate {
        tau_hat,
        tau0_hat,
        sigma0_sq: 0.0,
        sigma_sq: ase * ase * n as f64,
        ase,
        ci,
        se_boot,
        ci_boot,
        bootstrap_draws: draws_out,
        per_fold: vec![tau0_hat],
        records: EifRecord {
            psi0: Vec::new(),
            psi: Vec::new(),
            folds: FoldAssignment {
                k: 1,
                fold_of: vec![0; n],
                seed: config.seed,
            },
        },
        clamp_hit_rate: 0.0,
        warnings: Vec::new(),
    })
}

fn pt_point_estimate(data: &PanelDataset, config: &EstimatorConfig) -> Result<f64> {
    let ctrl = data.control_indices();
    let trt = data.treated_indices();
    let x_ctrl = data.x.select(&ctrl);
    let x_trt = data.x.select(&trt);
    let y1_ctrl: Vec<f64> = ctrl.iter().map(|&i| data.y1[i]).collect();
    let y0_ctrl: Vec<f64> = ctrl.iter().map(|&i| data.y0[i]).collect();
    let y0_trt: Vec<f64> = trt.iter().map(|&i| data.y0[i]).collect();
    let kernel = resolve_bandwidth(config.bandwidth, &data.x)?;
    let lam = |m: usize| match &config.lambda {
        LambdaPolicy::Fixed(l) => *l,
        _ => 1.0 / m as f64,
    };
    let fit_ctrl = KernelRidgeSet::fit(
        x_ctrl,
        &[&y1_ctrl, &y0_ctrl],
        kernel,
        lam(ctrl.len()),
    )?;
    let fit_trt = KernelRidgeSet::fit(x_trt.clone(), &[&y0_trt], kernel, lam(trt.len()))?;
    let mut tau0 = 0.0;
    for (pos, &i) in trt.iter().enumerate() {
        let x = data.x.row(i);
        let preds = fit_ctrl.predict_all(x);
        tau0 += preds[0] - preds[1] + fit_trt.predict(0, x_trt.row(pos));
    }
    tau0 /= trt.len() as f64;
    let n = data.n();
    let p_a = data.p_treated();
    let mean_ay1 = (0..n)
        .map(|i| data.a[i] as f64 * data.y1[i])
        .sum::<f64>()
        / n as f64;
    Ok(mean_ay1 / p_a - tau0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    struct ConstNuisances {
        beta1: f64,
        alpha1: f64,
        mu: f64,
        r2: f64,
    }

    impl Nuisances for ConstNuisances {
        fn beta1(&self, _: &[f64]) -> f64 {
            self.beta1
        }
        fn alpha1(&self, _: f64, _: &[f64]) -> f64 {
            self.alpha1
        }
        fn mu(&self, _: &[f64]) -> f64 {
            self.mu
        }
        fn r2(&self, _: f64, _: u8, _: &[f64]) -> f64 {
            self.r2
        }
    }

    #[test]
    fn eif_treated_with_zero_augmentation_is_mu() {
        let ns = ConstNuisances {
            beta1: 2.0,
            alpha1: 3.0,
            mu: 0.7,
            r2: 0.0,
        };
        assert_abs_diff_eq!(eif_psi0(1.0, 5.0, 1, &[0.0], &ns), 0.7);
    }

    #[test]
    fn eif_control_with_unit_weights_is_y1() {
        let ns = ConstNuisances {
            beta1: 1.0,
            alpha1: 1.0,
            mu: 0.0,
            r2: 0.0,
        };
        assert_abs_diff_eq!(eif_psi0(2.0, 5.0, 0, &[0.0], &ns), 5.0);
    }

    #[test]
    fn eif_all_ones_substitution() {
        // a=0, y0=2, y1=3, all evaluators 1:
        // 1*1*(3-1) + 0 + (-1)*1*(2-1) = 1.
        let ns = ConstNuisances {
            beta1: 1.0,
            alpha1: 1.0,
            mu: 1.0,
            r2: 1.0,
        };
        assert_abs_diff_eq!(eif_psi0(2.0, 3.0, 0, &[0.0], &ns), 1.0);
    }

    #[test]
    fn median_adjust_single_rep_unchanged() {
        let (t, s) = median_adjust(&[(0.42, 0.09)]);
        assert_abs_diff_eq!(t, 0.42);
        assert_abs_diff_eq!(s, 0.09);
    }

    #[test]
    fn median_adjust_inflates_variance() {
        let ests = [(0.4, 0.01), (0.5, 0.02), (0.6, 0.03), (0.45, 0.015), (0.55, 0.025)];
        let (_, s2) = median_adjust(&ests);
        let min_s2 = ests.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
        assert!(s2 >= min_s2);
    }

    #[test]
    fn median_adjust_robust_to_corrupted_rep() {
        let clean = [0.48, 0.5, 0.52, 0.49];
        let mut ests: Vec<(f64, f64)> = clean.iter().map(|&t| (t, 0.01)).collect();
        ests.push((10.5, 0.01));
        let (t_med, _) = median_adjust(&ests);
        let lo = clean.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = clean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(t_med >= lo && t_med <= hi, "median {t_med} outside [{lo},{hi}]");
    }

    fn tiny_dataset() -> PanelDataset {
        let x = PointSet::from_flat(vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.4, 0.2, -0.1], 1).unwrap();
        PanelDataset {
            y0: vec![1.0, 2.0, 1.5, 0.5, 2.5, 1.2, 0.8, 1.9],
            y1: vec![2.0, 2.5, 1.0, 1.5, 3.0, 2.2, 1.1, 2.4],
            a: vec![0, 1, 0, 1, 0, 1, 0, 1],
            x,
            outcome_kind: OutcomeKind::Continuous,
        }
    }

    fn fake_records(data: &PanelDataset, psi0: Vec<f64>, k: usize) -> EifRecord {
        let n = data.n();
        let folds = FoldAssignment {
            k,
            fold_of: (0..n).map(|i| i % k).collect(),
            seed: 0,
        };
        let psi = (0..n)
            .map(|i| data.a[i] as f64 * data.y1[i] - psi0[i])
            .collect();
        EifRecord { psi0, psi, folds }
    }

    #[test]
    fn variance_nonnegative_and_zero_when_degenerate() {
        let data = tiny_dataset();
        let tau0 = 0.3;
        // ψ̂₀ ≡ A·τ̂₀ makes σ̂₀² vanish.
        let psi0: Vec<f64> = data.a.iter().map(|&a| a as f64 * tau0).collect();
        let rec = fake_records(&data, psi0, 2);
        let (s0, s) = asymptotic_variance(&rec, &data, 0.1, tau0);
        assert_abs_diff_eq!(s0, 0.0, epsilon = 1e-12);
        assert!(s >= 0.0);
    }

    #[test]
    fn bootstrap_with_constant_multiplier_has_zero_spread() {
        let data = tiny_dataset();
        let rec = fake_records(&data, vec![0.5; 8], 2);
        let config = EstimatorConfig {
            bootstrap_b: 50,
            ..EstimatorConfig::default()
        };
        let boot =
            multiplier_bootstrap_with(&rec, &data, 0.4, &config, 1, |_| 1.0);
        assert_abs_diff_eq!(boot.se, 0.0, epsilon = 1e-14);
        let first = boot.draws[0];
        for d in &boot.draws {
            assert_abs_diff_eq!(*d, first, epsilon = 1e-14);
        }
    }

    #[test]
    fn bootstrap_deterministic_given_seed() {
        let data = tiny_dataset();
        let rec = fake_records(&data, vec![0.5, 0.2, 0.9, 0.1, 0.4, 0.3, 0.6, 0.7], 2);
        let config = EstimatorConfig {
            bootstrap_b: 100,
            ..EstimatorConfig::default()
        };
        let b1 = multiplier_bootstrap(&rec, &data, 0.4, &config, 7);
        let b2 = multiplier_bootstrap(&rec, &data, 0.4, &config, 7);
        assert_eq!(b1.draws, b2.draws);
        assert_eq!(b1.se, b2.se);
    }

    #[test]
    fn binary_cells_constant_x_match_frequencies() {
        let n = 40;
        let mut y0 = Vec::new();
        let mut y1 = Vec::new();
        let mut a = Vec::new();
        for i in 0..n {
            y0.push(((i % 3) == 0) as u8 as f64);
            y1.push(((i % 2) == 0) as u8 as f64);
            a.push(((i % 4) == 0) as u8);
        }
        let data = PanelDataset {
            y0: y0.clone(),
            y1: y1.clone(),
            a: a.clone(),
            x: PointSet::from_flat(vec![1.0; n], 1).unwrap(),
            outcome_kind: OutcomeKind::Binary,
        };
        let cells = fit_binary_cells(&data, KernelConfig::new(1.0).unwrap(), 0.025).unwrap();
        let probe = [1.0];
        let pre = cells.p0_cells_preclip(&probe);
        assert_abs_diff_eq!(pre.iter().sum::<f64>(), 1.0, epsilon = 1e-6);
        for y in 0..2u8 {
            for arm in 0..2u8 {
                let freq = (0..n)
                    .filter(|&i| y0[i] == y as f64 && a[i] == arm)
                    .count() as f64
                    / n as f64;
                assert_abs_diff_eq!(pre[y as usize + 2 * arm as usize], freq, epsilon = 1e-6);
            }
        }
        // Clipped outputs stay within bounds.
        for c in cells.p0_cells(&probe) {
            assert!((1e-3..=1.0 - 1e-3).contains(&c));
        }
    }

    #[test]
    fn binary_cells_reject_continuous() {
        let mut data = tiny_dataset();
        data.outcome_kind = OutcomeKind::Continuous;
        assert!(matches!(
            fit_binary_cells(&data, KernelConfig::new(1.0).unwrap(), 0.1),
            Err(Error::WrongOutcomeKind { .. })
        ));
    }

    #[test]
    fn qtt_rejects_binary_outcomes() {
        let data = PanelDataset {
            y0: vec![0.0, 1.0, 0.0, 1.0],
            y1: vec![1.0, 0.0, 1.0, 0.0],
            a: vec![0, 1, 0, 1],
            x: PointSet::from_flat(vec![0.0; 4], 1).unwrap(),
            outcome_kind: OutcomeKind::Binary,
        };
        let config = EstimatorConfig::default();
        assert!(matches!(
            estimate_qtt(&data, &config, 0.5),
            Err(Error::WrongOutcomeKind { .. })
        ));
    }

    #[test]
    fn weighted_quantile_basics() {
        let ys = [1.0, 2.0, 3.0, 4.0];
        let ws = [1.0, 1.0, 1.0, 1.0];
        assert_abs_diff_eq!(weighted_quantile(&ys, &ws, 0.5), 2.0);
        assert_abs_diff_eq!(weighted_quantile(&ys, &ws, 0.76), 4.0);
        // Degenerate weight mass picks its atom.
        let ws = [0.0, 0.0, 5.0, 0.0];
        assert_abs_diff_eq!(weighted_quantile(&ys, &ws, 0.5), 3.0);
    }

    #[test]
    fn mix_seed_streams_differ() {
        let a = mix_seed(42, 0);
        let b = mix_seed(42, 1);
        let c = mix_seed(43, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, mix_seed(42, 0));
    }

    #[test]
    fn pt_no_covariates_reduces_to_two_by_two_did() {
        // With no covariates the three regressions collapse to arm means,
        // so τ̂_PT equals the classic difference of arm-time means.
        let n = 40;
        let mut y0 = Vec::new();
        let mut y1 = Vec::new();
        let mut a = Vec::new();
        for i in 0..n {
            let arm = (i % 2) as u8;
            a.push(arm);
            y0.push(1.0 + 0.5 * arm as f64 + 0.01 * i as f64);
            y1.push(2.0 + 1.5 * arm as f64 + 0.01 * i as f64);
        }
        let data = PanelDataset {
            y0: y0.clone(),
            y1: y1.clone(),
            a: a.clone(),
            x: PointSet::empty_dim(n),
            outcome_kind: OutcomeKind::Continuous,
        };
        let config = EstimatorConfig {
            bootstrap_b: 2,
            ..EstimatorConfig::default()
        };
        let est = pt_baseline_att(&data, &config).unwrap();
        let mean = |v: &[f64], arm: u8| {
            let idx: Vec<usize> = (0..n).filter(|&i| a[i] == arm).collect();
            idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64
        };
        let classic =
            (mean(&y1, 1) - mean(&y0, 1)) - (mean(&y1, 0) - mean(&y0, 0));
        assert_abs_diff_eq!(est.tau_hat, classic, epsilon = 1e-10);
    }
}
