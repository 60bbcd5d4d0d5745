//! Two-period panel dataset, validation, fold assignment, and run
//! configuration.

use crate::error::{Error, Result};
use crate::kernel::PointSet;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeKind {
    Continuous,
    Binary,
}

/// The universal input: outcomes at both periods, treatment, covariates.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub a: Vec<u8>,
    pub x: PointSet,
    pub outcome_kind: OutcomeKind,
}

impl PanelDataset {
    pub fn n(&self) -> usize {
        self.y0.len()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    /// Share of treated units.
    pub fn p_treated(&self) -> f64 {
        self.a.iter().map(|&a| a as f64).sum::<f64>() / self.n() as f64
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.a[i] == 1).collect()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.a[i] == 0).collect()
    }

    /// Restricts the dataset to the given rows.
    pub fn select(&self, idx: &[usize]) -> PanelDataset {
        PanelDataset {
            y0: idx.iter().map(|&i| self.y0[i]).collect(),
            y1: idx.iter().map(|&i| self.y1[i]).collect(),
            a: idx.iter().map(|&i| self.a[i]).collect(),
            x: self.x.select(idx),
            outcome_kind: self.outcome_kind,
        }
    }
}

fn all_binary(v: &[f64]) -> bool {
    v.iter().all(|&y| y == 0.0 || y == 1.0)
}

/// Validates raw columns into a `PanelDataset`. The outcome kind is
/// inferred as Binary iff both outcome columns take values only in {0, 1};
/// `kind_override` forces a kind (Binary is rejected if outcomes are not
/// 0/1-valued).
pub fn validate_dataset(
    y0: Vec<f64>,
    y1: Vec<f64>,
    a: Vec<f64>,
    x: PointSet,
    kind_override: Option<OutcomeKind>,
) -> Result<PanelDataset> {
    let n = y0.len();
    if n < 2 {
        return Err(Error::TooFewUnits {
            arm: 2,
            have: n,
            need: 2,
        });
    }
    if y1.len() != n {
        return Err(Error::LengthMismatch {
            column: "y1",
            expected: n,
            got: y1.len(),
        });
    }
    if a.len() != n {
        return Err(Error::LengthMismatch {
            column: "a",
            expected: n,
            got: a.len(),
        });
    }
    let x = if x.dim() == 0 {
        PointSet::empty_dim(n)
    } else {
        if x.n() != n {
            return Err(Error::LengthMismatch {
                column: "x",
                expected: n,
                got: x.n(),
            });
        }
        x
    };
    for (name, col) in [("y0", &y0), ("y1", &y1)] {
        if let Some(i) = col.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                column: name.to_string(),
                index: i,
            });
        }
    }
    for i in 0..n {
        if let Some(j) = x.row(i).iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                column: format!("x{}", j + 1),
                index: i,
            });
        }
    }
    let mut a_bin = Vec::with_capacity(n);
    for (i, &v) in a.iter().enumerate() {
        if v == 0.0 {
            a_bin.push(0u8);
        } else if v == 1.0 {
            a_bin.push(1u8);
        } else {
            return Err(Error::NonBinaryTreatment { index: i, value: v });
        }
    }
    let n_treated = a_bin.iter().filter(|&&v| v == 1).count();
    if n_treated == 0 {
        return Err(Error::DegenerateTreatmentArm { arm: 1 });
    }
    if n_treated == n {
        return Err(Error::DegenerateTreatmentArm { arm: 0 });
    }
    let inferred = if all_binary(&y0) && all_binary(&y1) {
        OutcomeKind::Binary
    } else {
        OutcomeKind::Continuous
    };
    let outcome_kind = match kind_override {
        None => inferred,
        Some(OutcomeKind::Continuous) => OutcomeKind::Continuous,
        Some(OutcomeKind::Binary) => {
            if inferred != OutcomeKind::Binary {
                return Err(Error::WrongOutcomeKind { expected: "binary" });
            }
            OutcomeKind::Binary
        }
    };
    Ok(PanelDataset {
        y0,
        y1,
        a: a_bin,
        x,
        outcome_kind,
    })
}

/// A partition of the sample into `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: Vec<usize>,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == fold)
            .collect()
    }

    pub fn complement_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != fold)
            .collect()
    }
}

/// Randomly assigns units to `config.k_folds` folds, stratified by
/// treatment arm so every estimation complement contains both arms.
/// Deterministic given `seed`.
pub fn make_folds(n: usize, config: &EstimatorConfig, a: &[u8], seed: u64) -> Result<FoldAssignment> {
    let k = config.k_folds;
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k_folds must be >= 2, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; n];
    for arm in [1u8, 0u8] {
        let mut idx: Vec<usize> = (0..n).filter(|&i| a[i] == arm).collect();
        if idx.len() < k {
            return Err(Error::TooFewUnits {
                arm,
                have: idx.len(),
                need: k,
            });
        }
        idx.shuffle(&mut rng);
        // Deal round-robin so every fold gets (nearly) equal counts from
        // each arm, hence every complement keeps both arms.
        for (pos, &i) in idx.iter().enumerate() {
            fold_of[i] = pos % k;
        }
    }
    Ok(FoldAssignment { k, fold_of, seed })
}

/// Kernel-bandwidth selection policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthPolicy {
    MedianHeuristic,
    Fixed(f64),
}

/// Regularization-strength policy for the minimax fits.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaPolicy {
    /// 1/M where M is the estimation-fold size.
    Auto,
    /// β̂₁-program target penalty λ_β; the continuous path sets the adversary
    /// penalty λ_ξ to ten times this value, and the μ̂ program runs with both
    /// penalties thirty times lighter (see the estimator-module constants).
    Fixed(f64),
    /// Cross-validated over the given grid of lambda values (used for both
    /// the target and adversary penalties).
    GridCv(Vec<f64>),
}

/// Which cross-validation risk drives `GridCv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvRisk {
    /// Projected adversarial risk (default).
    Projected,
    /// Mean squared error against the plug-in evaluator.
    MseVsPlugin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub k_folds: usize,
    /// Cross-fitting repetitions combined by median adjustment.
    pub repetitions_s: usize,
    pub bootstrap_b: usize,
    pub alpha_level: f64,
    pub bandwidth: BandwidthPolicy,
    pub lambda: LambdaPolicy,
    pub cv_risk: CvRisk,
    /// Clamp bounds applied to evaluated density ratios and odds.
    pub ratio_clamp: (f64, f64),
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            k_folds: 5,
            repetitions_s: 25,
            bootstrap_b: 1000,
            alpha_level: 0.05,
            bandwidth: BandwidthPolicy::MedianHeuristic,
            lambda: LambdaPolicy::Fixed(30.0),
            cv_risk: CvRisk::Projected,
            ratio_clamp: (1e-3, 1e3),
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_folds < 2 {
            return Err(Error::InvalidConfig("k_folds must be >= 2".into()));
        }
        if self.repetitions_s < 1 {
            return Err(Error::InvalidConfig("repetitions_s must be >= 1".into()));
        }
        // bootstrap_b = 0 disables the bootstrap entirely.
        if !(self.alpha_level > 0.0 && self.alpha_level < 1.0) {
            return Err(Error::InvalidConfig("alpha_level must lie in (0, 1)".into()));
        }
        let (lo, hi) = self.ratio_clamp;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
            return Err(Error::InvalidConfig(
                "ratio_clamp must satisfy 0 < lo < hi, both finite".into(),
            ));
        }
        if let BandwidthPolicy::Fixed(k) = self.bandwidth {
            if !(k.is_finite() && k > 0.0) {
                return Err(Error::InvalidConfig("fixed bandwidth must be positive".into()));
            }
        }
        match &self.lambda {
            LambdaPolicy::Fixed(l) if !(l.is_finite() && *l > 0.0) => {
                return Err(Error::InvalidConfig("fixed lambda must be positive".into()))
            }
            LambdaPolicy::GridCv(g) if g.is_empty() => return Err(Error::EmptyGrid),
            _ => {}
        }
        Ok(())
    }
}
