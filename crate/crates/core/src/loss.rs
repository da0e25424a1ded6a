//! Preference objectives over per-example policy/reference log-probabilities.
//!
//! Three variants, all functions of the log-ratios
//! `dw = log pi(y_w|x) - log pi_ref(y_w|x)` (chosen) and
//! `du = log pi(y_u|x) - log pi_ref(y_u|x)` (rejected):
//!
//! - sigmoid: `-log sigmoid(beta*dw - beta*du)`, minimized
//! - hinge:   `max(0, 1 - (beta*dw - beta*du))`
//! - KTO: per pair, `(lw*(1 - sigmoid(beta*(dw - KL))) + lu*(1 - sigmoid(beta*(KL - du))))/2`
//!   with a batch-level KL reference point estimated from mismatched
//!   (context, completion) pairings and clamped at zero. The KL estimate is
//!   treated as a constant: no gradient flows through it.
//!
//! With policy == reference every variant sits at its analytic start value:
//! ln 2, 1.0 and 0.5 respectively.

use core::fmt;

/// Policy and reference log-probabilities for one preference pair.
/// All four are finite and non-positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLogps {
    pub policy_chosen: f64,
    pub policy_rejected: f64,
    pub ref_chosen: f64,
    pub ref_rejected: f64,
}

impl PairLogps {
    /// Chosen log-ratio `dw`.
    #[inline]
    pub fn delta_chosen(&self) -> f64 {
        self.policy_chosen - self.ref_chosen
    }

    /// Rejected log-ratio `du`.
    #[inline]
    pub fn delta_rejected(&self) -> f64 {
        self.policy_rejected - self.ref_rejected
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let vals = [
            self.policy_chosen,
            self.policy_rejected,
            self.ref_chosen,
            self.ref_rejected,
        ];
        if vals.iter().all(|v| v.is_finite() && *v <= 0.0) {
            Ok(())
        } else {
            Err(LossError::InvalidLogps)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossVariant {
    Sigmoid,
    Hinge,
    Kto,
}

impl LossVariant {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sigmoid" => Some(LossVariant::Sigmoid),
            "hinge" => Some(LossVariant::Hinge),
            "kto" => Some(LossVariant::Kto),
            _ => None,
        }
    }

    /// Loss value when the policy equals the reference (and KL = 0).
    pub fn init_constant(&self) -> f64 {
        match self {
            LossVariant::Sigmoid => core::f64::consts::LN_2,
            LossVariant::Hinge => 1.0,
            LossVariant::Kto => 0.5,
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossVariant::Sigmoid => write!(f, "sigmoid"),
            LossVariant::Hinge => write!(f, "hinge"),
            LossVariant::Kto => write!(f, "kto"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub variant: LossVariant,
    pub beta: f64,
    pub kto_lambda_w: f64,
    pub kto_lambda_u: f64,
}

impl LossConfig {
    pub fn new(variant: LossVariant, beta: f64) -> Self {
        LossConfig { variant, beta, kto_lambda_w: 1.0, kto_lambda_u: 1.0 }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(LossError::InvalidBeta(self.beta));
        }
        if self.kto_lambda_w < 0.0 || self.kto_lambda_u < 0.0 {
            return Err(LossError::InvalidLambda);
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::new(LossVariant::Sigmoid, 0.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossError {
    EmptyBatch,
    InvalidBeta(f64),
    InvalidLambda,
    InvalidLogps,
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossError::EmptyBatch => write!(f, "batch is empty"),
            LossError::InvalidBeta(b) => write!(f, "beta must be positive and finite, got {b}"),
            LossError::InvalidLambda => write!(f, "KTO lambdas must be non-negative"),
            LossError::InvalidLogps => write!(f, "log-probabilities must be finite and <= 0"),
        }
    }
}

impl core::error::Error for LossError {}

/// Numerically stable sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// `-log sigmoid(beta*(dw - du))`; the negative-log form of the sigmoid
/// preference objective, minimized.
pub fn loss_sigmoid(p: &PairLogps, beta: f64) -> f64 {
    let z = beta * (p.delta_chosen() - p.delta_rejected());
    softplus(-z)
}

/// `max(0, 1 - beta*(dw - du))`. At the kink the subgradient 0 is used (the
/// inactive branch).
pub fn loss_hinge(p: &PairLogps, beta: f64) -> f64 {
    let z = beta * (p.delta_chosen() - p.delta_rejected());
    if z < 1.0 {
        1.0 - z
    } else {
        0.0
    }
}

/// KL reference-point estimate: clamped mean of mismatched
/// (context, completion) policy/reference log-ratios. The mismatched ratios
/// are produced upstream by pairing each context with the chosen completion
/// of the next pair in the batch (index shift of 1, wrapping), so the value
/// is deterministic given batch order. No gradient flows through it.
pub fn kl_estimate(mismatched_logratios: &[f64]) -> Result<f64, LossError> {
    if mismatched_logratios.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mean = mismatched_logratios.iter().sum::<f64>() / mismatched_logratios.len() as f64;
    Ok(mean.max(0.0))
}

/// Per-pair KTO loss given the (already clamped, already detached) KL value.
pub fn kto_pair_loss(p: &PairLogps, beta: f64, lambda_w: f64, lambda_u: f64, kl: f64) -> f64 {
    let vw = sigmoid(beta * (p.delta_chosen() - kl));
    let vu = sigmoid(beta * (kl - p.delta_rejected()));
    (lambda_w * (1.0 - vw) + lambda_u * (1.0 - vu)) / 2.0
}

/// Mean KTO loss over a batch.
pub fn loss_kto(
    batch: &[PairLogps],
    beta: f64,
    lambda_w: f64,
    lambda_u: f64,
    kl: f64,
) -> Result<f64, LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let sum: f64 = batch
        .iter()
        .map(|p| kto_pair_loss(p, beta, lambda_w, lambda_u, kl))
        .sum();
    Ok(sum / batch.len() as f64)
}

/// Gradient of one pair's loss with respect to its two log-ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairGrad {
    /// d(loss)/d(dw); equals d(loss)/d(policy_chosen) since the reference is frozen.
    pub d_chosen: f64,
    /// d(loss)/d(du) = d(loss)/d(policy_rejected).
    pub d_rejected: f64,
}

/// Loss and log-ratio gradient for one pair. `kl` is only read by KTO.
pub fn pair_loss_and_grad(cfg: &LossConfig, p: &PairLogps, kl: f64) -> (f64, PairGrad) {
    let beta = cfg.beta;
    match cfg.variant {
        LossVariant::Sigmoid => {
            let z = beta * (p.delta_chosen() - p.delta_rejected());
            let s = sigmoid(-z); // = 1 - sigmoid(z)
            (softplus(-z), PairGrad { d_chosen: -beta * s, d_rejected: beta * s })
        }
        LossVariant::Hinge => {
            let z = beta * (p.delta_chosen() - p.delta_rejected());
            if z < 1.0 {
                (1.0 - z, PairGrad { d_chosen: -beta, d_rejected: beta })
            } else {
                (0.0, PairGrad { d_chosen: 0.0, d_rejected: 0.0 })
            }
        }
        LossVariant::Kto => {
            let (lw, lu) = (cfg.kto_lambda_w, cfg.kto_lambda_u);
            let aw = beta * (p.delta_chosen() - kl);
            let au = beta * (kl - p.delta_rejected());
            let sw = sigmoid(aw);
            let su = sigmoid(au);
            let loss = (lw * (1.0 - sw) + lu * (1.0 - su)) / 2.0;
            (
                loss,
                PairGrad {
                    d_chosen: -lw * beta * sw * (1.0 - sw) / 2.0,
                    d_rejected: lu * beta * su * (1.0 - su) / 2.0,
                },
            )
        }
    }
}

/// Reward/margin/accuracy diagnostics: rewards are the mean
/// `beta*(policy - reference)` log-ratios, the margin is their difference
/// and the accuracy counts pairs with a strictly positive margin (ties are
/// incorrect, so an untrained model reads 0, not 50%).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchDiagnostics {
    pub reward_chosen_mean: f64,
    pub reward_rejected_mean: f64,
    pub margin_mean: f64,
    pub preference_accuracy: f64,
}

pub fn diagnostics(batch: &[PairLogps], beta: f64) -> Result<BatchDiagnostics, LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let n = batch.len() as f64;
    let reward_chosen_mean = batch.iter().map(|p| beta * p.delta_chosen()).sum::<f64>() / n;
    let reward_rejected_mean = batch.iter().map(|p| beta * p.delta_rejected()).sum::<f64>() / n;
    let correct = batch
        .iter()
        .filter(|p| p.delta_chosen() > p.delta_rejected())
        .count();
    Ok(BatchDiagnostics {
        reward_chosen_mean,
        reward_rejected_mean,
        margin_mean: reward_chosen_mean - reward_rejected_mean,
        preference_accuracy: correct as f64 / n,
    })
}
