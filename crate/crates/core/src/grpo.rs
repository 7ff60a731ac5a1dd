//! Group-relative advantages and the batch-mean bookkeeping behind gradient
//! dilution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageVector {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation (divides by G).
    pub std: f64,
    pub epsilon: f64,
}

impl AdvantageVector {
    pub fn is_zero_variance(&self) -> bool {
        self.std == 0.0
    }
}

/// Within-group z-scores `(r_i - mean) / (std + epsilon)`.
///
/// A group whose rewards are all equal gets exactly zero advantages,
/// independent of `epsilon`.
pub fn advantages(rewards: &[f64], epsilon: f64) -> Result<AdvantageVector> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::GroupTooSmall(g));
    }
    if epsilon < 0.0 || !epsilon.is_finite() {
        return Err(Error::InvalidConfig {
            field: "epsilon".into(),
            reason: format!("{epsilon} is not a finite non-negative number"),
        });
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    // all-equal check on the raw values so the zero case is exact even when
    // the mean picks up rounding error
    let constant = rewards.iter().all(|&r| r == rewards[0]);
    let std = if constant { 0.0 } else { (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64).sqrt() };
    let values = if constant { vec![0.0; g] } else { rewards.iter().map(|r| (r - mean) / (std + epsilon)).collect() };
    Ok(AdvantageVector { values, mean, std, epsilon })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    /// `-(1/N) Σ A_i · logp_i`
    pub loss: f64,
    /// `N_nonzero / N`: factor by which the non-zero-advantage mean is shrunk.
    pub effective_scale: f64,
    pub n_items: usize,
    pub n_nonzero: usize,
}

/// Mean policy-gradient loss over `(advantage, log-prob)` items.
pub fn batch_loss(items: &[(f64, f64)]) -> Result<BatchLoss> {
    if items.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    let n = items.len();
    let sum: f64 = items.iter().map(|(a, lp)| a * lp).sum();
    let n_nonzero = items.iter().filter(|(a, _)| *a != 0.0).count();
    Ok(BatchLoss { loss: -sum / n as f64, effective_scale: n_nonzero as f64 / n as f64, n_items: n, n_nonzero })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub n_items: usize,
    pub n_zero_advantage: usize,
    pub zero_fraction: f64,
    pub gradient_l2: f64,
    pub loss: f64,
}

/// Predicted gradient-norm amplification `(1 - z_gated) / (1 - z_base)`
/// from the zero-advantage fractions of the two arms.
pub fn dilution_ratio(z_base: f64, z_gated: f64) -> Result<f64> {
    for (name, z) in [("z_base", z_base), ("z_gated", z_gated)] {
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::InvalidConfig { field: name.into(), reason: format!("{z} is outside [0, 1)") });
        }
        if z == 1.0 {
            return Err(Error::AllZeroBatch);
        }
    }
    Ok((1.0 - z_gated) / (1.0 - z_base))
}

/// `||A_kept||_2 / ||A_full||_2`.
pub fn l2_preservation(all: &[f64], kept: &[bool]) -> Result<f64> {
    if all.len() != kept.len() {
        return Err(Error::LengthMismatch(all.len(), kept.len()));
    }
    let full: f64 = all.iter().map(|a| a * a).sum();
    if full == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let k: f64 = all.iter().zip(kept).filter(|(_, &k)| k).map(|(a, _)| a * a).sum();
    Ok((k / full).sqrt())
}
