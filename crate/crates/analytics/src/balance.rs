//! Participation balance: one minus the variance of contribution fractions.
//!
//! The variance is the sample variance (denominator n - 1). That is the only
//! choice that gives both published anchors for two people: an even split
//! scores 1.0 and one person doing everything scores 0.5. Population
//! variance would give 0.75 for the latter.

use thiserror::Error;

pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid contribution fractions: {0}")]
pub struct InvalidFractions(pub String);

pub fn participation_balance(fractions: &[f64]) -> Result<f64, InvalidFractions> {
    if fractions.len() < 2 {
        return Err(InvalidFractions(format!("need at least 2 contributors, got {}", fractions.len())));
    }
    if let Some(f) = fractions.iter().find(|f| !f.is_finite() || **f < 0.0) {
        return Err(InvalidFractions(format!("fraction {f} is negative or not finite")));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(InvalidFractions(format!("fractions sum to {sum}, not 1")));
    }
    let n = fractions.len() as f64;
    let mean = sum / n;
    let ss: f64 = fractions.iter().map(|f| (f - mean).powi(2)).sum();
    Ok(1.0 - ss / (n - 1.0))
}

/// Fractions of `counts`, in order. Empty when nobody contributed.
pub fn fractions(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Vec::new();
    }
    counts.iter().map(|c| *c as f64 / total as f64).collect()
}
