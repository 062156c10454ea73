//! Loss formulas used to train the egocentric estimator on pseudo labels.
//! Tensors are flat slices; the networks themselves are out of scope.

use crate::error::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 − EPS]` before taking logs.
pub const PROBABILITY_EPS: f64 = 1e-7;

fn mse(a: &[f64], b: &[f64], what: &str) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: prediction has {} values, label has {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::ShapeMismatch(format!("{what}: empty tensors")));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `mse(Ĥ, H) + mse(D̂, D)`.
pub fn reconstruction_loss(
    pred_heatmaps: &[f64],
    label_heatmaps: &[f64],
    pred_distances: &[f64],
    label_distances: &[f64],
) -> Result<f64> {
    Ok(mse(pred_heatmaps, label_heatmaps, "heatmaps")? + mse(pred_distances, label_distances, "distances")?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdversarialLoss {
    pub value: f64,
    /// Number of scores that had to be clamped.
    pub clamped: usize,
}

/// `−mean(log s⁺) − mean(log(1 − s⁻))` for a discriminator that should
/// output 1 on positives and 0 on negatives.
pub fn adversarial_loss(scores_positive: &[f64], scores_negative: &[f64]) -> Result<AdversarialLoss> {
    if scores_positive.is_empty() || scores_negative.is_empty() {
        return Err(Error::ShapeMismatch("adversarial loss needs non-empty score sets".into()));
    }
    let mut clamped = 0;
    let mut clamp = |s: f64| {
        let c = s.clamp(PROBABILITY_EPS, 1.0 - PROBABILITY_EPS);
        if c != s {
            clamped += 1;
        }
        c
    };
    let pos: f64 = scores_positive.iter().map(|&s| clamp(s).ln()).sum::<f64>() / scores_positive.len() as f64;
    let neg: f64 =
        scores_negative.iter().map(|&s| (1.0 - clamp(s)).ln()).sum::<f64>() / scores_negative.len() as f64;
    Ok(AdversarialLoss {
        value: -pos - neg,
        clamped,
    })
}
