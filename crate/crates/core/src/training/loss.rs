//! Dice-type losses on singleton masses and fused probabilities.

use crate::dst::SimpleMassFunction;
use crate::error::{Error, Result};

/// `1 - 2 Σ x·G / Σ (x + G)` over a voxel-major `N × K` array, with its
/// gradient `∂/∂x_nk = -2 (G_nk B - A) / B²` where `A = Σ x·G`, `B = Σ (x + G)`.
pub fn dice_term(x: &[f64], one_hot: &[f64]) -> Result<(f64, Vec<f64>)> {
    if x.is_empty() {
        return Err(Error::Empty("voxel grid"));
    }
    if x.len() != one_hot.len() {
        return Err(Error::DimensionMismatch { what: "loss inputs", expected: one_hot.len(), got: x.len() });
    }
    let a: f64 = x.iter().zip(one_hot).map(|(v, g)| v * g).sum();
    let b: f64 = x.iter().sum::<f64>() + one_hot.iter().sum::<f64>();
    let loss = 1.0 - 2.0 * a / b;
    let b2 = b * b;
    let grad = one_hot.iter().map(|&g| -2.0 * (g * b - a) / b2).collect();
    Ok((loss, grad))
}

/// Sum over modalities of the Dice term on singleton masses.
/// `masses[t][n]` is modality `t` at voxel `n`.
pub fn loss_source(masses: &[Vec<SimpleMassFunction>], one_hot: &[f64]) -> Result<f64> {
    if masses.is_empty() {
        return Err(Error::Empty("modality list"));
    }
    masses
        .iter()
        .map(|per_voxel| {
            let x: Vec<f64> = per_voxel.iter().flat_map(|m| m.singletons().iter().copied()).collect();
            dice_term(&x, one_hot).map(|(l, _)| l)
        })
        .sum()
}

/// Dice term on the fused probabilities, voxel-major `N × K`.
pub fn loss_fused(probs: &[f64], one_hot: &[f64]) -> Result<f64> {
    dice_term(probs, one_hot).map(|(l, _)| l)
}

/// `loss_s + loss_f`.
pub fn total_loss(loss_s: f64, loss_f: f64) -> f64 {
    loss_s + loss_f
}

/// Mean cross-entropy of softmax logits (`N × K`) against labels, and its
/// gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], labels: &[u16], k: usize) -> (f64, Vec<f64>) {
    let n = labels.len() as f64;
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for ((z, g), &l) in logits.chunks_exact(k).zip(grad.chunks_exact_mut(k)).zip(labels) {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - z[l as usize];
        for c in 0..k {
            g[c] = ((z[c] - log_sum).exp() - if c == l as usize { 1.0 } else { 0.0 }) / n;
        }
    }
    (loss / n, grad)
}
