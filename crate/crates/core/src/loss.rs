//! Composite classification-aware training objective.
//!
//! `J = w_r * rms + w_c * cross_entropy`. The pixel term is a mean of
//! squared differences (the name keeps the convention of the metric family
//! it came from; there is no square root). It can be restricted to a
//! position subset so blind-spot training supervises only hidden pixels.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::image::ImageTensor;

/// Weights of the pixel-reconstruction and classification terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub w_r: f64,
    pub w_c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        // (1, 0.2): reconstruction dominates, classification shapes features
        LossWeights { w_r: 1.0, w_c: 0.2 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_r.is_finite() && self.w_c.is_finite() && self.w_r >= 0.0 && self.w_c >= 0.0) {
            return Err(CoreError::Loss(format!(
                "loss weights must be finite and nonnegative, got ({}, {})",
                self.w_r, self.w_c
            )));
        }
        Ok(())
    }
}

/// Mean of squared differences over `positions` (default: all pixels),
/// with its gradient w.r.t. `pred`.
///
/// The gradient is `2 (pred - target) / |positions|` at included positions
/// and zero elsewhere.
pub fn rms_loss(
    pred: &ImageTensor,
    target: &ImageTensor,
    positions: Option<&[(usize, usize)]>,
) -> Result<(f64, Array2<f64>)> {
    if pred.shape() != target.shape() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{:?}", pred.shape()),
            actual: format!("{:?}", target.shape()),
        });
    }
    let (h, w) = pred.shape();
    let mut grad = Array2::zeros((h, w));
    let mut sum = 0.0;
    let count;
    match positions {
        None => {
            count = h * w;
            for i in 0..h {
                for j in 0..w {
                    let d = pred.get(i, j) - target.get(i, j);
                    sum += d * d;
                    grad[[i, j]] = 2.0 * d;
                }
            }
        }
        Some(pos) => {
            if pos.is_empty() {
                return Err(CoreError::Loss("empty position set".into()));
            }
            count = pos.len();
            for &(i, j) in pos {
                if i >= h || j >= w {
                    return Err(CoreError::Loss(format!(
                        "position ({i},{j}) outside {h}x{w} grid"
                    )));
                }
                let d = pred.get(i, j) - target.get(i, j);
                sum += d * d;
                grad[[i, j]] = 2.0 * d;
            }
        }
    }
    let n = count as f64;
    grad.mapv_inplace(|g| g / n);
    Ok((sum / n, grad))
}

/// Negative log-softmax of the correct class, with gradient
/// `softmax(logits) - onehot(label)`.
///
/// Computed with max-subtraction so large logits stay stable.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::Loss("non-finite logits".into()));
    }
    if label >= logits.len() {
        return Err(CoreError::LabelOutOfRange {
            label,
            num_classes: logits.len(),
        });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|&x| (x - max).exp()).sum();
    let log_sum_exp = max + sum_exp.ln();
    let loss = log_sum_exp - logits[label];
    let mut grad: Vec<f64> = logits
        .iter()
        .map(|&x| (x - max).exp() / sum_exp)
        .collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Result of the composite objective with both component values and the
/// gradients needed to drive the backward pass.
#[derive(Debug, Clone)]
pub struct CompositeLoss {
    pub value: f64,
    pub rms: f64,
    pub cross_entropy: f64,
    pub d_pred: Array2<f64>,
    pub d_logits: Vec<f64>,
}

/// `J = w_r * rms + w_c * ce`, gradients scaled correspondingly.
pub fn composite_loss(
    pred: &ImageTensor,
    target: &ImageTensor,
    positions: Option<&[(usize, usize)]>,
    logits: &[f64],
    label: usize,
    weights: &LossWeights,
) -> Result<CompositeLoss> {
    weights.validate()?;
    let (rms, mut d_pred) = rms_loss(pred, target, positions)?;
    let (ce, mut d_logits) = cross_entropy(logits, label)?;
    d_pred.mapv_inplace(|g| g * weights.w_r);
    for g in &mut d_logits {
        *g *= weights.w_c;
    }
    Ok(CompositeLoss {
        value: weights.w_r * rms + weights.w_c * ce,
        rms,
        cross_entropy: ce,
        d_pred,
        d_logits,
    })
}
