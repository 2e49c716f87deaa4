//! Training objectives: per-layer stacked identity loss, binary cross
//! entropy, their weighted sum, and the dual-reconstruction loss. Every loss
//! returns its analytic gradient alongside the value.

use crate::error::{Error, Result};
use crate::features::StyleFeatureStack;

/// Norm floor below which a cosine is undefined.
pub const NORM_EPS: f64 = 1e-12;
/// Probability clamp applied before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// A scalar loss plus gradient blocks, one per input argument in the order
/// documented by the producing function.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradients: Vec<Vec<f64>>,
}

/// Reference/suspicious stacks with pair labels (1 = real-real, 0 = fake-real).
#[derive(Debug, Clone)]
pub struct PairBatch<'a> {
    pub ref_stacks: Vec<&'a StyleFeatureStack>,
    pub sus_stacks: Vec<&'a StyleFeatureStack>,
    pub labels: Vec<f64>,
}

impl PairBatch<'_> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if n == 0 {
            return Err(Error::Validation("empty pair batch".into()));
        }
        if self.ref_stacks.len() != n || self.sus_stacks.len() != n {
            return Err(Error::Validation(format!(
                "batch has {n} labels but {} reference and {} suspicious stacks",
                self.ref_stacks.len(),
                self.sus_stacks.len()
            )));
        }
        check_labels(&self.labels)?;
        let layout = self.ref_stacks[0].layer_offsets();
        if self
            .ref_stacks
            .iter()
            .chain(&self.sus_stacks)
            .any(|s| s.layer_offsets() != layout)
        {
            return Err(Error::Validation("stacks in a batch must share layer offsets".into()));
        }
        Ok(())
    }
}

fn check_labels(labels: &[f64]) -> Result<()> {
    match labels.iter().position(|&y| y != 0.0 && y != 1.0) {
        Some(i) => Err(Error::Validation(format!("label {} at index {i} is not 0 or 1", labels[i]))),
        None => Ok(()),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `a·b / (‖a‖‖b‖)`; errors rather than returning 0 when either norm is
/// below [`NORM_EPS`].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    cosine_with_grad(a, b).map(|(c, _, _)| c)
}

/// Cosine similarity and its gradients with respect to `a` and `b`.
pub fn cosine_with_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!("cosine of vectors with lengths {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na <= NORM_EPS || nb <= NORM_EPS {
        return Err(Error::Degenerate(format!("vector norm below {NORM_EPS:e}")));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let cos = dot / (na * nb);
    let ga = a.iter().zip(b).map(|(x, y)| y / (na * nb) - cos * x / (na * na)).collect();
    let gb = a.iter().zip(b).map(|(x, y)| x / (na * nb) - cos * y / (nb * nb)).collect();
    Ok((cos, ga, gb))
}

/// Stacked identity loss over per-layer slices:
/// `(1/N) Σ_i Σ_l [y_i (1 − cos_il) + (1 − y_i) cos_il]`.
///
/// The value lies in `[−L, 2L]`. Gradient blocks are the `N` reference
/// stacks followed by the `N` suspicious stacks.
pub fn stacked_identity_loss(batch: &PairBatch<'_>) -> Result<LossValue> {
    batch.validate()?;
    let n = batch.len() as f64;
    let mut value = 0.0;
    let mut ref_grads = Vec::with_capacity(batch.len());
    let mut sus_grads = Vec::with_capacity(batch.len());
    for (i, ((r, s), &y)) in batch.ref_stacks.iter().zip(&batch.sus_stacks).zip(&batch.labels).enumerate() {
        let mut gr = vec![0.0; r.len()];
        let mut gs = vec![0.0; s.len()];
        for (l, range) in r.layer_offsets().iter().enumerate() {
            let (cos, ga, gb) = cosine_with_grad(r.layer(l), s.layer(l)).map_err(|e| match e {
                Error::Degenerate(msg) => Error::Degenerate(format!("pair {i}, layer {l}: {msg}")),
                other => other,
            })?;
            value += y * (1.0 - cos) + (1.0 - y) * cos;
            // d/dcos of the bracket is (1 − 2y)
            let w = (1.0 - 2.0 * y) / n;
            for (g, d) in gr[range.clone()].iter_mut().zip(&ga) {
                *g = w * d;
            }
            for (g, d) in gs[range.clone()].iter_mut().zip(&gb) {
                *g = w * d;
            }
        }
        ref_grads.push(gr);
        sus_grads.push(gs);
    }
    ref_grads.extend(sus_grads);
    Ok(LossValue {
        value: value / n,
        gradients: ref_grads,
    })
}

/// Mean binary cross entropy with predictions clamped to
/// `[PROB_EPS, 1 − PROB_EPS]`. One gradient block, with respect to the
/// predictions; it is zero where the clamp is active.
pub fn bce_loss(predictions: &[f64], labels: &[f64]) -> Result<LossValue> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::Validation(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    check_labels(labels)?;
    if predictions.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("non-finite prediction".into()));
    }
    let n = predictions.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(predictions.len());
    for (&p, &y) in predictions.iter().zip(labels) {
        let clamped = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        value -= y * clamped.ln() + (1.0 - y) * (1.0 - clamped).ln();
        grad.push(if clamped == p {
            -(y / p - (1.0 - y) / (1.0 - p)) / n
        } else {
            0.0
        });
    }
    Ok(LossValue {
        value: value / n,
        gradients: vec![grad],
    })
}

/// `L_BCE + α·L_SIL`. Gradient blocks are the BCE blocks followed by the
/// SIL blocks scaled by `α`.
pub fn final_loss(bce: &LossValue, sil: &LossValue, alpha: f64) -> Result<LossValue> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::Config(format!("alpha must be a finite non-negative number, got {alpha}")));
    }
    if !bce.value.is_finite() || !sil.value.is_finite() {
        return Err(Error::Numeric("final loss inputs must be finite".into()));
    }
    let mut gradients = bce.gradients.clone();
    gradients.extend(sil.gradients.iter().map(|g| g.iter().map(|v| alpha * v).collect()));
    Ok(LossValue {
        value: bce.value + alpha * sil.value,
        gradients,
    })
}

/// `‖x1 − x̂‖² + ‖x2 − x̂‖²`, gradient blocks `(x1, x2, x̂)`.
pub fn reconstruction_loss(x1: &[f64], x2: &[f64], x_hat: &[f64]) -> Result<LossValue> {
    if x1.len() != x_hat.len() || x2.len() != x_hat.len() {
        return Err(Error::Validation(format!(
            "reconstruction inputs have lengths {}, {}, {}",
            x1.len(),
            x2.len(),
            x_hat.len()
        )));
    }
    let d1: Vec<f64> = x1.iter().zip(x_hat).map(|(a, b)| a - b).collect();
    let d2: Vec<f64> = x2.iter().zip(x_hat).map(|(a, b)| a - b).collect();
    let value = d1.iter().map(|d| d * d).sum::<f64>() + d2.iter().map(|d| d * d).sum::<f64>();
    let g_hat = d1.iter().zip(&d2).map(|(a, b)| -2.0 * (a + b)).collect();
    Ok(LossValue {
        value,
        gradients: vec![
            d1.iter().map(|d| 2.0 * d).collect(),
            d2.iter().map(|d| 2.0 * d).collect(),
            g_hat,
        ],
    })
}
