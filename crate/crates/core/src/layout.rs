//! Feature standardization and the square image-like layout that both
//! networks convolve over.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Signed square root, which tames the heavy tails of Gram entries.
pub fn power_normalize(x: f64) -> f64 {
    x.signum() * x.abs().sqrt()
}

/// Signed square root followed by per-dimension standardization fitted on
/// training stacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Dimensions with a spread below this are left unscaled.
const MIN_STD: f64 = 1e-8;

impl FeatureNormalizer {
    /// Zero mean and unit spread: only the signed square root applies.
    pub fn unfitted(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits mean and population standard deviation of the transformed
    /// `vectors`.
    pub fn fit<'a>(vectors: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sum_sq: Vec<f64> = Vec::new();
        for v in vectors {
            if n == 0 {
                sum = vec![0.0; v.len()];
                sum_sq = vec![0.0; v.len()];
            } else if v.len() != sum.len() {
                return Err(Error::Validation("feature vectors differ in length".into()));
            }
            for (j, x) in v.iter().map(|&x| power_normalize(x)).enumerate() {
                sum[j] += x;
                sum_sq[j] += x * x;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Validation("cannot fit a normalizer on zero vectors".into()));
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| {
                let s = (sq / nf - m * m).max(0.0).sqrt();
                if s < MIN_STD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    /// Centres on the mean of all vectors but scales each dimension by the
    /// spread *within* matched pairs, `sqrt(E[(a − b)²] / 2)`. Dimensions that
    /// vary between renders of one identity are damped; dimensions that are
    /// stable within an identity are amplified.
    pub fn fit_pair_spread<'a>(pairs: impl IntoIterator<Item = (&'a [f64], &'a [f64])>) -> Result<Self> {
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = pairs
            .into_iter()
            .map(|(a, b)| (a.iter().map(|&x| power_normalize(x)).collect(), b.iter().map(|&x| power_normalize(x)).collect()))
            .collect();
        let Some(dim) = pairs.first().map(|(a, _)| a.len()) else {
            return Err(Error::Validation("cannot fit a normalizer on zero pairs".into()));
        };
        if pairs.iter().any(|(a, b)| a.len() != dim || b.len() != dim) {
            return Err(Error::Validation("feature vectors differ in length".into()));
        }
        let n = pairs.len() as f64;
        let mut mean = vec![0.0; dim];
        let mut spread = vec![0.0; dim];
        for (a, b) in &pairs {
            for j in 0..dim {
                mean[j] += (a[j] + b[j]) / (2.0 * n);
                spread[j] += (a[j] - b[j]).powi(2) / (2.0 * n);
            }
        }
        let std = spread
            .into_iter()
            .map(|v| if v.sqrt() < MIN_STD { 1.0 } else { v.sqrt() })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (m, s))| (power_normalize(v) - m) / s)
            .collect()
    }
}

/// Side of the smallest square holding `dim` values.
pub fn square_side(dim: usize) -> usize {
    let mut s = (dim as f64).sqrt().floor() as usize;
    while s * s < dim {
        s += 1;
    }
    s.max(1)
}

/// Writes `x` row-major into a zero-padded square plane.
pub fn to_square(x: &[f64], plane: &mut [f64]) {
    plane.fill(0.0);
    plane[..x.len()].copy_from_slice(x);
}
