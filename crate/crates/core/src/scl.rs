//! Soft confident learning: score-derived sample weights and the
//! covariance-driven adaptive regularizer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::ParamSet;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SclError {
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("score at index {0} is not positive")]
    NonPositiveScore(usize),
    #[error("kappa must be finite and non-negative, got {0}")]
    InvalidKappa(f64),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("lambda0 and gamma must be non-negative, got lambda0={lambda0}, gamma={gamma}")]
    InvalidRegularizer { lambda0: f64, gamma: f64 },
    #[error("covariance determinant {0} is negative beyond rounding")]
    NegativeDeterminant(f64),
}

pub type Result<T> = std::result::Result<T, SclError>;

/// Smallest shifted score when a batch contains non-positive scores.
pub const SCORE_FLOOR: f64 = 1e-8;

/// Determinants down to this value are treated as rounding noise around 0.
pub const DET_TOLERANCE: f64 = 1e-12;

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(SclError::NonFinite(i)),
        None => Ok(()),
    }
}

/// First and third quartiles with linear interpolation at `p * (n - 1)`.
pub fn quartiles(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(SclError::TooFew { needed: 1, got: 0 });
    }
    check_finite(values)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&sorted, 0.25), quantile_sorted(&sorted, 0.75)))
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Tukey-style fence `Q3 + kappa * (Q3 - Q1)`.
pub fn iqr_threshold(scores: &[f64], kappa: f64) -> Result<f64> {
    if scores.len() < 2 {
        return Err(SclError::TooFew {
            needed: 2,
            got: scores.len(),
        });
    }
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(SclError::InvalidKappa(kappa));
    }
    let (q1, q3) = quartiles(scores)?;
    Ok(q3 + kappa * (q3 - q1))
}

/// Per-sample weights derived from one batch of anomaly scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceState {
    pub weights: Vec<f64>,
    pub threshold: f64,
    pub q1: f64,
    pub q3: f64,
    pub kappa: f64,
    pub epoch: usize,
    /// Constant added to every score before thresholding; 0 when all scores
    /// were already positive.
    pub score_shift: f64,
}

impl ConfidenceState {
    /// Every sample at full weight, as used when data weighting is disabled.
    pub fn uniform(n: usize, kappa: f64, epoch: usize) -> Self {
        Self {
            weights: vec![1.0; n],
            threshold: f64::INFINITY,
            q1: 0.0,
            q3: 0.0,
            kappa,
            epoch,
            score_shift: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn min_weight(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn median_weight(&self) -> f64 {
        if self.weights.is_empty() {
            return f64::NAN;
        }
        let mut w = self.weights.clone();
        w.sort_by(f64::total_cmp);
        quantile_sorted(&w, 0.5)
    }

    pub fn fraction_below_one(&self) -> f64 {
        if self.weights.is_empty() {
            return 0.0;
        }
        self.weights.iter().filter(|&&w| w < 1.0).count() as f64 / self.weights.len() as f64
    }

    /// Weights restricted to `indices`, preserving order.
    pub fn select(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&i| self.weights[i]).collect()
    }
}

/// `w_i = min(1, t / s_i)` on scores shifted to be strictly positive.
pub fn confidence_weights(scores: &[f64], kappa: f64) -> Result<ConfidenceState> {
    confidence_weights_at_epoch(scores, kappa, 0)
}

pub fn confidence_weights_at_epoch(scores: &[f64], kappa: f64, epoch: usize) -> Result<ConfidenceState> {
    if scores.len() < 2 {
        return Err(SclError::TooFew {
            needed: 2,
            got: scores.len(),
        });
    }
    check_finite(scores)?;
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let score_shift = if min <= 0.0 { SCORE_FLOOR - min } else { 0.0 };
    let shifted: Vec<f64> = scores.iter().map(|s| s + score_shift).collect();
    let (q1, q3) = quartiles(&shifted)?;
    let threshold = iqr_threshold(&shifted, kappa)?;
    let weights = saturated_inverse(&shifted, threshold)?;
    Ok(ConfidenceState {
        weights,
        threshold,
        q1,
        q3,
        kappa,
        epoch,
        score_shift,
    })
}

/// `min(1, t / s_i)` for already-positive scores `s_i`.
pub fn saturated_inverse(shifted_scores: &[f64], threshold: f64) -> Result<Vec<f64>> {
    check_finite(shifted_scores)?;
    if let Some(i) = shifted_scores.iter().position(|&s| s <= 0.0) {
        return Err(SclError::NonPositiveScore(i));
    }
    Ok(shifted_scores.iter().map(|&s| (threshold / s).min(1.0)).collect())
}

/// `sum_i w_i * L_i`.
pub fn data_weighted_loss(per_sample_losses: &[f64], weights: &[f64]) -> Result<f64> {
    if per_sample_losses.len() != weights.len() {
        return Err(SclError::LengthMismatch {
            left: per_sample_losses.len(),
            right: weights.len(),
        });
    }
    Ok(per_sample_losses.iter().zip(weights).map(|(l, w)| l * w).sum())
}

/// Aligned training/validation loss pairs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossPairSeries {
    pub train: Vec<f64>,
    pub val: Vec<f64>,
}

impl LossPairSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(train: Vec<f64>, val: Vec<f64>) -> Result<Self> {
        if train.len() != val.len() {
            return Err(SclError::LengthMismatch {
                left: train.len(),
                right: val.len(),
            });
        }
        check_finite(&train)?;
        check_finite(&val)?;
        Ok(Self { train, val })
    }

    pub fn push(&mut self, train: f64, val: f64) -> Result<()> {
        if !train.is_finite() || !val.is_finite() {
            return Err(SclError::NonFinite(self.train.len()));
        }
        self.train.push(train);
        self.val.push(val);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }
}

/// Symmetric 2x2 covariance `[[var_t, cov], [cov, var_v]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cov2(pub [[f64; 2]; 2]);

impl Cov2 {
    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn eigenvalues(&self) -> (f64, f64) {
        let m = &self.0;
        let mean = 0.5 * (m[0][0] + m[1][1]);
        let half_diff = 0.5 * (m[0][0] - m[1][1]);
        let r = (half_diff * half_diff + m[0][1] * m[1][0]).max(0.0).sqrt();
        (mean - r, mean + r)
    }
}

/// Unbiased sample covariance of the train/val loss series.
pub fn loss_covariance(series: &LossPairSeries) -> Result<Cov2> {
    let m = series.len();
    if m < 2 {
        return Err(SclError::TooFew { needed: 2, got: m });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / m as f64;
    let (mt, mv) = (mean(&series.train), mean(&series.val));
    let (mut stt, mut stv, mut svv) = (0.0, 0.0, 0.0);
    for (t, v) in series.train.iter().zip(&series.val) {
        let (dt, dv) = (t - mt, v - mv);
        stt += dt * dt;
        stv += dt * dv;
        svv += dv * dv;
    }
    let denom = (m - 1) as f64;
    let cov = stv / denom;
    Ok(Cov2([[stt / denom, cov], [cov, svv / denom]]))
}

/// Inputs and outputs of one adaptive-regularizer evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerState {
    pub lambda0: f64,
    pub gamma: f64,
    pub sigma: Cov2,
    pub det_sigma: f64,
    pub lambda: f64,
}

/// `lambda0 * (1 + gamma * det(sigma))`.
pub fn adaptive_lambda(lambda0: f64, gamma: f64, sigma: &Cov2) -> Result<RegularizerState> {
    if !(lambda0 >= 0.0) || !(gamma >= 0.0) {
        return Err(SclError::InvalidRegularizer { lambda0, gamma });
    }
    let raw = sigma.det();
    if raw < -DET_TOLERANCE || !raw.is_finite() {
        return Err(SclError::NegativeDeterminant(raw));
    }
    let det_sigma = raw.max(0.0);
    Ok(RegularizerState {
        lambda0,
        gamma,
        sigma: *sigma,
        det_sigma,
        lambda: lambda0 * (1.0 + gamma * det_sigma),
    })
}

/// Weighted data loss plus `lambda * ||theta||^2`.
pub fn scl_loss(per_sample_losses: &[f64], weights: &[f64], params: &ParamSet, lambda: f64) -> Result<f64> {
    Ok(data_weighted_loss(per_sample_losses, weights)? + lambda * params.squared_norm())
}
