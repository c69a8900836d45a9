use std::f64::consts::LN_10;

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::dataset::MixtureSample;
use crate::error::{Error, Result};

const DB: f64 = 10.0 / LN_10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub tau_active: f64,
    pub tau_inactive: f64,
    /// Weight of the inactive term in the batch objective.
    pub inactive_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau_active: 1e-3,
            tau_inactive: 1e-2,
            inactive_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_active > 0.0 && self.tau_inactive > 0.0) {
            return Err(Error::config("loss soft thresholds must be positive"));
        }
        if !(self.inactive_weight.is_finite() && self.inactive_weight >= 0.0) {
            return Err(Error::config("inactive_weight must be finite and non-negative"));
        }
        Ok(())
    }
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn check_pair(a: &[f64], b: &[f64], what: &str) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("{what} has {} samples, estimate has {}", a.len(), b.len())));
    }
    let e = energy(a);
    if e == 0.0 {
        return Err(Error::invalid(format!("{what} is all zeros")));
    }
    Ok(e)
}

/// Soft-thresholded SDR in dB; bounded above by `10 log10(1 / tau)`.
pub fn loss_active(x: &Waveform, x_hat: &Waveform, tau: f64) -> Result<f64> {
    active_value_grad(x.samples(), x_hat.samples(), tau).map(|(v, _)| v)
}

/// Output energy in dB with a floor relative to the mixture energy.
pub fn loss_inactive(y: &Waveform, x_hat: &Waveform, tau: f64) -> Result<f64> {
    inactive_value_grad(y.samples(), x_hat.samples(), tau).map(|(v, _)| v)
}

/// Active loss and its gradient with respect to the estimate.
pub fn active_value_grad(x: &[f64], x_hat: &[f64], tau: f64) -> Result<(f64, Vec<f64>)> {
    let ex = check_pair(x, x_hat, "reference")?;
    let err: Vec<f64> = x.iter().zip(x_hat).map(|(a, b)| a - b).collect();
    let den = energy(&err) + tau * ex;
    let value = DB * (ex / den).ln();
    let grad = err.iter().map(|e| DB * 2.0 * e / den).collect();
    Ok((value, grad))
}

/// Inactive loss and its gradient with respect to the estimate.
pub fn inactive_value_grad(y: &[f64], x_hat: &[f64], tau: f64) -> Result<(f64, Vec<f64>)> {
    let ey = check_pair(y, x_hat, "mixture")?;
    let den = energy(x_hat) + tau * ey;
    let value = DB * den.ln();
    let grad = x_hat.iter().map(|v| DB * 2.0 * v / den).collect();
    Ok((value, grad))
}

/// Per-sample objective to minimise (`-L_active` or `weight * L_0`) and its
/// gradient with respect to the estimate.
pub fn sample_objective(sample: &MixtureSample, x_hat: &Waveform, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    if sample.is_active() {
        let (v, mut g) = active_value_grad(sample.target.samples(), x_hat.samples(), cfg.tau_active)?;
        g.iter_mut().for_each(|x| *x = -*x);
        Ok((-v, g))
    } else {
        let (v, mut g) = inactive_value_grad(sample.mixture.samples(), x_hat.samples(), cfg.tau_inactive)?;
        g.iter_mut().for_each(|x| *x *= cfg.inactive_weight);
        Ok((cfg.inactive_weight * v, g))
    }
}

/// Mean per-sample objective over a batch of `(sample, estimate)` pairs.
pub fn batch_objective(batch: &[(&MixtureSample, &Waveform)], cfg: &LossConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut total = 0.0;
    for (s, x_hat) in batch {
        total += sample_objective(s, x_hat, cfg)?.0;
    }
    Ok(total / batch.len() as f64)
}
