use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::{convolve_full, Waveform};
use crate::error::{Error, Result};

/// An exponential sine sweep and its matched inverse filter.
#[derive(Debug, Clone)]
pub struct Ess {
    pub sweep: Waveform,
    pub inverse: Waveform,
    pub f1: f64,
    pub f2: f64,
}

impl Ess {
    /// Instantaneous frequency of the sweep at time `t` seconds.
    pub fn instantaneous_frequency(&self, t: f64) -> f64 {
        let duration = self.sweep.duration();
        self.f1 * ((t / duration) * (self.f2 / self.f1).ln()).exp()
    }
}

/// Generates an exponential sweep from `f1` to `f2` Hz and its inverse
/// filter: the time-reversed sweep with an envelope proportional to the
/// instantaneous frequency (-6 dB/octave towards `f1`), scaled so
/// that `sweep ⊛ inverse` has unit gain at the geometric centre frequency.
pub fn generate_ess(f1: f64, f2: f64, duration: f64, rate: u32) -> Result<Ess> {
    let nyquist = rate as f64 / 2.0;
    if !(f1 > 0.0 && f1 < f2 && f2 < nyquist) {
        return Err(Error::invalid(format!(
            "sweep band must satisfy 0 < f1 < f2 < {nyquist} Hz, got {f1}..{f2}"
        )));
    }
    let len = (duration * rate as f64).round() as usize;
    if len < 2 {
        return Err(Error::invalid("sweep duration is too short"));
    }
    let t_total = len as f64 / rate as f64;
    let log_ratio = (f2 / f1).ln();
    let k = 2.0 * PI * f1 * t_total / log_ratio;
    let sweep: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 / rate as f64;
            (k * ((t / t_total * log_ratio).exp() - 1.0)).sin()
        })
        .collect();
    let mut inverse: Vec<f64> = (0..len)
        .map(|i| {
            let j = len - 1 - i;
            let t = j as f64 / rate as f64;
            sweep[j] * ((t / t_total - 1.0) * log_ratio).exp()
        })
        .collect();

    let pulse = convolve_full(&sweep, &inverse);
    let gain = gain_at(&pulse, (f1 * f2).sqrt(), rate);
    if !(gain > 0.0) {
        return Err(Error::Numeric("degenerate sweep normalisation".into()));
    }
    for v in &mut inverse {
        *v /= gain;
    }
    Ok(Ess {
        sweep: Waveform::new(sweep, rate)?,
        inverse: Waveform::new(inverse, rate)?,
        f1,
        f2,
    })
}

/// Magnitude of the DTFT of `x` at `freq` Hz.
fn gain_at(x: &[f64], freq: f64, rate: u32) -> f64 {
    let n = x.len().next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let k = ((freq / rate as f64) * n as f64).round() as usize;
    buf[k].norm()
}

/// Recovers the linear impulse response from a sweep recording. The linear
/// response starts where the deconvolved sweep peaks (`inverse.len() - 1`);
/// harmonic distortion products land earlier and are dropped.
pub fn deconvolve_sweep(recording: &Waveform, inverse: &Waveform) -> Result<Waveform> {
    if recording.is_empty() || inverse.is_empty() {
        return Err(Error::invalid("empty recording or inverse filter"));
    }
    if recording.rate() != inverse.rate() {
        return Err(Error::invalid("recording and inverse filter rates differ"));
    }
    let full = convolve_full(recording.samples(), inverse.samples());
    let start = inverse.len() - 1;
    let taps = recording.len().saturating_sub(inverse.len()) + 1;
    Waveform::new(full[start..start + taps].to_vec(), recording.rate())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_and_band_checks() {
        let ess = generate_ess(50.0, 7000.0, 1.0, 16_000).unwrap();
        assert_eq!(ess.sweep.len(), 16_000);
        assert_eq!(ess.inverse.len(), 16_000);
        assert!(generate_ess(0.0, 100.0, 1.0, 16_000).is_err());
        assert!(generate_ess(200.0, 100.0, 1.0, 16_000).is_err());
        assert!(generate_ess(20.0, 8000.0, 1.0, 16_000).is_err());
    }

    #[test]
    fn instantaneous_frequency_endpoints() {
        // estimate from the phase derivative of the generated samples
        let rate = 16_000;
        let ess = generate_ess(100.0, 6000.0, 2.0, rate).unwrap();
        let x = ess.sweep.samples();
        let est_freq = |center: usize| {
            // count zero crossings in a short window
            let half = 400;
            let lo = center.saturating_sub(half);
            let hi = (center + half).min(x.len() - 1);
            let mut crossings = Vec::new();
            for i in lo..hi {
                if x[i] <= 0.0 && x[i + 1] > 0.0 {
                    let frac = -x[i] / (x[i + 1] - x[i]);
                    crossings.push(i as f64 + frac);
                }
            }
            let periods = (crossings.len() - 1) as f64;
            periods * rate as f64 / (crossings.last().unwrap() - crossings[0])
        };
        assert!((ess.instantaneous_frequency(0.0) - 100.0).abs() < 1e-9);
        assert!((ess.instantaneous_frequency(2.0) - 6000.0).abs() < 1e-6);
        // measured frequency near the start and end, extrapolated analytically
        let f_start = est_freq(400);
        let f_expect = ess.instantaneous_frequency(400.0 / rate as f64);
        assert!((f_start - f_expect).abs() < 0.01 * f_expect, "{f_start} vs {f_expect}");
        let n = x.len();
        let f_end = est_freq(n - 401);
        let f_expect = ess.instantaneous_frequency((n - 401) as f64 / rate as f64);
        assert!((f_end - f_expect).abs() < 0.01 * f_expect, "{f_end} vs {f_expect}");
    }

    #[test]
    fn clean_sweep_deconvolves_to_pulse() {
        let ess = generate_ess(20.0, 7900.0, 1.0, 16_000).unwrap();
        let ir = deconvolve_sweep(&ess.sweep, &ess.inverse).unwrap();
        assert_eq!(ir.len(), 1);
        assert!(ir.samples()[0] > 0.5);
        let full = convolve_full(ess.sweep.samples(), ess.inverse.samples());
        let peak = ess.inverse.len() - 1;
        let max_idx = full
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap()
            .0;
        assert_eq!(max_idx, peak);
    }
}
