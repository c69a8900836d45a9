//! Waveform container, STFT/iSTFT, RMS scaling, convolution and WAV I/O.

mod stft;
mod wav;

pub use stft::{istft, istft_adjoint, stft, ComplexSpectrogram, StftConfig, WindowKind};
pub use wav::{read_wav, read_wav_channels, write_wav, SampleFormat};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All audio in this crate runs at 16 kHz.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio, full scale is ±1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f64>,
    rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, rate: u32) -> Result<Self> {
        if rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, rate })
    }

    pub fn zeros(len: usize, rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.energy() / self.samples.len() as f64).sqrt()
    }

    /// RMS level in dBFS; `-inf` for silence.
    pub fn rms_dbfs(&self) -> f64 {
        20.0 * self.rms().log10()
    }

    pub fn is_silent(&self) -> bool {
        self.samples.iter().all(|&s| s == 0.0)
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            rate: self.rate,
        }
    }

    /// Sample-wise sum. Both operands must share rate and length.
    pub fn add(&self, other: &Waveform) -> Result<Self> {
        if self.rate != other.rate {
            return Err(Error::invalid(format!(
                "sample rate mismatch: {} vs {}",
                self.rate, other.rate
            )));
        }
        if self.len() != other.len() {
            return Err(Error::shape(format!(
                "length mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(Self {
            samples: self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a + b)
                .collect(),
            rate: self.rate,
        })
    }

    /// Zero-pads or truncates to exactly `len` samples.
    pub fn fit_to(&self, len: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Self {
            samples,
            rate: self.rate,
        }
    }
}

/// Rescales `w` so its RMS level equals `target_dbfs`.
pub fn scale_to_rms(w: &Waveform, target_dbfs: f64) -> Result<Waveform> {
    if !target_dbfs.is_finite() {
        return Err(Error::invalid("target level must be finite"));
    }
    let rms = w.rms();
    if rms == 0.0 {
        return Err(Error::invalid("cannot rescale a silent waveform"));
    }
    let gain = 10f64.powf(target_dbfs / 20.0) / rms;
    Ok(w.scaled(gain))
}

/// Linear convolution of `w` with `kernel`, truncated to `w.len()` samples.
pub fn convolve(w: &Waveform, kernel: &Waveform) -> Result<Waveform> {
    if w.rate() != kernel.rate() {
        return Err(Error::invalid(format!(
            "sample rate mismatch: signal {} Hz, kernel {} Hz",
            w.rate(),
            kernel.rate()
        )));
    }
    if w.is_empty() || kernel.is_empty() {
        return Ok(Waveform::zeros(w.len(), w.rate()));
    }
    let mut full = convolve_full(w.samples(), kernel.samples());
    full.truncate(w.len());
    Waveform::new(full, w.rate())
}

/// Full linear convolution (`a.len() + b.len() - 1` samples) via FFT.
pub fn convolve_full(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    // Short kernels are cheaper in the time domain.
    if a.len().min(b.len()) <= 32 {
        let mut out = vec![0.0; out_len];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        return out;
    }
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let mut fa: Vec<Complex<f64>> = a.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fa.resize(n, Complex::new(0.0, 0.0));
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fb.resize(n, Complex::new(0.0, 0.0));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= *y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa.iter().take(out_len).map(|c| c.re * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_wave(rng: &mut ChaCha8Rng, len: usize) -> Waveform {
        Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), SAMPLE_RATE).unwrap()
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Waveform::new(vec![0.0, f64::NAN], SAMPLE_RATE).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn scale_to_rms_examples() {
        // unit RMS square wave
        let w = Waveform::new(vec![1.0, -1.0, 1.0, -1.0], SAMPLE_RATE).unwrap();
        let out = scale_to_rms(&w, -20.0).unwrap();
        assert!((out.rms() - 0.1).abs() < 1e-12);
        let out = scale_to_rms(&w, -25.0).unwrap();
        assert!((out.rms() - 10f64.powf(-25.0 / 20.0)).abs() < 1e-12);
        assert!((out.rms() - 0.05623).abs() < 1e-5);

        let again = scale_to_rms(&out, -25.0).unwrap();
        for (a, b) in again.samples().iter().zip(out.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(scale_to_rms(&Waveform::zeros(10, SAMPLE_RATE), -20.0).is_err());
    }

    #[test]
    fn scale_to_rms_hits_target_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let w = random_wave(&mut rng, 1000);
            let target = rng.gen_range(-40.0..0.0);
            let out = scale_to_rms(&w, target).unwrap();
            assert!((out.rms_dbfs() - target).abs() < 1e-6);
        }
    }

    #[test]
    fn convolve_identity_and_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_wave(&mut rng, 200);
        let id = Waveform::new(vec![1.0], SAMPLE_RATE).unwrap();
        assert_eq!(convolve(&w, &id).unwrap().samples(), w.samples());

        let mut taps = vec![0.0; 8];
        taps[5] = 1.0;
        let shift = Waveform::new(taps, SAMPLE_RATE).unwrap();
        let out = convolve(&w, &shift).unwrap();
        assert_eq!(out.len(), w.len());
        assert!(out.samples()[..5].iter().all(|&s| s == 0.0));
        for i in 5..w.len() {
            assert_eq!(out.samples()[i], w.samples()[i - 5]);
        }
    }

    #[test]
    fn convolve_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (n, m) in [(300, 100), (1000, 257), (64, 64)] {
            let w = random_wave(&mut rng, n);
            let h = random_wave(&mut rng, m);
            let out = convolve(&w, &h).unwrap();
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..m.min(i + 1) {
                    acc += w.samples()[i - j] * h.samples()[j];
                }
                assert!((out.samples()[i] - acc).abs() < 1e-6, "i={i}");
            }
        }
    }

    #[test]
    fn convolve_rate_mismatch() {
        let w = Waveform::zeros(10, 16_000);
        let h = Waveform::zeros(3, 8_000);
        assert!(convolve(&w, &h).is_err());
    }
}
