use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
}

/// Framing parameters. `frame_len` and `hop` are in seconds, `fft_size` in samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub frame_len: f64,
    pub hop: f64,
    pub fft_size: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    /// 32 ms Hann frames with a 16 ms hop and a 512-point FFT.
    fn default() -> Self {
        Self {
            frame_len: 0.032,
            hop: 0.016,
            fft_size: 512,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    /// Builds a config from sample counts at `rate`.
    pub fn from_samples(frame: usize, hop: usize, fft_size: usize, rate: u32) -> Self {
        Self {
            frame_len: frame as f64 / rate as f64,
            hop: hop as f64 / rate as f64,
            fft_size,
            window: WindowKind::Hann,
        }
    }

    pub fn frame_samples(&self, rate: u32) -> usize {
        (self.frame_len * rate as f64).round() as usize
    }

    pub fn hop_samples(&self, rate: u32) -> usize {
        (self.hop * rate as f64).round() as usize
    }

    pub fn freq_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of frames for a signal of `len` samples (center padding).
    pub fn num_frames(&self, len: usize, rate: u32) -> usize {
        len / self.hop_samples(rate) + 1
    }

    pub fn validate(&self, rate: u32) -> Result<()> {
        let frame = self.frame_samples(rate);
        let hop = self.hop_samples(rate);
        if frame == 0 || hop == 0 {
            return Err(Error::config("frame length and hop must be at least one sample"));
        }
        if hop > frame {
            return Err(Error::config(format!("hop ({hop}) exceeds frame length ({frame})")));
        }
        if self.fft_size < frame {
            return Err(Error::config(format!(
                "fft size {} is shorter than the frame ({frame} samples)",
                self.fft_size
            )));
        }
        if self.fft_size % 2 != 0 {
            return Err(Error::config("fft size must be even"));
        }
        Ok(())
    }

    /// Periodic Hann of `frame` samples centred in an `fft_size` buffer.
    fn padded_window(&self, rate: u32) -> Vec<f64> {
        let frame = self.frame_samples(rate);
        let n = self.fft_size;
        let offset = (n - frame) / 2;
        let mut w = vec![0.0; n];
        for i in 0..frame {
            w[offset + i] = match self.window {
                WindowKind::Hann => 0.5 - 0.5 * (2.0 * PI * i as f64 / frame as f64).cos(),
            };
        }
        w
    }
}

/// Complex STFT stored as separate real/imaginary `T × F` grids.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub real: Array2<f64>,
    pub imag: Array2<f64>,
    pub config: StftConfig,
    pub rate: u32,
}

impl ComplexSpectrogram {
    pub fn zeros(frames: usize, config: StftConfig, rate: u32) -> Self {
        let f = config.freq_bins();
        Self {
            real: Array2::zeros((frames, f)),
            imag: Array2::zeros((frames, f)),
            config,
            rate,
        }
    }

    pub fn frames(&self) -> usize {
        self.real.nrows()
    }

    pub fn bins(&self) -> usize {
        self.real.ncols()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            real: &self.real * alpha,
            imag: &self.imag * alpha,
            config: self.config,
            rate: self.rate,
        }
    }
}

fn reflect_index(i: isize, len: usize) -> usize {
    let n = len as isize;
    let mut j = i;
    if j < 0 {
        j = -j;
    }
    if j >= n {
        j = 2 * (n - 1) - j;
    }
    j as usize
}

/// Center-padded (reflect) STFT, `T = floor(L / hop) + 1` frames.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate(w.rate())?;
    let rate = w.rate();
    let n = cfg.fft_size;
    let pad = n / 2;
    let len = w.len();
    if len == 0 {
        return Err(Error::invalid("empty waveform"));
    }
    if len < cfg.frame_samples(rate) || len <= pad {
        return Err(Error::invalid(format!(
            "waveform of {len} samples is shorter than one frame"
        )));
    }
    if w.samples().iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("non-finite sample in STFT input"));
    }
    let hop = cfg.hop_samples(rate);
    let frames = cfg.num_frames(len, rate);
    let bins = cfg.freq_bins();
    let window = cfg.padded_window(rate);
    let x = w.samples();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut out = ComplexSpectrogram::zeros(frames, *cfg, rate);
    for t in 0..frames {
        let start = (t * hop) as isize - pad as isize;
        for (i, b) in buf.iter_mut().enumerate() {
            let s = x[reflect_index(start + i as isize, len)];
            *b = Complex::new(s * window[i], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..bins {
            out.real[[t, k]] = buf[k].re;
            out.imag[[t, k]] = buf[k].im;
        }
    }
    Ok(out)
}

/// Squared-window overlap-add envelope over the padded signal.
fn window_envelope(window: &[f64], frames: usize, hop: usize) -> Vec<f64> {
    let n = window.len();
    let mut env = vec![0.0; (frames - 1) * hop + n];
    for t in 0..frames {
        for (i, w) in window.iter().enumerate() {
            env[t * hop + i] += w * w;
        }
    }
    env
}

fn checked_envelope(s: &ComplexSpectrogram, length: usize) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let cfg = &s.config;
    cfg.validate(s.rate)?;
    if s.bins() != cfg.freq_bins() || s.imag.dim() != s.real.dim() {
        return Err(Error::shape(format!(
            "spectrogram grids {:?}/{:?} do not match {} bins",
            s.real.dim(),
            s.imag.dim(),
            cfg.freq_bins()
        )));
    }
    if s.frames() == 0 {
        return Err(Error::invalid("spectrogram has no frames"));
    }
    let hop = cfg.hop_samples(s.rate);
    let window = cfg.padded_window(s.rate);
    let env = window_envelope(&window, s.frames(), hop);
    let pad = cfg.fft_size / 2;
    if pad + length > env.len() {
        return Err(Error::invalid(format!(
            "requested length {length} exceeds the {} frames available",
            s.frames()
        )));
    }
    let peak = env.iter().cloned().fold(0.0, f64::max);
    if env[pad..pad + length].iter().any(|&e| e < 1e-10 * peak.max(1e-300)) {
        return Err(Error::config(
            "window/hop combination violates the overlap-add normalisation condition",
        ));
    }
    Ok((window, env, pad))
}

/// Inverse STFT by windowed overlap-add with squared-window normalisation.
pub fn istft(s: &ComplexSpectrogram, length: usize) -> Result<Waveform> {
    let (window, env, pad) = checked_envelope(s, length)?;
    let n = s.config.fft_size;
    let hop = s.config.hop_samples(s.rate);
    let bins = s.bins();

    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut acc = vec![0.0; env.len()];
    let scale = 1.0 / n as f64;
    for t in 0..s.frames() {
        for k in 0..bins {
            let im = if k == 0 || k == n / 2 { 0.0 } else { s.imag[[t, k]] };
            buf[k] = Complex::new(s.real[[t, k]], im);
        }
        for k in bins..n {
            buf[k] = buf[n - k].conj();
        }
        ifft.process(&mut buf);
        for i in 0..n {
            acc[t * hop + i] += buf[i].re * scale * window[i];
        }
    }
    let samples = (0..length).map(|i| acc[pad + i] / env[pad + i]).collect();
    Waveform::new(samples, s.rate)
}

/// Adjoint of [`istft`]: maps a gradient on the output waveform to gradients
/// on the real and imaginary spectrogram grids.
pub fn istft_adjoint(
    grad: &[f64],
    frames: usize,
    config: &StftConfig,
    rate: u32,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let template = ComplexSpectrogram::zeros(frames, *config, rate);
    let (window, env, pad) = checked_envelope(&template, grad.len())?;
    let n = config.fft_size;
    let hop = config.hop_samples(rate);
    let bins = config.freq_bins();

    let mut g = vec![0.0; env.len()];
    for (i, v) in grad.iter().enumerate() {
        g[pad + i] = v / env[pad + i];
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut d_re = Array2::zeros((frames, bins));
    let mut d_im = Array2::zeros((frames, bins));
    for t in 0..frames {
        for i in 0..n {
            buf[i] = Complex::new(g[t * hop + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..bins {
            if k == 0 || k == n / 2 {
                d_re[[t, k]] = buf[k].re / n as f64;
            } else {
                d_re[[t, k]] = 2.0 * buf[k].re / n as f64;
                d_im[[t, k]] = 2.0 * buf[k].im / n as f64;
            }
        }
    }
    Ok((d_re, d_im))
}
