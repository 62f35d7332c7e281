//! Waveform front end: STFT power spectrogram, Slaney-style mel filterbank,
//! log compression and per-clip normalization.
//!
//! Frame layout: with centered analysis (reflect padding of n_fft/2 on both
//! sides) a clip of L samples yields 1 + floor(L / hop) frames, so a 10 s
//! clip at 16 kHz with hop 256 produces 626 frames.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{config_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f32,
    pub fmax: f32,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: 16_000,
            n_fft: 2048,
            hop: 256,
            n_mels: 128,
            fmin: 0.0,
            fmax: 8_000.0,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fft == 0 || self.hop == 0 || self.n_mels == 0 {
            return Err(config_err("mel config: n_fft, hop and n_mels must be positive"));
        }
        if self.fmax <= self.fmin {
            return Err(config_err(format!(
                "mel config: fmax {} must exceed fmin {}",
                self.fmax, self.fmin
            )));
        }
        if self.fmax > self.sample_rate as f32 / 2.0 + 1e-3 {
            return Err(config_err(format!(
                "mel config: fmax {} above Nyquist {}",
                self.fmax,
                self.sample_rate as f32 / 2.0
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frames produced for a clip of `len` samples with centered analysis.
    pub fn n_frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()) as f32)
        .collect()
}

/// Reflect-pad by `pad` samples on both sides (edge sample not repeated).
fn reflect_pad(wave: &[f32], pad: usize) -> Result<Vec<f32>> {
    let n = wave.len();
    if n <= pad {
        return Err(Error::Shape(format!(
            "clip of {} samples too short for {}-sample reflect padding",
            n, pad
        )));
    }
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in 0..pad {
        out.push(wave[pad - i]);
    }
    out.extend_from_slice(wave);
    for i in 0..pad {
        out.push(wave[n - 2 - i]);
    }
    Ok(out)
}

/// Centered STFT power spectrogram, shape [n_fft/2+1, frames].
pub fn stft_power(wave: &[f32], cfg: &MelConfig) -> Result<Tensor<f32>> {
    cfg.validate()?;
    if wave.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("stft: non-finite sample in input".into()));
    }
    let pad = cfg.n_fft / 2;
    let padded = reflect_pad(wave, pad)?;
    let frames = cfg.n_frames(wave.len());
    let bins = cfg.n_bins();
    let window = hann_window(cfg.n_fft);
    let mut planner = FftPlanner::<f32>::new();
    let fft = planner.plan_fft_forward(cfg.n_fft);
    let mut buf = vec![Complex::new(0.0f32, 0.0); cfg.n_fft];
    let mut scratch = vec![Complex::new(0.0f32, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Tensor::zeros(&[bins, frames]);
    let od = out.data_mut();
    for t in 0..frames {
        let start = t * cfg.hop;
        for i in 0..cfg.n_fft {
            buf[i] = Complex::new(padded[start + i] * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, c) in buf.iter().take(bins).enumerate() {
            od[k * frames + t] = c.norm_sqr();
        }
    }
    Ok(out)
}

fn hz_to_mel(f: f64) -> f64 {
    // Linear below 1 kHz, logarithmic above.
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;
    if f < MIN_LOG_HZ {
        f / F_SP
    } else {
        MIN_LOG_MEL + (f / MIN_LOG_HZ).ln() / (6.4f64.ln() / 27.0)
    }
}

fn mel_to_hz(m: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;
    if m < MIN_LOG_MEL {
        m * F_SP
    } else {
        MIN_LOG_HZ * ((m - MIN_LOG_MEL) * (6.4f64.ln() / 27.0)).exp()
    }
}

/// Triangular mel filterbank with area normalization, shape [n_mels, bins].
pub fn mel_filterbank(cfg: &MelConfig) -> Result<Tensor<f32>> {
    cfg.validate()?;
    let bins = cfg.n_bins();
    let mel_lo = hz_to_mel(cfg.fmin as f64);
    let mel_hi = hz_to_mel(cfg.fmax as f64);
    // n_mels + 2 evenly spaced corner frequencies on the mel scale
    let corners: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..bins)
        .map(|k| k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64)
        .collect();
    let mut fb = Tensor::zeros(&[cfg.n_mels, bins]);
    let fd = fb.data_mut();
    for m in 0..cfg.n_mels {
        let (lo, mid, hi) = (corners[m], corners[m + 1], corners[m + 2]);
        // each triangle integrates to the same value on the hz axis
        let norm = 2.0 / (hi - lo);
        for (k, &f) in bin_hz.iter().enumerate() {
            let up = (f - lo) / (mid - lo);
            let down = (hi - f) / (hi - mid);
            let w = up.min(down).max(0.0) * norm;
            fd[m * bins + k] = w as f32;
        }
    }
    Ok(fb)
}

/// Log-compressed mel spectrogram log(M @ P + 1e-6), shape [n_mels, frames].
pub fn log_mel(wave: &[f32], cfg: &MelConfig) -> Result<Tensor<f32>> {
    let power = stft_power(wave, cfg)?;
    let fb = mel_filterbank(cfg)?;
    let bins = cfg.n_bins();
    let frames = power.shape()[1];
    let mut mel = Tensor::zeros(&[cfg.n_mels, frames]);
    f32::gemm(cfg.n_mels, bins, frames, 1.0, fb.data(), power.data(), 0.0, mel.data_mut());
    Ok(mel.map(|v| (v + 1e-6).ln()))
}

/// Per-clip min-max rescale to [0, 1]; a constant clip maps to all zeros.
pub fn normalize_unit<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let (lo, hi) = x.min_max();
    if hi <= lo {
        return Tensor::zeros(x.shape());
    }
    let inv = F::one() / (hi - lo);
    x.map(|v| (v - lo) * inv)
}
