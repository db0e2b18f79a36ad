use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{CedError, Result};

/// Log-mel filterbank settings. Defaults: 80 channels, 25 ms window, 10 ms hop at 16 kHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterbankConfig {
    pub sample_rate: u32,
    pub window_length: usize,
    pub hop_length: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub preemphasis: f64,
    pub low_freq: f64,
    pub high_freq: f64,
}

impl Default for FilterbankConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            window_length: 400,
            hop_length: 160,
            n_fft: 512,
            n_mels: 80,
            preemphasis: 0.97,
            low_freq: 20.0,
            high_freq: 8_000.0,
        }
    }
}

impl FilterbankConfig {
    pub fn num_frames(&self, num_samples: usize) -> Option<usize> {
        (num_samples >= self.window_length)
            .then(|| 1 + (num_samples - self.window_length) / self.hop_length)
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

/// Triangular mel filters over the one-sided power spectrum, `n_mels × (n_fft/2 + 1)`.
pub fn mel_filters(config: &FilterbankConfig) -> Array2<f64> {
    let n_bins = config.n_fft / 2 + 1;
    let lo = hz_to_mel(config.low_freq);
    let hi = hz_to_mel(config.high_freq.min(config.sample_rate as f64 / 2.0));
    let step = (hi - lo) / (config.n_mels + 1) as f64;
    let bin_hz = config.sample_rate as f64 / config.n_fft as f64;
    let mut filters = Array2::zeros((config.n_mels, n_bins));
    for m in 0..config.n_mels {
        let left = lo + step * m as f64;
        let center = left + step;
        let right = center + step;
        for k in 0..n_bins {
            let mel = hz_to_mel(k as f64 * bin_hz);
            let w = if mel > left && mel <= center {
                (mel - left) / (center - left)
            } else if mel > center && mel < right {
                (right - mel) / (right - center)
            } else {
                0.0
            };
            filters[[m, k]] = w;
        }
    }
    filters
}

/// Reusable log-mel filterbank extractor.
pub struct FilterbankExtractor {
    config: FilterbankConfig,
    window: Vec<f64>,
    filters: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl FilterbankExtractor {
    pub fn new(config: FilterbankConfig) -> Self {
        let n = config.window_length;
        // periodic Hann
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let filters = mel_filters(&config);
        let fft = FftPlanner::new().plan_fft_forward(config.n_fft);
        Self {
            config,
            window,
            filters,
            fft,
        }
    }

    pub fn config(&self) -> &FilterbankConfig {
        &self.config
    }

    pub fn extract(
        &self,
        samples: &[f32],
        sample_rate: u32,
        normalize: bool,
    ) -> Result<FeatureMatrix> {
        let cfg = &self.config;
        if sample_rate != cfg.sample_rate {
            return Err(CedError::UnsupportedFormat(format!(
                "expected {} Hz audio, got {sample_rate} Hz",
                cfg.sample_rate
            )));
        }
        let n_frames = cfg.num_frames(samples.len()).ok_or_else(|| {
            CedError::InvalidInput(format!(
                "waveform of {} samples is shorter than one {}-sample window",
                samples.len(),
                cfg.window_length
            ))
        })?;
        let n_bins = cfg.n_fft / 2 + 1;
        let mut out = Array2::<f64>::zeros((n_frames, cfg.n_mels));
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut frame = vec![0.0f64; cfg.window_length];
        let mut power = vec![0.0f64; n_bins];
        for t in 0..n_frames {
            let start = t * cfg.hop_length;
            let raw = &samples[start..start + cfg.window_length];
            let mean = raw.iter().map(|&x| x as f64).sum::<f64>() / raw.len() as f64;
            for (dst, &x) in frame.iter_mut().zip(raw) {
                *dst = x as f64 - mean;
            }
            for i in (1..frame.len()).rev() {
                frame[i] -= cfg.preemphasis * frame[i - 1];
            }
            frame[0] *= 1.0 - cfg.preemphasis;
            for (i, c) in buf.iter_mut().enumerate() {
                let v = if i < frame.len() {
                    frame[i] * self.window[i]
                } else {
                    0.0
                };
                *c = Complex::new(v, 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for m in 0..cfg.n_mels {
                let energy: f64 = self
                    .filters
                    .row(m)
                    .iter()
                    .zip(&power)
                    .map(|(w, p)| w * p)
                    .sum();
                out[[t, m]] = energy.max(f64::EPSILON).ln();
            }
        }
        if normalize {
            normalize_columns(&mut out);
        }
        FeatureMatrix::new(out.mapv(|v| v as f32))
    }
}

/// Per-channel mean-variance normalization in place. Constant channels are only centered.
pub fn normalize_columns(x: &mut Array2<f64>) {
    let n = x.nrows() as f64;
    for mut col in x.columns_mut() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let scale = if std > 1e-10 { 1.0 / std } else { 1.0 };
        col.mapv_inplace(|v| (v - mean) * scale);
    }
}

/// 80-channel log-mel filterbank features with the default 25 ms / 10 ms framing.
pub fn extract_filterbank(
    samples: &[f32],
    sample_rate: u32,
    normalize: bool,
) -> Result<FeatureMatrix> {
    FilterbankExtractor::new(FilterbankConfig::default()).extract(samples, sample_rate, normalize)
}
