//! Log-mel spectrogram frontend.
//!
//! Hann-windowed power STFT without padding, a triangular HTK-scale mel
//! filterbank spanning 0 Hz to Nyquist, and a natural log with a floor:
//! `log(max(power, floor))`. Frames: `floor((n - win) / hop) + 1`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    pub win_ms: f64,
    pub hop_ms: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_mels: 128,
            win_ms: 40.0,
            hop_ms: 10.0,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn win_samples(&self) -> usize {
        (f64::from(self.sample_rate) * self.win_ms / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (f64::from(self.sample_rate) * self.hop_ms / 1000.0).round() as usize
    }

    pub fn frames_for(&self, n_samples: usize) -> Option<usize> {
        let win = self.win_samples();
        (n_samples >= win).then(|| (n_samples - win) / self.hop_samples() + 1)
    }

    pub fn fft_bins(&self) -> usize {
        self.win_samples() / 2 + 1
    }
}

/// Mono waveform with samples nominally in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AudioWave {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioWave {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    /// `(n_mels, frames)` log energies.
    pub bins: Tensor,
    pub config: MelConfig,
}

impl MelSpectrogram {
    pub fn n_mels(&self) -> usize {
        self.bins.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.bins.shape()[1]
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequency (Hz) of every mel band.
pub fn mel_center_frequencies(cfg: &MelConfig) -> Vec<f64> {
    let top = hz_to_mel(f64::from(cfg.sample_rate) / 2.0);
    (1..=cfg.n_mels)
        .map(|i| mel_to_hz(top * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Reusable frontend holding the window, FFT plan and filterbank.
pub struct MelFrontend {
    cfg: MelConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    /// Per band: first FFT bin and its weights.
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelFrontend {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        let win = cfg.win_samples();
        let hop = cfg.hop_samples();
        if win < 2 || hop == 0 || cfg.n_mels == 0 || cfg.log_floor <= 0.0 {
            return Err(Error::Config(format!("invalid mel config {cfg:?}")));
        }
        // periodic Hann
        let window = (0..win)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(win);
        let n_bins = cfg.fft_bins();
        let bin_hz = f64::from(cfg.sample_rate) / win as f64;
        let top = hz_to_mel(f64::from(cfg.sample_rate) / 2.0);
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let filters = (0..cfg.n_mels)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let weights: Vec<(usize, f64)> = (0..n_bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f > lo && f <= mid {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f < hi {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                match weights.first() {
                    Some(&(start, _)) => {
                        let end = weights.last().unwrap().0;
                        let mut dense = vec![0.0; end - start + 1];
                        for (k, w) in weights {
                            dense[k - start] = w;
                        }
                        (start, dense)
                    }
                    None => (0, Vec::new()),
                }
            })
            .collect();
        Ok(Self {
            cfg,
            window,
            fft,
            filters,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn compute(&self, wave: &AudioWave) -> Result<MelSpectrogram> {
        if wave.sample_rate != self.cfg.sample_rate {
            return Err(Error::Contract(format!(
                "wave at {} Hz, frontend expects {} Hz",
                wave.sample_rate, self.cfg.sample_rate
            )));
        }
        let win = self.cfg.win_samples();
        let hop = self.cfg.hop_samples();
        let frames = self.cfg.frames_for(wave.samples.len()).ok_or_else(|| {
            Error::Contract(format!(
                "clip of {} samples is shorter than one {win}-sample window",
                wave.samples.len()
            ))
        })?;
        let n_mels = self.cfg.n_mels;
        let n_bins = self.cfg.fft_bins();
        let mut out = vec![0.0; n_mels * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); win];
        let mut power = vec![0.0; n_bins];
        for t in 0..frames {
            let start = t * hop;
            for (i, c) in buf.iter_mut().enumerate() {
                *c = Complex::new(wave.samples[start + i] * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for (k, p) in power.iter_mut().enumerate() {
                *p = buf[k].norm_sqr();
            }
            for (m, (start_bin, weights)) in self.filters.iter().enumerate() {
                let e: f64 = weights
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w * power[start_bin + j])
                    .sum();
                out[m * frames + t] = e.max(self.cfg.log_floor).ln();
            }
        }
        Ok(MelSpectrogram {
            bins: Tensor::new(vec![n_mels, frames], out)?,
            config: self.cfg.clone(),
        })
    }
}

/// One-shot convenience over [`MelFrontend`].
pub fn log_mel(wave: &AudioWave, cfg: &MelConfig) -> Result<MelSpectrogram> {
    MelFrontend::new(cfg.clone())?.compute(wave)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_gives_97_frames() {
        let cfg = MelConfig::default();
        assert_eq!(cfg.win_samples(), 640);
        assert_eq!(cfg.hop_samples(), 160);
        assert_eq!(cfg.frames_for(16_000), Some(97));
        let wave = AudioWave {
            samples: vec![0.0; 16_000],
            sample_rate: 16_000,
        };
        let mel = log_mel(&wave, &cfg).unwrap();
        assert_eq!(mel.bins.shape(), &[128, 97]);
        let floor = cfg.log_floor.ln();
        assert!(mel.bins.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn short_clip_is_an_error() {
        let wave = AudioWave {
            samples: vec![0.0; 639],
            sample_rate: 16_000,
        };
        assert!(log_mel(&wave, &MelConfig::default()).is_err());
    }

    #[test]
    fn wrong_rate_is_an_error() {
        let wave = AudioWave {
            samples: vec![0.0; 16_000],
            sample_rate: 8_000,
        };
        assert!(log_mel(&wave, &MelConfig::default()).is_err());
    }

    #[test]
    fn mel_scale_roundtrip() {
        for hz in [0.0, 440.0, 1000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 1000.0).abs() < 0.1);
    }
}
