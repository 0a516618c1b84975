//! Log-mel augmentation: masking plus optional noise, gain and speed.

use colors_core::frontend::MelSpectrogram;
use colors_core::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub time_masks: usize,
    pub max_time_width: usize,
    pub freq_masks: usize,
    pub max_freq_width: usize,
    /// Std of Gaussian noise added to the log-mel values; 0 disables.
    pub noise_std: f64,
    /// Gain drawn uniformly in `[-gain_db, gain_db]`; 0 disables.
    pub gain_db: f64,
    /// Speed factor drawn from {0.9, 1.0, 1.1}.
    pub speed: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            time_masks: 2,
            max_time_width: 20,
            freq_masks: 2,
            max_freq_width: 8,
            noise_std: 0.0,
            gain_db: 0.0,
            speed: false,
        }
    }
}

pub const SPEED_FACTORS: [f64; 3] = [0.9, 1.0, 1.1];

/// Rectangles zeroed out by one draw: `(start, width)` per mask.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Masks {
    pub time: Vec<(usize, usize)>,
    pub freq: Vec<(usize, usize)>,
}

impl Masks {
    pub fn draw<R: Rng + ?Sized>(cfg: &AugmentConfig, n_mels: usize, frames: usize, rng: &mut R) -> Self {
        let mut one = |max_w: usize, len: usize| {
            let w = rng.gen_range(0..=max_w.min(len));
            let start = rng.gen_range(0..=len - w);
            (start, w)
        };
        let time = (0..cfg.time_masks).map(|_| one(cfg.max_time_width, frames)).collect();
        let freq = (0..cfg.freq_masks).map(|_| one(cfg.max_freq_width, n_mels)).collect();
        Self { time, freq }
    }

    pub fn covers(&self, m: usize, t: usize) -> bool {
        self.time.iter().any(|&(s, w)| (s..s + w).contains(&t)) || self.freq.iter().any(|&(s, w)| (s..s + w).contains(&m))
    }
}

/// Resamples the time axis by `factor` with linear interpolation, holding the
/// frame count fixed (reads past the end repeat the last frame).
pub fn speed_perturb(bins: &Tensor, factor: f64) -> Tensor {
    let (n_mels, frames) = (bins.shape()[0], bins.shape()[1]);
    if factor == 1.0 || frames < 2 {
        return bins.clone();
    }
    let mut out = vec![0.0; n_mels * frames];
    for t in 0..frames {
        let src = (t as f64 * factor).min((frames - 1) as f64);
        let (i, frac) = (src.floor() as usize, src.fract());
        let j = (i + 1).min(frames - 1);
        for m in 0..n_mels {
            out[m * frames + t] = (1.0 - frac) * bins.get(&[m, i]) + frac * bins.get(&[m, j]);
        }
    }
    Tensor::new(vec![n_mels, frames], out).expect("shape preserved")
}

/// Applies speed, gain and noise per the config flags, then masks. Masked
/// cells take the mean of the spectrogram they are applied to.
pub fn spec_augment<R: Rng + ?Sized>(mel: &MelSpectrogram, cfg: &AugmentConfig, rng: &mut R) -> MelSpectrogram {
    let mut bins = mel.bins.clone();
    if cfg.speed {
        let f = SPEED_FACTORS[rng.gen_range(0..SPEED_FACTORS.len())];
        bins = speed_perturb(&bins, f);
    }
    if cfg.gain_db > 0.0 {
        // Power scales by 10^(dB/10); natural-log mel shifts additively.
        let db = rng.gen_range(-cfg.gain_db..=cfg.gain_db);
        let shift = db * std::f64::consts::LN_10 / 10.0;
        bins = bins.map(|v| v + shift);
    }
    if cfg.noise_std > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_std).expect("positive std");
        let data = bins.data().iter().map(|v| v + noise.sample(rng)).collect();
        bins = Tensor::new(bins.shape().to_vec(), data).expect("same shape");
    }
    let (n_mels, frames) = (bins.shape()[0], bins.shape()[1]);
    let masks = Masks::draw(cfg, n_mels, frames, rng);
    let mean = bins.data().iter().sum::<f64>() / bins.numel().max(1) as f64;
    let data = bins
        .data()
        .iter()
        .enumerate()
        .map(|(k, &v)| if masks.covers(k / frames, k % frames) { mean } else { v })
        .collect();
    MelSpectrogram {
        bins: Tensor::new(vec![n_mels, frames], data).expect("same shape"),
        config: mel.config.clone(),
    }
}
