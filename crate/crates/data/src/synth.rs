//! Synthetic paired video/audio clips with a planted audio cue.
//!
//! Nonviolent clips show dim, slowly drifting blobs over pink noise. Violent
//! clips come from two templates:
//! - `Unambiguous`: bright blobs that rush together and collide; an impact
//!   burst is present in the audio half of the time.
//! - `Ambiguous`: visuals drawn from the nonviolent generator, audio always
//!   carrying the burst. Only audio separates these from nonviolent clips.

use std::fs;
use std::path::Path;

use colors_core::backbone::VideoClip;
use colors_core::frontend::AudioWave;
use colors_core::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};
use crate::manifest::{load_manifest, save_manifest};
use crate::media::{read_video, read_wav, write_video, write_wav};
use crate::records::{AudioStatus, ClipRecord, Label};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_clips: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub fps: f64,
    pub duration_s: f64,
    pub sample_rate: u32,
    /// Peak amplitude of the impact burst.
    pub cue_strength: f64,
    /// Share of violent clips drawn from the ambiguous template.
    pub visual_ambiguity: f64,
    /// Standard deviation of the pink background noise.
    pub noise_std: f64,
    /// Share of violent clips.
    pub violent_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_clips: 512,
            frames: 4,
            height: 16,
            width: 16,
            fps: 8.0,
            duration_s: 0.5,
            sample_rate: 16_000,
            cue_strength: 0.9,
            visual_ambiguity: 0.5,
            noise_std: 0.1,
            violent_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.n_clips == 0 || self.frames == 0 || self.height < 4 || self.width < 4 {
            return Err(DataError::Config("clip count and shapes must be positive".into()));
        }
        if !unit(self.cue_strength) || !unit(self.visual_ambiguity) || !unit(self.violent_fraction) {
            return Err(DataError::Config("cue_strength, visual_ambiguity and violent_fraction lie in [0, 1]".into()));
        }
        if !(self.noise_std >= 0.0 && self.fps > 0.0 && self.duration_s > 0.0 && self.sample_rate > 0) {
            return Err(DataError::Config("noise_std, fps, duration and rate must be positive".into()));
        }
        if self.duration_s < BURST_S + 2.0 * BURST_MARGIN_S {
            return Err(DataError::Config(format!("duration must exceed {} s", BURST_S + 2.0 * BURST_MARGIN_S)));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.duration_s * f64::from(self.sample_rate)).round() as usize
    }

    pub fn n_violent(&self) -> usize {
        (self.violent_fraction * self.n_clips as f64).round() as usize
    }

    pub fn n_ambiguous(&self) -> usize {
        (self.visual_ambiguity * self.n_violent() as f64).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    Nonviolent,
    Unambiguous,
    Ambiguous,
}

impl Template {
    pub fn label(self) -> Label {
        match self {
            Template::Nonviolent => Label::Nonviolent,
            _ => Label::Violent,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthClip {
    pub clip_id: String,
    pub template: Template,
    /// Sample offset of the burst, when one was planted.
    pub burst_onset: Option<usize>,
    pub video: VideoClip,
    pub audio: AudioWave,
}

impl SynthClip {
    pub fn label(&self) -> Label {
        self.template.label()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub clips: Vec<SynthClip>,
}

pub const BURST_S: f64 = 0.12;
const BURST_MARGIN_S: f64 = 0.04;
const CHIRP_HZ: (f64, f64) = (500.0, 3000.0);
const BURST_DECAY_S: f64 = 0.03;

/// Generates the full dataset; each clip draws from its own ChaCha stream so
/// clips are independent of generation order.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let n_v = cfg.n_violent();
    let n_b = cfg.n_ambiguous();
    let mut templates: Vec<Template> = (0..cfg.n_clips)
        .map(|i| match i {
            i if i < n_b => Template::Ambiguous,
            i if i < n_v => Template::Unambiguous,
            _ => Template::Nonviolent,
        })
        .collect();
    templates.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));

    let clips = templates
        .into_iter()
        .enumerate()
        .map(|(i, template)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64 + 1);
            generate_clip(cfg, format!("synth_{i:05}"), template, &mut rng)
        })
        .collect();
    Ok(SynthDataset {
        config: cfg.clone(),
        clips,
    })
}

fn generate_clip(cfg: &SynthConfig, clip_id: String, template: Template, rng: &mut ChaCha8Rng) -> SynthClip {
    let video = match template {
        Template::Unambiguous => collision_video(cfg, rng),
        _ => drifting_video(cfg, rng),
    };
    let mut samples = pink_noise(cfg.samples(), cfg.noise_std, rng);
    let planted = match template {
        Template::Nonviolent => false,
        Template::Ambiguous => true,
        Template::Unambiguous => rng.gen_bool(0.5),
    };
    // Drawn for every clip so the noise streams stay aligned across templates.
    let onset = burst_onset(cfg, rng);
    let burst_onset = planted.then(|| {
        add_burst(&mut samples, onset, cfg.sample_rate, cfg.cue_strength);
        onset
    });
    SynthClip {
        clip_id,
        template,
        burst_onset,
        video: VideoClip {
            frames: video,
            fps: cfg.fps,
        },
        audio: AudioWave {
            samples,
            sample_rate: cfg.sample_rate,
        },
    }
}

struct Blob {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    amp: f64,
    radius: f64,
    color: [f64; 3],
}

fn render(cfg: &SynthConfig, blobs_at: impl Fn(usize) -> Vec<Blob>, rng: &mut ChaCha8Rng) -> Tensor {
    let (t_n, h, w) = (cfg.frames, cfg.height, cfg.width);
    let grain = Normal::new(0.0, 0.02).expect("valid std");
    let mut data = vec![0.0; 3 * t_n * h * w];
    for t in 0..t_n {
        let blobs = blobs_at(t);
        for y in 0..h {
            for x in 0..w {
                let mut px = [0.1; 3];
                for b in &blobs {
                    let d2 = (x as f64 - b.x).powi(2) + (y as f64 - b.y).powi(2);
                    let k = b.amp * (-d2 / (2.0 * b.radius * b.radius)).exp();
                    for c in 0..3 {
                        px[c] += k * b.color[c];
                    }
                }
                for (c, v) in px.iter().enumerate() {
                    data[((c * t_n + t) * h + y) * w + x] = (v + grain.sample(rng)).clamp(0.0, 1.0);
                }
            }
        }
    }
    Tensor::new(vec![3, t_n, h, w], data).expect("shape matches data")
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0)]
}

/// One or two dim blobs with slow, smooth drift.
fn drifting_video(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Tensor {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let n = rng.gen_range(1..=2);
    let init: Vec<Blob> = (0..n)
        .map(|_| Blob {
            x: rng.gen_range(0.2 * w..0.8 * w),
            y: rng.gen_range(0.2 * h..0.8 * h),
            vx: rng.gen_range(-0.04..0.04) * w,
            vy: rng.gen_range(-0.04..0.04) * h,
            amp: rng.gen_range(0.15..0.3),
            radius: rng.gen_range(0.12..0.2) * w,
            color: random_color(rng),
        })
        .collect();
    render(
        cfg,
        |t| {
            init.iter()
                .map(|b| Blob {
                    x: b.x + b.vx * t as f64,
                    y: b.y + b.vy * t as f64,
                    ..*b
                })
                .collect()
        },
        rng,
    )
}

/// Two bright blobs rushing toward a common point and meeting mid-clip.
fn collision_video(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Tensor {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let cx = rng.gen_range(0.35 * w..0.65 * w);
    let cy = rng.gen_range(0.35 * h..0.65 * h);
    let angle = rng.gen_range(0.0..std::f64::consts::PI);
    let reach = rng.gen_range(0.3..0.45) * w;
    let mid = (cfg.frames.saturating_sub(1)) as f64 / 2.0;
    let speed = reach / mid.max(1.0);
    let make = |sign: f64, rng: &mut ChaCha8Rng| Blob {
        x: cx + sign * reach * angle.cos(),
        y: cy + sign * reach * angle.sin(),
        vx: -sign * speed * angle.cos(),
        vy: -sign * speed * angle.sin(),
        amp: rng.gen_range(0.6..0.85),
        radius: rng.gen_range(0.1..0.16) * w,
        color: random_color(rng),
    };
    let blobs = [make(1.0, rng), make(-1.0, rng)];
    render(
        cfg,
        |t| {
            let t = t as f64;
            blobs
                .iter()
                .map(|b| {
                    // After contact the blobs rebound.
                    let s = if t <= mid { t } else { 2.0 * mid - t };
                    Blob {
                        x: b.x + b.vx * s,
                        y: b.y + b.vy * s,
                        ..*b
                    }
                })
                .collect()
        },
        rng,
    )
}

/// Pink noise from white noise through Kellet's economy filter, rescaled to
/// the requested standard deviation.
pub fn pink_noise(n: usize, std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let white = Normal::new(0.0, 1.0).expect("valid std");
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let x = white.sample(rng);
            b0 = 0.99765 * b0 + x * 0.0990460;
            b1 = 0.96300 * b1 + x * 0.2965164;
            b2 = 0.57000 * b2 + x * 1.0526913;
            b0 + b1 + b2 + x * 0.1848
        })
        .collect();
    let mean = out.iter().sum::<f64>() / n.max(1) as f64;
    let sd = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
    if sd > 0.0 {
        for v in &mut out {
            *v = (*v - mean) / sd * std;
        }
    }
    out
}

fn burst_onset(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> usize {
    let rate = f64::from(cfg.sample_rate);
    let lo = (BURST_MARGIN_S * rate) as usize;
    let hi = cfg.samples() - ((BURST_S + BURST_MARGIN_S) * rate) as usize;
    rng.gen_range(lo..=hi.max(lo))
}

/// Exponentially damped linear chirp.
pub fn impact_burst(sample_rate: u32, amplitude: f64) -> Vec<f64> {
    let rate = f64::from(sample_rate);
    let n = (BURST_S * rate) as usize;
    let (f0, f1) = CHIRP_HZ;
    (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            let phase = 2.0 * std::f64::consts::PI * (f0 * t + (f1 - f0) * t * t / (2.0 * BURST_S));
            amplitude * (-t / BURST_DECAY_S).exp() * phase.sin()
        })
        .collect()
}

fn add_burst(samples: &mut [f64], onset: usize, rate: u32, amplitude: f64) {
    for (s, b) in samples[onset..].iter_mut().zip(impact_burst(rate, amplitude)) {
        *s += b;
    }
}

#[derive(Serialize, Deserialize)]
struct SynthMeta {
    config: SynthConfig,
    clips: Vec<ClipMeta>,
}

#[derive(Serialize, Deserialize)]
struct ClipMeta {
    clip_id: String,
    template: Template,
    burst_onset: Option<usize>,
}

impl SynthDataset {
    /// Clip records spanning each clip's full duration, audio marked usable.
    pub fn records(&self) -> Vec<ClipRecord> {
        self.clips
            .iter()
            .map(|c| ClipRecord {
                clip_id: c.clip_id.clone(),
                video_id: c.clip_id.clone(),
                start_s: 0.0,
                end_s: self.config.duration_s,
                label: c.label(),
                audio_status: Some(AudioStatus::Ok),
                peak_db: None,
                split: None,
            })
            .collect()
    }

    /// Writes `<id>.wav`, `<id>.video`, `manifest.jsonl` and `synth.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for c in &self.clips {
            write_wav(&dir.join(format!("{}.wav", c.clip_id)), &c.audio)?;
            write_video(&dir.join(format!("{}.video", c.clip_id)), &c.video)?;
        }
        save_manifest(&dir.join("manifest.jsonl"), &self.records())?;
        let meta = SynthMeta {
            config: self.config.clone(),
            clips: self
                .clips
                .iter()
                .map(|c| ClipMeta {
                    clip_id: c.clip_id.clone(),
                    template: c.template,
                    burst_onset: c.burst_onset,
                })
                .collect(),
        };
        fs::write(dir.join("synth.json"), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    /// Reloads a saved dataset. Audio comes back quantized to 16 bits and
    /// video to 32-bit floats.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta: SynthMeta = serde_json::from_slice(&fs::read(dir.join("synth.json"))?)?;
        let records = load_manifest(&dir.join("manifest.jsonl"))?;
        if records.len() != meta.clips.len() {
            return Err(DataError::Manifest("manifest and synth.json disagree on clip count".into()));
        }
        let clips = meta
            .clips
            .into_iter()
            .map(|m| {
                Ok(SynthClip {
                    audio: read_wav(&dir.join(format!("{}.wav", m.clip_id)))?,
                    video: read_video(&dir.join(format!("{}.video", m.clip_id)))?,
                    clip_id: m.clip_id,
                    template: m.template,
                    burst_onset: m.burst_onset,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config: meta.config,
            clips,
        })
    }
}
