//! Model configuration, read from TOML. Every field has a desk-scale default,
//! so an empty file is a valid config.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::MelConfig;
use crate::ssm::SsmConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub fps: f64,
}

impl Default for VideoConfig {
    fn default() -> Self {
        Self {
            frames: 8,
            height: 64,
            width: 64,
            patch: 16,
            fps: 8.0,
        }
    }
}

impl VideoConfig {
    pub fn patches_per_frame(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn tokens(&self) -> usize {
        self.frames * self.patches_per_frame()
    }

    pub fn patch_len(&self) -> usize {
        3 * self.patch * self.patch
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioConfig {
    pub mel: MelConfig,
    pub duration_s: f64,
    pub patch_freq: usize,
    pub patch_time: usize,
    /// Log-mel values are mapped to `(v - norm_offset) / norm_scale`.
    pub norm_offset: f64,
    pub norm_scale: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            mel: MelConfig::default(),
            duration_s: 1.0,
            patch_freq: 16,
            patch_time: 16,
            norm_offset: -5.0,
            norm_scale: 5.0,
        }
    }
}

impl AudioConfig {
    pub fn samples(&self) -> usize {
        (self.duration_s * f64::from(self.mel.sample_rate)).round() as usize
    }

    /// Mel frames kept after cropping to a whole number of time patches.
    pub fn used_frames(&self) -> usize {
        let frames = self.mel.frames_for(self.samples()).unwrap_or(0);
        frames / self.patch_time * self.patch_time
    }

    pub fn tokens(&self) -> usize {
        (self.mel.n_mels / self.patch_freq) * (self.used_frames() / self.patch_time)
    }

    pub fn patch_len(&self) -> usize {
        self.patch_freq * self.patch_time
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteeringConfig {
    /// `video_to_audio`, `audio_to_video`, `crisscross`, `cross_attention`,
    /// `film`, `standard_lora`, `none`, or `feature_fusion(<op>, <schedule>)`
    /// with op `add|concat` and schedule `early|late|continuous`.
    pub mode: String,
    pub gate: bool,
    /// Rank of the input-projection update.
    pub rank: usize,
    pub alpha: f64,
    /// Rank of the step-size projection update.
    pub dt_rank: usize,
    pub dt_alpha: f64,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        Self {
            mode: "video_to_audio".into(),
            gate: true,
            rank: 8,
            alpha: 2.0,
            dt_rank: 8,
            dt_alpha: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    AudioVideo,
    VideoOnly,
    AudioOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub depth: usize,
    pub video_dim: usize,
    pub audio_dim: usize,
    pub state_dim: usize,
    pub expand: usize,
    /// Width of the low-rank step-size input `dt_raw`.
    pub dt_rank: usize,
    pub conv_kernel: usize,
    pub shared_dim: usize,
    pub tau_init: f64,
    pub modality: Modality,
    pub video: VideoConfig,
    pub audio: AudioConfig,
    pub steering: SteeringConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            video_dim: 64,
            audio_dim: 64,
            state_dim: 8,
            expand: 2,
            dt_rank: 8,
            conv_kernel: 4,
            shared_dim: 64,
            tau_init: 0.07,
            modality: Modality::AudioVideo,
            video: VideoConfig::default(),
            audio: AudioConfig::default(),
            steering: SteeringConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Deployment-scale preset (middle-size video backbone, 224² input).
    pub fn deployment() -> Self {
        Self {
            depth: 32,
            video_dim: 576,
            audio_dim: 576,
            state_dim: 16,
            dt_rank: 36,
            shared_dim: 256,
            video: VideoConfig {
                frames: 64,
                height: 224,
                width: 224,
                patch: 16,
                fps: 8.0,
            },
            audio: AudioConfig {
                duration_s: 8.0,
                ..AudioConfig::default()
            },
            ..Self::default()
        }
    }

    /// Two-layer, 16-wide config used by tests.
    pub fn toy() -> Self {
        Self {
            depth: 2,
            video_dim: 16,
            audio_dim: 16,
            state_dim: 4,
            dt_rank: 4,
            shared_dim: 8,
            video: VideoConfig {
                frames: 4,
                height: 16,
                width: 16,
                patch: 8,
                fps: 8.0,
            },
            audio: AudioConfig {
                mel: MelConfig {
                    n_mels: 16,
                    ..MelConfig::default()
                },
                duration_s: 0.5,
                patch_freq: 8,
                patch_time: 16,
                ..AudioConfig::default()
            },
            steering: SteeringConfig {
                rank: 4,
                dt_rank: 4,
                ..SteeringConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn ssm(&self, model_dim: usize) -> SsmConfig {
        SsmConfig {
            state_dim: self.state_dim,
            inner_dim: self.expand * model_dim,
            dt_rank: self.dt_rank,
            conv_kernel: self.conv_kernel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let v = &self.video;
        if self.depth == 0 || self.video_dim == 0 || self.audio_dim == 0 || self.state_dim == 0 {
            return bad("depth, widths and state_dim must be positive".into());
        }
        if self.expand == 0 || self.dt_rank == 0 || self.conv_kernel == 0 || self.shared_dim == 0 {
            return bad("expand, dt_rank, conv_kernel and shared_dim must be positive".into());
        }
        if !(self.tau_init > 0.0) {
            return bad("tau_init must be positive".into());
        }
        if v.patch == 0 || v.frames == 0 || v.height % v.patch != 0 || v.width % v.patch != 0 || v.height == 0 || v.width == 0 {
            return bad(format!(
                "video {}x{} is not divisible by patch {}",
                v.height, v.width, v.patch
            ));
        }
        let a = &self.audio;
        if a.patch_freq == 0 || a.patch_time == 0 || a.mel.n_mels % a.patch_freq != 0 {
            return bad(format!(
                "{} mel bins are not divisible by frequency patch {}",
                a.mel.n_mels, a.patch_freq
            ));
        }
        if a.used_frames() == 0 {
            return bad("audio clip yields no whole time patch".into());
        }
        if !(a.norm_scale > 0.0) {
            return bad("norm_scale must be positive".into());
        }
        steering_direction(&self.steering)?;
        let s = &self.steering;
        let inner = self.expand * self.audio_dim.min(self.video_dim);
        let p = self.dt_rank + 2 * self.state_dim;
        if s.rank == 0 || s.rank > inner.min(p) {
            return bad(format!("steering rank {} must lie in 1..={}", s.rank, inner.min(p)));
        }
        if s.dt_rank == 0 || s.dt_rank > self.dt_rank {
            return bad(format!(
                "step-size steering rank {} must lie in 1..={}",
                s.dt_rank, self.dt_rank
            ));
        }
        if !(s.alpha > 0.0 && s.dt_alpha > 0.0) {
            return bad("steering alphas must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionOp {
    Add,
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionSchedule {
    Early,
    Late,
    Continuous,
}

impl FusionSchedule {
    pub fn applies(self, layer: usize, depth: usize) -> bool {
        match self {
            Self::Early => layer == 0,
            Self::Late => layer + 1 == depth,
            Self::Continuous => true,
        }
    }
}

/// Resolved cross-modal interaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SteeringMode {
    VideoToAudio,
    AudioToVideo,
    CrissCross,
    FeatureFusion(FusionOp, FusionSchedule),
    CrossAttention,
    Film,
    /// Unconditioned low-rank update on the audio generators.
    StandardLora,
    /// No interaction until the fusion head.
    None,
}

impl SteeringMode {
    pub fn steers_audio(self) -> bool {
        matches!(self, Self::VideoToAudio | Self::CrissCross | Self::StandardLora)
    }

    pub fn steers_video(self) -> bool {
        matches!(self, Self::AudioToVideo | Self::CrissCross)
    }
}

pub fn steering_direction(cfg: &SteeringConfig) -> Result<SteeringMode> {
    let raw: String = cfg.mode.chars().filter(|c| !c.is_whitespace()).collect();
    let mode = match raw.as_str() {
        "video_to_audio" => SteeringMode::VideoToAudio,
        "audio_to_video" => SteeringMode::AudioToVideo,
        "crisscross" => SteeringMode::CrissCross,
        "cross_attention" => SteeringMode::CrossAttention,
        "film" => SteeringMode::Film,
        "standard_lora" => SteeringMode::StandardLora,
        "none" => SteeringMode::None,
        other => {
            let args = other
                .strip_prefix("feature_fusion(")
                .and_then(|s| s.strip_suffix(')'))
                .ok_or_else(|| Error::Config(format!("unknown steering mode `{}`", cfg.mode)))?;
            let (op, schedule) = args
                .split_once(',')
                .ok_or_else(|| Error::Config(format!("feature_fusion needs (op, schedule), got `{}`", cfg.mode)))?;
            let op = match op {
                "add" => FusionOp::Add,
                "concat" => FusionOp::Concat,
                _ => return Err(Error::Config(format!("unknown fusion op `{op}`"))),
            };
            let schedule = match schedule {
                "early" => FusionSchedule::Early,
                "late" => FusionSchedule::Late,
                "continuous" => FusionSchedule::Continuous,
                _ => return Err(Error::Config(format!("unknown fusion schedule `{schedule}`"))),
            };
            SteeringMode::FeatureFusion(op, schedule)
        }
    };
    Ok(mode)
}
