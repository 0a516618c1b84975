//! Parameter and multiply-accumulate counts derived from a config alone.
//!
//! Nothing here builds a model; the tally is plain arithmetic over the
//! config so it can be checked against a serialized checkpoint.

use colors_core::config::{steering_direction, FusionOp, Modality, ModelConfig, SteeringMode};
use serde::Serialize;

use crate::error::Result;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub embeddings: u64,
    pub blocks: u64,
    pub cls_norms: u64,
    pub steering_heads: u64,
    pub lora: u64,
    pub coupling: u64,
    pub classifier: u64,
    pub projections: u64,
}

impl Tally {
    pub fn total(&self) -> u64 {
        self.embeddings
            + self.blocks
            + self.cls_norms
            + self.steering_heads
            + self.lora
            + self.coupling
            + self.classifier
            + self.projections
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub params: Tally,
    pub param_total: u64,
    /// Multiply-accumulates for one forward pass of one clip.
    pub macs: Tally,
    pub mac_total: u64,
    /// Two operations per multiply-accumulate.
    pub flops: u64,
    /// Steering heads plus LoRA factors.
    pub lora_overhead_params: u64,
    pub lora_overhead_fraction: f64,
}

impl CostReport {
    pub fn text(&self) -> String {
        let rows = [
            ("embeddings", self.params.embeddings, self.macs.embeddings),
            ("blocks", self.params.blocks, self.macs.blocks),
            ("cls norms", self.params.cls_norms, self.macs.cls_norms),
            ("steering heads", self.params.steering_heads, self.macs.steering_heads),
            ("lora factors", self.params.lora, self.macs.lora),
            ("coupling", self.params.coupling, self.macs.coupling),
            ("classifier", self.params.classifier, self.macs.classifier),
            ("projections", self.params.projections, self.macs.projections),
        ];
        let mut s = format!("{:<16}{:>14}{:>16}\n", "component", "params", "MACs");
        for (name, p, m) in rows {
            s += &format!("{name:<16}{p:>14}{m:>16}\n");
        }
        s += &format!("{:<16}{:>14}{:>16}\n", "total", self.param_total, self.mac_total);
        s += &format!("FLOPs (2 x MACs)  {}\n", self.flops);
        s += &format!(
            "LoRA overhead     {} params ({:.2}% of total)\n",
            self.lora_overhead_params,
            100.0 * self.lora_overhead_fraction
        );
        s
    }
}

struct Dims {
    model: u64,
    inner: u64,
    state: u64,
    dt: u64,
    kernel: u64,
}

impl Dims {
    fn new(cfg: &ModelConfig, model: usize) -> Self {
        Self {
            model: model as u64,
            inner: (cfg.expand * model) as u64,
            state: cfg.state_dim as u64,
            dt: cfg.dt_rank as u64,
            kernel: cfg.conv_kernel as u64,
        }
    }

    /// Width of the generator output `[dt_raw, B, C]`.
    fn gen_width(&self) -> u64 {
        self.dt + 2 * self.state
    }

    fn block_params(&self) -> u64 {
        let (d, e) = (self.model, self.inner);
        let branch = e * self.kernel + e + self.gen_width() * e + e * self.dt + e + e * self.state + e;
        2 * d + 2 * e * d + e * d + 2 * branch
    }

    fn block_macs(&self, tokens: u64) -> u64 {
        let (d, e) = (self.model, self.inner);
        let branch = e * self.kernel + e * self.gen_width() + self.dt * e + 2 * e * self.state;
        tokens * (2 * e * d + e * d + 2 * branch)
    }
}

struct Steer {
    rank: u64,
    dt_rank: u64,
}

impl Steer {
    fn head_params(cond: u64, rank: u64) -> u64 {
        let h = (cond / 2).max(1);
        h * cond + h + rank * h + rank + cond + 1
    }

    fn head_macs(cond: u64, rank: u64) -> u64 {
        let h = (cond / 2).max(1);
        h * cond + rank * h + cond
    }

    /// Four factor pairs: input and step-size maps of both directions.
    fn lora_params(&self, dims: &Dims) -> u64 {
        2 * (self.rank * (dims.inner + dims.gen_width()) + self.dt_rank * (dims.dt + dims.inner))
    }

    fn lora_macs(&self, dims: &Dims, tokens: u64) -> u64 {
        tokens * self.lora_params(dims)
    }
}

pub fn cost_report(cfg: &ModelConfig) -> Result<CostReport> {
    cfg.validate()?;
    let (video, audio) = match cfg.modality {
        Modality::AudioVideo => (true, true),
        Modality::VideoOnly => (true, false),
        Modality::AudioOnly => (false, true),
    };
    let mode = if video && audio {
        steering_direction(&cfg.steering)?
    } else {
        SteeringMode::None
    };
    let depth = cfg.depth as u64;
    let (dv, da) = (cfg.video_dim as u64, cfg.audio_dim as u64);
    let vdims = Dims::new(cfg, cfg.video_dim);
    let adims = Dims::new(cfg, cfg.audio_dim);
    let steer = Steer {
        rank: cfg.steering.rank as u64,
        dt_rank: cfg.steering.dt_rank as u64,
    };
    let nv = cfg.video.tokens() as u64;
    let na = cfg.audio.tokens() as u64;
    let (lv, la) = (nv + 1, na + 1);

    let mut p = Tally::default();
    let mut m = Tally::default();

    if video {
        let hw = cfg.video.patches_per_frame() as u64;
        let t = cfg.video.frames as u64;
        let plen = cfg.video.patch_len() as u64;
        p.embeddings += dv * plen + dv + dv + (hw + 1) * dv + t * dv;
        m.embeddings += nv * plen * dv;
        p.blocks += depth * vdims.block_params();
        m.blocks += depth * vdims.block_macs(lv);
    }
    if audio {
        let plen = cfg.audio.patch_len() as u64;
        p.embeddings += da * plen + da + da + la * da;
        m.embeddings += na * plen * da;
        p.blocks += depth * adims.block_params();
        m.blocks += depth * adims.block_macs(la);
    }

    for l in 0..cfg.depth {
        let last = l + 1 == cfg.depth;
        let video_cls = last
            || matches!(mode, SteeringMode::VideoToAudio | SteeringMode::CrissCross | SteeringMode::Film)
            || matches!(mode, SteeringMode::FeatureFusion(_, s) if s.applies(l, cfg.depth));
        let audio_cls = last
            || matches!(mode, SteeringMode::AudioToVideo)
            || (mode == SteeringMode::CrissCross && !last);
        if video && video_cls {
            p.cls_norms += 2 * dv;
        }
        if audio && audio_cls {
            p.cls_norms += 2 * da;
        }
        let audio_steered = matches!(
            mode,
            SteeringMode::VideoToAudio | SteeringMode::CrissCross | SteeringMode::StandardLora
        );
        let video_steered = match mode {
            SteeringMode::AudioToVideo => true,
            SteeringMode::CrissCross => l > 0,
            _ => false,
        };
        if audio_steered {
            p.lora += steer.lora_params(&adims);
            m.lora += steer.lora_macs(&adims, la);
            if mode != SteeringMode::StandardLora {
                p.steering_heads += Steer::head_params(dv, steer.rank) + Steer::head_params(dv, steer.dt_rank);
                m.steering_heads += Steer::head_macs(dv, steer.rank) + Steer::head_macs(dv, steer.dt_rank);
            }
        }
        if video_steered {
            p.lora += steer.lora_params(&vdims);
            m.lora += steer.lora_macs(&vdims, lv);
            p.steering_heads += Steer::head_params(da, steer.rank) + Steer::head_params(da, steer.dt_rank);
            m.steering_heads += Steer::head_macs(da, steer.rank) + Steer::head_macs(da, steer.dt_rank);
        }
        match mode {
            SteeringMode::FeatureFusion(op, s) if s.applies(l, cfg.depth) => match op {
                FusionOp::Add => {
                    p.coupling += da * dv;
                    m.coupling += da * dv;
                }
                FusionOp::Concat => {
                    p.coupling += da * (da + dv);
                    m.coupling += la * da * (da + dv);
                }
            },
            SteeringMode::Film => {
                let w = adims.gen_width();
                p.coupling += 2 * w * dv;
                m.coupling += 2 * w * dv;
            }
            SteeringMode::CrossAttention => {
                p.coupling += 2 * da * da + 2 * da * dv;
                // q, k, v, o projections plus scores and weighted sum.
                m.coupling += la * da * da + 2 * lv * dv * da + la * lv * da * 2 + la * da * da;
            }
            _ => {}
        }
    }

    let fused = u64::from(video) * dv + u64::from(audio) * da;
    p.classifier += fused + 1;
    m.classifier += fused;
    if video && audio {
        let s = cfg.shared_dim as u64;
        p.projections += s * (da + dv) + 1;
        m.projections += s * (da + dv);
    }

    let param_total = p.total();
    let mac_total = m.total();
    let lora_overhead_params = p.lora + p.steering_heads;
    Ok(CostReport {
        lora_overhead_fraction: lora_overhead_params as f64 / param_total as f64,
        lora_overhead_params,
        param_total,
        mac_total,
        flops: 2 * mac_total,
        params: p,
        macs: m,
    })
}
