//! Video and audio token pipelines and the two-stream model.
//!
//! Each layer runs the video block first, normalizes its CLS output into the
//! conditioning vector `c_v`, and uses it to steer the selective-parameter
//! generators of the matching audio block. The final CLS embeddings feed a
//! single-logit fusion head.

use rand::Rng;

use crate::config::{FusionOp, Modality, ModelConfig, SteeringMode};
use crate::error::{Error, Result};
use crate::frontend::{AudioWave, MelFrontend, MelSpectrogram};
use crate::objectives::{av_infonce, bce_with_logits, total_loss, LossReport, ProjectionHeads};
use crate::params::{Bound, ParamId, ParamStore};
use crate::ssm::{BidirectionalBlock, BlockHooks, BranchHooks, FeatureFilm, SsmConfig};
use crate::steering::{derive_signals, LayerHeads, LoraFactors, Signal, SignalMode, SteeringHead};
use crate::tape::{concat, Tape, Var};
use crate::tensor::Tensor;

const CLS_NORM_EPS: f64 = 1e-5;

/// RGB clip, `frames` of shape `(3, T, H, W)` with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub frames: Tensor,
    pub fps: f64,
}

/// Non-overlapping `patch × patch` tiles of every frame, frame-major then
/// row-major, each flattened as `(channel, y, x)`. Shape `(T·h·w, 3·p²)`.
pub fn patchify_video(clip: &VideoClip, patch: usize) -> Result<Tensor> {
    let s = clip.frames.shape();
    if s.len() != 4 || s[0] != 3 {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "video must be (3, T, H, W)".into(),
        });
    }
    let (t, h, w) = (s[1], s[2], s[3]);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: format!("H and W must be divisible by patch {patch}"),
        });
    }
    let (gh, gw) = (h / patch, w / patch);
    let d = clip.frames.data();
    let mut out = Vec::with_capacity(t * gh * gw * 3 * patch * patch);
    for f in 0..t {
        for py in 0..gh {
            for px in 0..gw {
                for c in 0..3 {
                    for y in 0..patch {
                        let row = ((c * t + f) * h + py * patch + y) * w + px * patch;
                        out.extend_from_slice(&d[row..row + patch]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![t * gh * gw, 3 * patch * patch], out)
}

/// Non-overlapping `pf × pt` tiles of a `(n_mels, frames)` spectrogram,
/// time-major then frequency, each flattened as `(freq, time)`.
pub fn patchify_mel(bins: &Tensor, pf: usize, pt: usize) -> Result<Tensor> {
    let s = bins.shape();
    if s.len() != 2 || pf == 0 || pt == 0 || s[0] % pf != 0 || s[1] % pt != 0 {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: format!("mel must be 2-D and divisible by {pf}x{pt} patches"),
        });
    }
    let (f, t) = (s[0], s[1]);
    let d = bins.data();
    let mut out = Vec::with_capacity(f * t);
    for ti in 0..t / pt {
        for fi in 0..f / pf {
            for y in 0..pf {
                let row = (fi * pf + y) * t + ti * pt;
                out.extend_from_slice(&d[row..row + pt]);
            }
        }
    }
    Tensor::new(vec![(f / pf) * (t / pt), pf * pt], out)
}

fn uniform_fan_in<R: Rng + ?Sized>(shape: [usize; 2], rng: &mut R) -> Tensor {
    let lim = 1.0 / (shape[1] as f64).sqrt();
    Tensor::uniform(shape, -lim, lim, rng)
}

/// Patch projection, CLS token and positional embeddings of the video stream.
#[derive(Clone, Debug)]
pub struct VideoEmbed {
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub cls: ParamId,
    /// `(h·w + 1, d)`; row 0 belongs to the CLS token.
    pub pos_spatial: ParamId,
    /// `(T, d)`; not applied to the CLS token.
    pub pos_temporal: ParamId,
    spatial_select: Tensor,
    temporal_select: Tensor,
}

impl VideoEmbed {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let v = &cfg.video;
        let d = cfg.video_dim;
        let hw = v.patches_per_frame();
        let n = v.tokens();
        let mut spatial = vec![0.0; (n + 1) * (hw + 1)];
        let mut temporal = vec![0.0; (n + 1) * v.frames];
        spatial[0] = 1.0;
        for tok in 0..n {
            spatial[(tok + 1) * (hw + 1) + 1 + tok % hw] = 1.0;
            temporal[(tok + 1) * v.frames + tok / hw] = 1.0;
        }
        Self {
            proj_w: store.add("video.embed.proj.w", uniform_fan_in([d, v.patch_len()], rng)),
            proj_b: store.add("video.embed.proj.b", Tensor::zeros([d])),
            cls: store.add("video.embed.cls", Tensor::randn([1, d], 0.02, rng)),
            pos_spatial: store.add("video.embed.pos_spatial", Tensor::randn([hw + 1, d], 0.02, rng)),
            pos_temporal: store.add("video.embed.pos_temporal", Tensor::randn([v.frames, d], 0.02, rng)),
            spatial_select: Tensor::new(vec![n + 1, hw + 1], spatial).expect("selection shape"),
            temporal_select: Tensor::new(vec![n + 1, v.frames], temporal).expect("selection shape"),
        }
    }

    pub fn param_count(cfg: &ModelConfig) -> usize {
        let v = &cfg.video;
        let d = cfg.video_dim;
        d * v.patch_len() + d + d + (v.patches_per_frame() + 1) * d + v.frames * d
    }

    /// `(N_v, 3p²)` patches → `(N_v + 1, d_v)` tokens.
    pub fn tokenize<'t>(&self, p: &Bound<'t>, patches: &Tensor) -> Result<Var<'t>> {
        let expected = self.spatial_select.shape()[0] - 1;
        if patches.shape()[0] != expected {
            return Err(Error::ShapeMismatch {
                op: "video_tokenize",
                lhs: patches.shape().to_vec(),
                rhs: vec![expected],
            });
        }
        let tape = p[self.cls].tape();
        let tokens = tape
            .constant(patches)
            .matmul(p[self.proj_w].transpose()?)?
            .add(p[self.proj_b])?;
        let seq = concat(&[p[self.cls], tokens], 0)?;
        let spatial = tape.constant(&self.spatial_select).matmul(p[self.pos_spatial])?;
        let temporal = tape.constant(&self.temporal_select).matmul(p[self.pos_temporal])?;
        seq.add(spatial)?.add(temporal)
    }
}

/// Patch projection, CLS token and positional embedding of the audio stream.
#[derive(Clone, Debug)]
pub struct AudioEmbed {
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub cls: ParamId,
    /// `(N_a + 1, d)`
    pub pos: ParamId,
    tokens: usize,
}

impl AudioEmbed {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.audio_dim;
        let n = cfg.audio.tokens();
        Self {
            proj_w: store.add("audio.embed.proj.w", uniform_fan_in([d, cfg.audio.patch_len()], rng)),
            proj_b: store.add("audio.embed.proj.b", Tensor::zeros([d])),
            cls: store.add("audio.embed.cls", Tensor::randn([1, d], 0.02, rng)),
            pos: store.add("audio.embed.pos", Tensor::randn([n + 1, d], 0.02, rng)),
            tokens: n,
        }
    }

    pub fn param_count(cfg: &ModelConfig) -> usize {
        let d = cfg.audio_dim;
        d * cfg.audio.patch_len() + d + d + (cfg.audio.tokens() + 1) * d
    }

    pub fn tokenize<'t>(&self, p: &Bound<'t>, patches: &Tensor) -> Result<Var<'t>> {
        if patches.shape()[0] != self.tokens {
            return Err(Error::ShapeMismatch {
                op: "audio_tokenize",
                lhs: patches.shape().to_vec(),
                rhs: vec![self.tokens],
            });
        }
        let tokens = p[self.cls]
            .tape()
            .constant(patches)
            .matmul(p[self.proj_w].transpose()?)?
            .add(p[self.proj_b])?;
        concat(&[p[self.cls], tokens], 0)?.add(p[self.pos])
    }
}

/// LoRA factors on the four steered generators of one block, plus the heads
/// producing their signal (absent for static updates).
#[derive(Clone, Debug)]
pub struct SteerSet {
    pub heads: Option<LayerHeads>,
    pub fwd_x: LoraFactors,
    pub fwd_dt: LoraFactors,
    pub bwd_x: LoraFactors,
    pub bwd_dt: LoraFactors,
}

impl SteerSet {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &ModelConfig,
        ssm: &SsmConfig,
        cond_dim: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        let s = &cfg.steering;
        let width = ssm.dt_rank + 2 * ssm.state_dim;
        let heads = cond_dim.map(|c| LayerHeads {
            input: SteeringHead::new(store, &format!("{prefix}.head_x"), c, s.rank, rng),
            delta: SteeringHead::new(store, &format!("{prefix}.head_dt"), c, s.dt_rank, rng),
        });
        let mut factors = |dir: &str| -> Result<(LoraFactors, LoraFactors)> {
            Ok((
                LoraFactors::new(store, &format!("{prefix}.{dir}.x_proj"), ssm.inner_dim, width, s.rank, s.alpha, rng)?,
                LoraFactors::new(store, &format!("{prefix}.{dir}.dt_proj"), ssm.dt_rank, ssm.inner_dim, s.dt_rank, s.dt_alpha, rng)?,
            ))
        };
        let (fwd_x, fwd_dt) = factors("fwd")?;
        let (bwd_x, bwd_dt) = factors("bwd")?;
        Ok(Self {
            heads,
            fwd_x,
            fwd_dt,
            bwd_x,
            bwd_dt,
        })
    }

    pub fn param_count(cfg: &ModelConfig, ssm: &SsmConfig, cond_dim: Option<usize>) -> usize {
        let s = &cfg.steering;
        let width = ssm.dt_rank + 2 * ssm.state_dim;
        let heads = cond_dim.map_or(0, |c| {
            SteeringHead::param_count(c, s.rank) + SteeringHead::param_count(c, s.dt_rank)
        });
        heads + 2 * (s.rank * (ssm.inner_dim + width) + s.dt_rank * (ssm.dt_rank + ssm.inner_dim))
    }

    fn hooks<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        cond: Option<Var<'t>>,
        mode: SignalMode,
        force_gate: Option<f64>,
    ) -> Result<BlockHooks<'t>> {
        let mut signals = match (&self.heads, cond) {
            (Some(heads), Some(c)) => derive_signals(p, c, heads, mode)?,
            (None, _) => crate::steering::SteeringSignals {
                input: Signal::constant(tape, &vec![1.0; self.fwd_x.rank], 1.0),
                delta: Signal::constant(tape, &vec![1.0; self.fwd_dt.rank], 1.0),
            },
            (Some(_), None) => return Err(Error::Contract("steering heads need a conditioning vector".into())),
        };
        if let Some(g) = force_gate {
            signals = signals.with_gates(g);
        }
        let branch = |x: &LoraFactors, dt: &LoraFactors| BranchHooks {
            x_proj: Some(x.bind(p, signals.input)),
            dt_proj: Some(dt.bind(p, signals.delta)),
            film: None,
        };
        Ok(BlockHooks {
            forward: branch(&self.fwd_x, &self.fwd_dt),
            backward: branch(&self.bwd_x, &self.bwd_dt),
        })
    }
}

/// Cross-attention from audio tokens to the layer's video tokens.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub q: ParamId,
    pub k: ParamId,
    pub v: ParamId,
    /// Zero-initialized so the residual starts as the identity.
    pub o: ParamId,
}

/// Extra parameters coupling the two streams at one layer.
#[derive(Clone, Debug, Default)]
pub struct LayerLink {
    pub audio_steer: Option<SteerSet>,
    pub video_steer: Option<SteerSet>,
    /// `(d_a, d_v)` for additive fusion, `(d_a, d_a + d_v)` for concatenation.
    pub fusion: Option<ParamId>,
    /// `(W_gamma, W_beta)`, each `(dt_rank + 2N, d_v)`.
    pub film: Option<(ParamId, ParamId)>,
    pub cross_attention: Option<CrossAttention>,
}

#[derive(Clone, Debug)]
pub struct Stream<E> {
    pub embed: E,
    pub blocks: Vec<BidirectionalBlock>,
    /// Per layer, the LayerNorm applied to the CLS output when it is used.
    pub cls_norms: Vec<Option<(ParamId, ParamId)>>,
}

impl<E> Stream<E> {
    fn cls<'t>(&self, p: &Bound<'t>, layer: usize, tokens: Var<'t>) -> Result<Var<'t>> {
        let (g, b) = self.cls_norms[layer].as_ref().ok_or_else(|| {
            Error::Contract(format!("no CLS normalization at layer {layer}"))
        })?;
        tokens.slice(0, 0, 1)?.layer_norm(p[*g], p[*b], CLS_NORM_EPS)
    }
}

/// Per-call switches used by reductions and diagnostics.
#[derive(Clone, Copy, Debug, Default)]
pub struct EncodeOptions {
    /// Overrides every steering gate with this constant.
    pub force_gate: Option<f64>,
}

/// Clip-level outputs on a tape: `z_v (1, d_v)`, `z_a (1, d_a)`, logit `(1, 1)`.
#[derive(Clone, Copy, Debug)]
pub struct Encoded<'t> {
    pub z_v: Option<Var<'t>>,
    pub z_a: Option<Var<'t>>,
    pub logit: Var<'t>,
}

pub struct BatchLoss<'t> {
    pub total: Var<'t>,
    pub logits: Vec<f64>,
    pub report: LossReport,
}

/// Preprocessed model inputs for one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipInputs {
    pub video: Option<Tensor>,
    pub audio: Option<Tensor>,
}

pub struct ColorsModel {
    pub cfg: ModelConfig,
    pub mode: SteeringMode,
    pub store: ParamStore,
    pub video: Option<Stream<VideoEmbed>>,
    pub audio: Option<Stream<AudioEmbed>>,
    pub links: Vec<LayerLink>,
    /// `(1, d_v + d_a)` over the present modalities.
    pub head_w: ParamId,
    pub head_b: ParamId,
    pub projections: Option<ProjectionHeads>,
    frontend: MelFrontend,
}

/// Which CLS normalizations and couplings a configuration needs.
struct Plan {
    mode: SteeringMode,
    depth: usize,
    video: bool,
    audio: bool,
}

impl Plan {
    fn new(cfg: &ModelConfig, mode: SteeringMode) -> Self {
        let (video, audio) = match cfg.modality {
            Modality::AudioVideo => (true, true),
            Modality::VideoOnly => (true, false),
            Modality::AudioOnly => (false, true),
        };
        let mode = if video && audio { mode } else { SteeringMode::None };
        Self {
            mode,
            depth: cfg.depth,
            video,
            audio,
        }
    }

    fn last(&self, l: usize) -> bool {
        l + 1 == self.depth
    }

    fn video_cls_used(&self, l: usize) -> bool {
        self.last(l)
            || match self.mode {
                SteeringMode::VideoToAudio | SteeringMode::CrissCross | SteeringMode::Film => true,
                SteeringMode::FeatureFusion(_, s) => s.applies(l, self.depth),
                _ => false,
            }
    }

    fn audio_cls_used(&self, l: usize) -> bool {
        self.last(l)
            || match self.mode {
                SteeringMode::AudioToVideo => true,
                SteeringMode::CrissCross => !self.last(l),
                _ => false,
            }
    }

    fn audio_steered(&self, _l: usize) -> bool {
        matches!(self.mode, SteeringMode::VideoToAudio | SteeringMode::CrissCross | SteeringMode::StandardLora)
    }

    fn video_steered(&self, l: usize) -> bool {
        match self.mode {
            SteeringMode::AudioToVideo => true,
            SteeringMode::CrissCross => l > 0,
            _ => false,
        }
    }
}

impl ColorsModel {
    pub fn new<R: Rng + ?Sized>(cfg: ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mode = crate::config::steering_direction(&cfg.steering)?;
        let plan = Plan::new(&cfg, mode);
        let mut store = ParamStore::new();
        let (dv, da) = (cfg.video_dim, cfg.audio_dim);
        let (vssm, assm) = (cfg.ssm(dv), cfg.ssm(da));

        let video = plan.video.then(|| Stream {
            embed: VideoEmbed::new(&mut store, &cfg, rng),
            blocks: Vec::new(),
            cls_norms: Vec::new(),
        });
        let audio = plan.audio.then(|| Stream {
            embed: AudioEmbed::new(&mut store, &cfg, rng),
            blocks: Vec::new(),
            cls_norms: Vec::new(),
        });
        let (mut video, mut audio) = (video, audio);
        let mut links = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            if let Some(v) = video.as_mut() {
                v.blocks.push(BidirectionalBlock::new(&mut store, &format!("video.block{l}"), dv, vssm.clone(), rng));
                v.cls_norms.push(plan.video_cls_used(l).then(|| {
                    (
                        store.add(format!("video.cls_norm{l}.g"), Tensor::ones([dv])),
                        store.add(format!("video.cls_norm{l}.b"), Tensor::zeros([dv])),
                    )
                }));
            }
            if let Some(a) = audio.as_mut() {
                a.blocks.push(BidirectionalBlock::new(&mut store, &format!("audio.block{l}"), da, assm.clone(), rng));
                a.cls_norms.push(plan.audio_cls_used(l).then(|| {
                    (
                        store.add(format!("audio.cls_norm{l}.g"), Tensor::ones([da])),
                        store.add(format!("audio.cls_norm{l}.b"), Tensor::zeros([da])),
                    )
                }));
            }
            let mut link = LayerLink::default();
            if plan.audio_steered(l) {
                let cond = (mode != SteeringMode::StandardLora).then_some(dv);
                link.audio_steer = Some(SteerSet::new(&mut store, &format!("steer.audio{l}"), &cfg, &assm, cond, rng)?);
            }
            if plan.video_steered(l) {
                link.video_steer = Some(SteerSet::new(&mut store, &format!("steer.video{l}"), &cfg, &vssm, Some(da), rng)?);
            }
            match plan.mode {
                SteeringMode::FeatureFusion(op, s) if s.applies(l, cfg.depth) => {
                    let d_in = match op {
                        FusionOp::Add => dv,
                        FusionOp::Concat => da + dv,
                    };
                    link.fusion = Some(store.add(format!("fusion{l}.w"), Tensor::zeros([da, d_in])));
                }
                SteeringMode::Film => {
                    let width = assm.dt_rank + 2 * assm.state_dim;
                    link.film = Some((
                        store.add(format!("film{l}.gamma.w"), Tensor::zeros([width, dv])),
                        store.add(format!("film{l}.beta.w"), Tensor::zeros([width, dv])),
                    ));
                }
                SteeringMode::CrossAttention => {
                    link.cross_attention = Some(CrossAttention {
                        q: store.add(format!("xattn{l}.q"), uniform_fan_in([da, da], rng)),
                        k: store.add(format!("xattn{l}.k"), uniform_fan_in([da, dv], rng)),
                        v: store.add(format!("xattn{l}.v"), uniform_fan_in([da, dv], rng)),
                        o: store.add(format!("xattn{l}.o"), Tensor::zeros([da, da])),
                    });
                }
                _ => {}
            }
            links.push(link);
        }
        let fused = usize::from(plan.video) * dv + usize::from(plan.audio) * da;
        let head_w = store.add("head.w", uniform_fan_in([1, fused], rng));
        let head_b = store.add("head.b", Tensor::zeros([1]));
        let projections = (plan.video && plan.audio)
            .then(|| ProjectionHeads::new(&mut store, da, dv, cfg.shared_dim, cfg.tau_init, rng));
        let frontend = MelFrontend::new(cfg.audio.mel.clone())?;
        Ok(Self {
            mode: plan.mode,
            cfg,
            store,
            video,
            audio,
            links,
            head_w,
            head_b,
            projections,
            frontend,
        })
    }

    pub fn signal_mode(&self) -> SignalMode {
        match (self.mode, self.cfg.steering.gate) {
            (SteeringMode::StandardLora, _) => SignalMode::Static,
            (_, true) => SignalMode::Gated,
            (_, false) => SignalMode::Ungated,
        }
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn mel_frontend(&self) -> &MelFrontend {
        &self.frontend
    }

    /// Video patches for the video stream, if present.
    pub fn prepare_video(&self, clip: &VideoClip) -> Result<Tensor> {
        let v = &self.cfg.video;
        let s = clip.frames.shape();
        if s.len() != 4 || s[1] != v.frames || s[2] != v.height || s[3] != v.width {
            return Err(Error::ShapeMismatch {
                op: "prepare_video",
                lhs: s.to_vec(),
                rhs: vec![3, v.frames, v.height, v.width],
            });
        }
        patchify_video(clip, v.patch)
    }

    /// Normalized, cropped mel patches for the audio stream.
    pub fn prepare_mel(&self, mel: &MelSpectrogram) -> Result<Tensor> {
        let a = &self.cfg.audio;
        let used = a.used_frames();
        if mel.n_mels() != a.mel.n_mels || mel.frames() < used {
            return Err(Error::ShapeMismatch {
                op: "prepare_mel",
                lhs: mel.bins.shape().to_vec(),
                rhs: vec![a.mel.n_mels, used],
            });
        }
        let frames = mel.frames();
        let mut cropped = Vec::with_capacity(a.mel.n_mels * used);
        for m in 0..a.mel.n_mels {
            let row = &mel.bins.data()[m * frames..m * frames + used];
            cropped.extend(row.iter().map(|v| (v - a.norm_offset) / a.norm_scale));
        }
        patchify_mel(&Tensor::new(vec![a.mel.n_mels, used], cropped)?, a.patch_freq, a.patch_time)
    }

    pub fn prepare_wave(&self, wave: &AudioWave) -> Result<Tensor> {
        self.prepare_mel(&self.frontend.compute(wave)?)
    }

    pub fn prepare(&self, clip: &VideoClip, wave: &AudioWave) -> Result<ClipInputs> {
        let span = clip.frames.shape().get(1).copied().unwrap_or(0) as f64 / clip.fps;
        let hop = self.cfg.audio.mel.hop_ms / 1000.0;
        if (span - wave.duration_s()).abs() > hop + 1e-9 {
            return Err(Error::Contract(format!(
                "video spans {span:.3} s but audio spans {:.3} s",
                wave.duration_s()
            )));
        }
        Ok(ClipInputs {
            video: self.video.as_ref().map(|_| self.prepare_video(clip)).transpose()?,
            audio: self.audio.as_ref().map(|_| self.prepare_wave(wave)).transpose()?,
        })
    }

    fn input<'a>(x: &'a Option<Tensor>, what: &str) -> Result<&'a Tensor> {
        x.as_ref().ok_or_else(|| Error::Contract(format!("missing {what} input")))
    }

    /// Runs both streams layer by layer and the fusion head.
    pub fn encode<'t>(&self, p: &Bound<'t>, inputs: &ClipInputs, opts: &EncodeOptions) -> Result<Encoded<'t>> {
        let mut v = match &self.video {
            Some(s) => Some(s.embed.tokenize(p, Self::input(&inputs.video, "video")?)?),
            None => None,
        };
        let mut a = match &self.audio {
            Some(s) => Some(s.embed.tokenize(p, Self::input(&inputs.audio, "audio")?)?),
            None => None,
        };
        let depth = self.cfg.depth;
        for s in [self.video.as_ref().map(|s| s.blocks.len()), self.audio.as_ref().map(|s| s.blocks.len())]
            .into_iter()
            .flatten()
        {
            if s != depth {
                return Err(Error::Contract(format!("stream depth {s} differs from configured depth {depth}")));
            }
        }
        let audio_first = self.mode == SteeringMode::AudioToVideo;
        let mut c_v = None;
        let mut c_a = None;
        for l in 0..depth {
            if !audio_first {
                if let Some(tokens) = v {
                    let (out, cls) = self.video_step(p, l, tokens, c_a, opts)?;
                    v = Some(out);
                    c_v = cls;
                }
            }
            if let Some(tokens) = a {
                let (out, cls) = self.audio_step(p, l, tokens, c_v, v, opts)?;
                a = Some(out);
                c_a = cls;
            }
            if audio_first {
                if let Some(tokens) = v {
                    let (out, cls) = self.video_step(p, l, tokens, c_a, opts)?;
                    v = Some(out);
                    c_v = cls;
                }
            }
        }
        let z_v = self.video.as_ref().map(|_| c_v.expect("last video CLS is normalized"));
        let z_a = self.audio.as_ref().map(|_| c_a.expect("last audio CLS is normalized"));
        let parts: Vec<Var<'t>> = z_v.iter().chain(z_a.iter()).copied().collect();
        let h = concat(&parts, 1)?;
        let logit = h.matmul(p[self.head_w].transpose()?)?.add(p[self.head_b])?;
        Ok(Encoded { z_v, z_a, logit })
    }

    fn video_step<'t>(
        &self,
        p: &Bound<'t>,
        l: usize,
        tokens: Var<'t>,
        c_a: Option<Var<'t>>,
        opts: &EncodeOptions,
    ) -> Result<(Var<'t>, Option<Var<'t>>)> {
        let stream = self.video.as_ref().expect("video stream present");
        let hooks = match &self.links[l].video_steer {
            Some(set) => set.hooks(p, tokens.tape(), c_a, self.signal_mode(), opts.force_gate)?,
            None => BlockHooks::default(),
        };
        let out = stream.blocks[l].forward(p, tokens, &hooks)?;
        let cls = match stream.cls_norms[l] {
            Some(_) => Some(stream.cls(p, l, out)?),
            None => None,
        };
        Ok((out, cls))
    }

    /// Audio block `l`, steered or coupled according to the mode. `video`
    /// holds the video tokens after block `l` (or `l - 1` when audio runs first).
    fn audio_step<'t>(
        &self,
        p: &Bound<'t>,
        l: usize,
        mut tokens: Var<'t>,
        c_v: Option<Var<'t>>,
        video: Option<Var<'t>>,
        opts: &EncodeOptions,
    ) -> Result<(Var<'t>, Option<Var<'t>>)> {
        let stream = self.audio.as_ref().expect("audio stream present");
        let link = &self.links[l];
        let need_cv = || c_v.ok_or_else(|| Error::Contract(format!("layer {l} needs the video CLS")));
        let mut hooks = match &link.audio_steer {
            Some(set) => set.hooks(p, tokens.tape(), c_v, self.signal_mode(), opts.force_gate)?,
            None => BlockHooks::default(),
        };
        if let Some((wg, wb)) = link.film {
            let cond = need_cv()?;
            let film = FeatureFilm {
                gamma: cond.matmul(p[wg].transpose()?)?,
                beta: cond.matmul(p[wb].transpose()?)?,
            };
            hooks.forward.film = Some(film);
            hooks.backward.film = Some(film);
        }
        if let Some(w) = link.fusion {
            let cond = need_cv()?;
            let src = if p[w].shape()[1] == self.cfg.video_dim {
                cond
            } else {
                let rows = cond.broadcast_to(&[tokens.shape()[0], self.cfg.video_dim])?;
                concat(&[tokens, rows], 1)?
            };
            tokens = tokens.add(src.matmul(p[w].transpose()?)?)?;
        }
        if let Some(x) = &link.cross_attention {
            let kv = video.ok_or_else(|| Error::Contract("cross attention needs video tokens".into()))?;
            let q = tokens.matmul(p[x.q].transpose()?)?;
            let k = kv.matmul(p[x.k].transpose()?)?;
            let val = kv.matmul(p[x.v].transpose()?)?;
            let scale = 1.0 / (self.cfg.audio_dim as f64).sqrt();
            let attn = q.matmul(k.transpose()?)?.scale(scale)?.softmax(1)?;
            tokens = tokens.add(attn.matmul(val)?.matmul(p[x.o].transpose()?)?)?;
        }
        let out = stream.blocks[l].forward(p, tokens, &hooks)?;
        let cls = match stream.cls_norms[l] {
            Some(_) => Some(stream.cls(p, l, out)?),
            None => None,
        };
        Ok((out, cls))
    }

    /// Audio stream alone with every hook disabled: the unconditioned branch
    /// of the same weights. Returns the final normalized CLS `(1, d_a)`.
    pub fn encode_audio_unconditioned<'t>(&self, p: &Bound<'t>, audio: &Tensor) -> Result<Var<'t>> {
        let stream = self
            .audio
            .as_ref()
            .ok_or_else(|| Error::Contract("model has no audio stream".into()))?;
        let mut tokens = stream.embed.tokenize(p, audio)?;
        for block in &stream.blocks {
            tokens = block.forward(p, tokens, &BlockHooks::default())?;
        }
        stream.cls(p, self.cfg.depth - 1, tokens)
    }

    /// Batch objective on one tape: BCE on the logits plus `lambda` times
    /// AV-InfoNCE on the final CLS embeddings (zero for single-stream models).
    pub fn batch_loss<'t>(
        &self,
        p: &Bound<'t>,
        batch: &[&ClipInputs],
        labels: &[f64],
        lambda: f64,
        opts: &EncodeOptions,
    ) -> Result<BatchLoss<'t>> {
        if batch.is_empty() || batch.len() != labels.len() {
            return Err(Error::Contract(format!(
                "{} clips with {} labels",
                batch.len(),
                labels.len()
            )));
        }
        let outs = batch
            .iter()
            .map(|x| self.encode(p, x, opts))
            .collect::<Result<Vec<_>>>()?;
        let logits = concat(&outs.iter().map(|o| o.logit).collect::<Vec<_>>(), 0)?;
        let l_cls = bce_with_logits(logits, labels)?;
        let tape = logits.tape();
        let l_av = match &self.projections {
            Some(heads) => {
                let z_a = concat(&outs.iter().map(|o| o.z_a.unwrap()).collect::<Vec<_>>(), 0)?;
                let z_v = concat(&outs.iter().map(|o| o.z_v.unwrap()).collect::<Vec<_>>(), 0)?;
                av_infonce(p, heads, z_a, z_v)?
            }
            None => tape.scalar(0.0),
        };
        let total = total_loss(l_cls, l_av, lambda)?;
        let tau = match &self.projections {
            Some(h) => p[h.rho].value().item().exp(),
            None => f64::NAN,
        };
        Ok(BatchLoss {
            total,
            logits: logits.value().to_vec(),
            report: LossReport {
                l_cls: l_cls.value().item(),
                l_av: l_av.value().item(),
                l_total: total.value().item(),
                tau,
            },
        })
    }

    /// Convenience forward on raw media: `(z_v, z_a, q)` as plain values.
    pub fn encode_pair(&self, clip: &VideoClip, wave: &AudioWave) -> Result<(Option<Tensor>, Option<Tensor>, f64)> {
        let inputs = self.prepare(clip, wave)?;
        let tape = Tape::new();
        let p = self.store.bind(&tape, false);
        let out = self.encode(&p, &inputs, &EncodeOptions::default())?;
        Ok((
            out.z_v.map(|z| z.value()),
            out.z_a.map(|z| z.value()),
            out.logit.value().item(),
        ))
    }
}
