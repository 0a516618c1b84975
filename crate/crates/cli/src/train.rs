//! Run configuration, example loading, the training loop and evaluation.

use std::path::Path;

use colors_core::backbone::{ClipInputs, ColorsModel, EncodeOptions};
use colors_core::checkpoint;
use colors_core::config::ModelConfig;
use colors_core::frontend::MelSpectrogram;
use colors_core::optim::{AdamW, Schedule};
use colors_core::{ParamStore, Tape, Tensor};
use colors_data::augment::{spec_augment, AugmentConfig};
use colors_data::media::{read_video, read_wav};
use colors_data::records::{ClipRecord, Label};
use colors_data::synth::{SynthConfig, SynthDataset};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::metrics::EvalReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub batch_size: usize,
    /// Share of training clips held out for checkpoint selection.
    pub val_fraction: f64,
    /// Applies [`AugmentConfig`] to training spectrograms when set.
    pub augment: Option<AugmentConfig>,
    /// Replaces the configured log-mel offset and scale with the training
    /// set's mean and standard deviation before training.
    pub fit_audio_norm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 0.05,
            warmup_epochs: 5,
            epochs: 60,
            lambda: 0.4,
            batch_size: 8,
            val_fraction: 0.1,
            augment: None,
            fit_audio_norm: true,
        }
    }
}

/// Everything one run needs, read from a single TOML file with optional
/// `[model]`, `[train]` and `[synth]` tables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let t = &self.train;
        if !(t.lr > 0.0) || t.weight_decay < 0.0 || t.lambda < 0.0 || t.batch_size == 0 || t.epochs == 0 {
            return Err(CliError::Config("lr, batch_size and epochs must be positive; wd and lambda non-negative".into()));
        }
        if !(0.0..1.0).contains(&t.val_fraction) {
            return Err(CliError::Config("val_fraction lies in [0, 1)".into()));
        }
        Ok(())
    }

    /// Toy model and schedule used for the planted-cue learning experiment:
    /// 30 epochs at lr 3e-3 with one warmup epoch, batch 16.
    pub fn synth_experiment() -> Self {
        Self {
            model: ModelConfig::toy(),
            train: TrainConfig {
                lr: 3e-3,
                warmup_epochs: 1,
                epochs: 30,
                batch_size: 16,
                ..TrainConfig::default()
            },
            synth: SynthConfig::default(),
        }
    }

    /// Synthetic clips shaped to feed this model.
    pub fn aligned_synth(&self) -> SynthConfig {
        let m = &self.model;
        SynthConfig {
            frames: m.video.frames,
            height: m.video.height,
            width: m.video.width,
            fps: m.video.fps,
            duration_s: m.audio.duration_s,
            sample_rate: m.audio.mel.sample_rate,
            ..self.synth.clone()
        }
    }

    /// One-line echo of the optimization and steering hyperparameters.
    pub fn header(&self) -> String {
        let (t, s) = (&self.train, &self.model.steering);
        format!(
            "lr={:e} wd={} warmup={} epochs={} lambda={} r={} alpha={} mode={} gate={} modality={}",
            t.lr,
            t.weight_decay,
            t.warmup_epochs,
            t.epochs,
            t.lambda,
            s.rank,
            s.alpha,
            s.mode,
            s.gate,
            serde_json::to_value(self.model.modality)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default()
        )
    }
}

/// One clip ready for the model: video patches and the raw log-mel (kept so
/// augmentation can run per step).
#[derive(Clone, Debug)]
pub struct Example {
    pub clip_id: String,
    pub label: bool,
    pub video: Option<Tensor>,
    pub mel: Option<MelSpectrogram>,
    inputs: ClipInputs,
}

impl Example {
    pub fn new(model: &ColorsModel, clip_id: String, label: bool, video: &colors_core::backbone::VideoClip, wave: &colors_core::frontend::AudioWave) -> Result<Self> {
        let inputs = model.prepare(video, wave)?;
        let mel = match model.audio {
            Some(_) => Some(model.mel_frontend().compute(wave)?),
            None => None,
        };
        Ok(Self {
            clip_id,
            label,
            video: inputs.video.clone(),
            mel,
            inputs,
        })
    }

    pub fn inputs(&self) -> &ClipInputs {
        &self.inputs
    }

    /// Rebuilds the audio patches after the model's normalization changed.
    pub fn reprepare(&mut self, model: &ColorsModel) -> Result<()> {
        if let Some(mel) = &self.mel {
            self.inputs.audio = Some(model.prepare_mel(mel)?);
        }
        Ok(())
    }
}

/// Mean and standard deviation of the log-mel cells the model actually
/// reads (after cropping), pooled over `examples`.
pub fn audio_statistics(cfg: &ModelConfig, examples: &[Example]) -> Option<(f64, f64)> {
    let used = cfg.audio.used_frames();
    let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
    for mel in examples.iter().filter_map(|e| e.mel.as_ref()) {
        let frames = mel.frames();
        for m in 0..mel.n_mels() {
            for &v in &mel.bins.data()[m * frames..m * frames + used.min(frames)] {
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
    }
    if n == 0 {
        return None;
    }
    let mean = sum / n as f64;
    let sd = (sq / n as f64 - mean * mean).max(0.0).sqrt();
    (sd > 0.0).then_some((mean, sd))
}

/// Fits the audio normalization on the first set (the training clips) when
/// enabled, then re-prepares every set for the updated model config.
pub fn fit_normalization(cfg: &mut RunConfig, all: &mut [&mut Vec<Example>]) -> Result<()> {
    if !cfg.train.fit_audio_norm || all.is_empty() {
        return Ok(());
    }
    if let Some((mean, sd)) = audio_statistics(&cfg.model, all[0]) {
        cfg.model.audio.norm_offset = mean;
        cfg.model.audio.norm_scale = sd;
        let probe = ColorsModel::new(cfg.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        for set in all.iter_mut() {
            for e in set.iter_mut() {
                e.reprepare(&probe)?;
            }
        }
    }
    Ok(())
}

pub fn examples_from_synth(model: &ColorsModel, ds: &SynthDataset) -> Result<Vec<Example>> {
    ds.clips
        .iter()
        .map(|c| Example::new(model, c.clip_id.clone(), c.label() == Label::Violent, &c.video, &c.audio))
        .collect()
}

/// Loads `<clip_id>.video` and `<clip_id>.wav` from `media` for each record.
pub fn examples_from_records(model: &ColorsModel, records: &[ClipRecord], media: &Path) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| {
            let video = read_video(&media.join(format!("{}.video", r.clip_id)))?;
            let wave = read_wav(&media.join(format!("{}.wav", r.clip_id)))?;
            Example::new(model, r.clip_id.clone(), r.label == Label::Violent, &video, &wave)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub l_cls: f64,
    pub l_av: f64,
    pub l_total: f64,
    pub tau: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

impl EpochLog {
    pub fn line(&self) -> String {
        format!(
            "epoch {:>3}  lr {:.2e}  l_cls {:.4}  l_av {:.4}  l_total {:.4}  tau {:.4}  train_acc {:.4}  val_acc {}",
            self.epoch,
            self.lr,
            self.l_cls,
            self.l_av,
            self.l_total,
            self.tau,
            self.train_accuracy,
            self.val_accuracy.map_or("-".into(), |v| format!("{v:.4}"))
        )
    }
}

pub struct TrainOutcome {
    /// Model holding the parameters of the best validation epoch (the last
    /// epoch when there is no validation set).
    pub model: ColorsModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
}

/// Splits off a validation share, stratified by label, under `seed`.
pub fn holdout(examples: Vec<Example>, fraction: f64, seed: u64) -> (Vec<Example>, Vec<Example>) {
    if fraction <= 0.0 {
        return (examples, Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_ed0f_7a1d);
    let (mut pos, mut neg): (Vec<_>, Vec<_>) = examples.into_iter().partition(|e| e.label);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for mut group in [pos, neg] {
        let k = (group.len() as f64 * fraction).round() as usize;
        val.extend(group.drain(..k));
        train.extend(group);
    }
    (train, val)
}

fn batch_inputs(batch: &[&Example], augment: Option<&AugmentConfig>, model: &ColorsModel, rng: &mut ChaCha8Rng) -> Result<Vec<ClipInputs>> {
    batch
        .iter()
        .map(|e| match (augment, &e.mel) {
            (Some(cfg), Some(mel)) => Ok(ClipInputs {
                video: e.inputs.video.clone(),
                audio: Some(model.prepare_mel(&spec_augment(mel, cfg, rng))?),
            }),
            _ => Ok(e.inputs.clone()),
        })
        .collect()
}

/// Trains a fresh model. `on_epoch` sees each epoch's log line as it lands.
pub fn train(
    cfg: &RunConfig,
    train_set: &[Example],
    val_set: &[Example],
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(CliError::EmptyManifest);
    }
    let t = &cfg.train;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ColorsModel::new(cfg.model.clone(), &mut rng)?;
    let mut opt = AdamW::new(&model.store, t.weight_decay);
    let steps_per_epoch = train_set.len().div_ceil(t.batch_size);
    let schedule = Schedule {
        base_lr: t.lr,
        warmup_steps: t.warmup_epochs * steps_per_epoch,
        total_steps: t.epochs * steps_per_epoch,
    };
    let opts = EncodeOptions::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut step = 0;

    for epoch in 1..=t.epochs {
        order.shuffle(&mut rng);
        let (mut sums, mut correct, mut lr) = ([0.0; 3], 0usize, 0.0);
        let mut tau = f64::NAN;
        for chunk in order.chunks(t.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            let inputs = batch_inputs(&batch, t.augment.as_ref(), &model, &mut rng)?;
            let labels: Vec<f64> = batch.iter().map(|e| if e.label { 1.0 } else { 0.0 }).collect();
            let tape = Tape::new();
            let p = model.store.bind(&tape, true);
            let refs: Vec<&ClipInputs> = inputs.iter().collect();
            let out = model.batch_loss(&p, &refs, &labels, t.lambda, &opts)?;
            let r = out.report;
            if !(r.l_total.is_finite()) {
                return Err(CliError::NonFiniteLoss {
                    epoch,
                    step,
                    l_cls: r.l_cls,
                    l_av: r.l_av,
                    tau: r.tau,
                });
            }
            let grads = tape.backward(out.total)?;
            let g = p.grads(&grads);
            drop(p);
            lr = schedule.lr(step);
            opt.step(&mut model.store, &g, lr)?;
            step += 1;
            let w = batch.len() as f64;
            sums[0] += r.l_cls * w;
            sums[1] += r.l_av * w;
            sums[2] += r.l_total * w;
            tau = r.tau;
            correct += out
                .logits
                .iter()
                .zip(&batch)
                .filter(|(&q, e)| (q > 0.0) == e.label)
                .count();
        }
        let n = train_set.len() as f64;
        let val_accuracy = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(&model, val_set)?.accuracy)
        };
        let entry = EpochLog {
            epoch,
            lr,
            l_cls: sums[0] / n,
            l_av: sums[1] / n,
            l_total: sums[2] / n,
            tau,
            train_accuracy: correct as f64 / n,
            val_accuracy,
        };
        on_epoch(&entry);
        log::info!("{}", entry.line());
        log.push(entry);
        let score = val_accuracy.unwrap_or(f64::NEG_INFINITY);
        if val_accuracy.is_none() || best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch, model.store.clone()));
        }
    }
    let (score, best_epoch, store) = best.expect("at least one epoch");
    model.store = store;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_val_accuracy: score.is_finite().then_some(score),
    })
}

pub fn logits(model: &ColorsModel, examples: &[Example]) -> Result<Vec<f64>> {
    let opts = EncodeOptions::default();
    examples
        .iter()
        .map(|e| {
            let tape = Tape::new();
            let p = model.store.bind(&tape, false);
            Ok(model.encode(&p, &e.inputs, &opts)?.logit.value().item())
        })
        .collect()
}

pub fn evaluate(model: &ColorsModel, examples: &[Example]) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(CliError::EmptyManifest);
    }
    let labels: Vec<bool> = examples.iter().map(|e| e.label).collect();
    EvalReport::from_logits(&logits(model, examples)?, &labels)
}

/// Writes parameters with the run config embedded as metadata.
pub fn save_checkpoint(path: &Path, model: &ColorsModel, cfg: &RunConfig) -> Result<()> {
    let meta = serde_json::json!({ "run_config": cfg.to_toml()? });
    checkpoint::save_params(path, &model.store, &meta)?;
    Ok(())
}

/// Rebuilds the model from a checkpoint's embedded config and loads its weights.
pub fn load_checkpoint(path: &Path) -> Result<(ColorsModel, RunConfig)> {
    let archive = checkpoint::load(path)?;
    let text = archive
        .meta
        .get("run_config")
        .and_then(|v| v.as_str())
        .ok_or_else(|| CliError::Config("checkpoint carries no run config".into()))?;
    let cfg = RunConfig::from_toml(text)?;
    let mut model = ColorsModel::new(cfg.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    archive.load_into(&mut model.store)?;
    Ok((model, cfg))
}
