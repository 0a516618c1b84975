//! Synthetic-data runs and ablation grids over steering hyperparameters.

use std::collections::BTreeMap;

use colors_core::backbone::ColorsModel;
use colors_data::records::Split;
use colors_data::split::make_splits;
use colors_data::synth::synth_generate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::metrics::EvalReport;
use crate::train::{evaluate, examples_from_synth, fit_normalization, holdout, logits, train, EpochLog, Example, RunConfig};

/// Train/validation/test examples for one seed, plus the run config with
/// any fitted normalization applied.
pub struct SynthData {
    pub cfg: RunConfig,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

/// Generates the dataset for `cfg.synth.seed + seed`, splits it 75/25 by
/// clip, holds out validation clips and fits the audio normalization.
pub fn synth_data(cfg: &RunConfig, seed: u64) -> Result<SynthData> {
    let mut cfg = cfg.clone();
    let mut synth = cfg.aligned_synth();
    synth.seed = synth.seed.wrapping_add(seed);
    let ds = synth_generate(&synth)?;
    let probe = ColorsModel::new(cfg.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let examples = examples_from_synth(&probe, &ds)?;
    let split = make_splits(&ds.records(), (0.75, 0.25), seed, colors_data::split::DEFAULT_TOLERANCE)?;
    let (mut train_set, mut test) = (Vec::new(), Vec::new());
    for (e, r) in examples.into_iter().zip(&split.records) {
        match r.split {
            Some(Split::Train) => train_set.push(e),
            _ => test.push(e),
        }
    }
    let (mut train_set, mut val) = holdout(train_set, cfg.train.val_fraction, seed);
    fit_normalization(&mut cfg, &mut [&mut train_set, &mut val, &mut test])?;
    Ok(SynthData {
        cfg,
        train: train_set,
        val,
        test,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RunResult {
    pub seed: u64,
    pub test: EvalReport,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    #[serde(skip)]
    pub test_logits: Vec<f64>,
    #[serde(skip)]
    pub test_labels: Vec<bool>,
}

pub fn run_synth(cfg: &RunConfig, seed: u64) -> Result<RunResult> {
    let data = synth_data(cfg, seed)?;
    let out = train(&data.cfg, &data.train, &data.val, seed, |_| {})?;
    let test_logits = logits(&out.model, &data.test)?;
    Ok(RunResult {
        seed,
        test: evaluate(&out.model, &data.test)?,
        best_epoch: out.best_epoch,
        log: out.log,
        test_logits,
        test_labels: data.test.iter().map(|e| e.label).collect(),
    })
}

pub const GRID_KEYS: [&str; 6] = ["direction", "gate", "fusion_mode", "r", "alpha", "lambda"];

/// Grid values per key, e.g. `gate = [true, false]`.
pub type Grid = BTreeMap<String, Vec<toml::Value>>;

/// Applies one grid assignment to a copy of `base`.
pub fn apply_point(base: &RunConfig, point: &[(String, toml::Value)]) -> Result<RunConfig> {
    let mut cfg = base.clone();
    let bad = |k: &str, v: &toml::Value| CliError::Config(format!("grid value {v} does not fit `{k}`"));
    for (k, v) in point {
        let s = &mut cfg.model.steering;
        match k.as_str() {
            "direction" | "fusion_mode" => s.mode = v.as_str().ok_or_else(|| bad(k, v))?.to_string(),
            "gate" => s.gate = v.as_bool().ok_or_else(|| bad(k, v))?,
            "r" => {
                let r = v.as_integer().filter(|r| *r > 0).ok_or_else(|| bad(k, v))? as usize;
                s.rank = r;
                s.dt_rank = r.min(cfg.model.dt_rank);
            }
            "alpha" => {
                let a = v.as_float().or_else(|| v.as_integer().map(|i| i as f64)).ok_or_else(|| bad(k, v))?;
                s.alpha = a;
                s.dt_alpha = a;
            }
            "lambda" => {
                cfg.train.lambda = v.as_float().or_else(|| v.as_integer().map(|i| i as f64)).ok_or_else(|| bad(k, v))?
            }
            other => return Err(CliError::GridKey(other.into())),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Cartesian product in key order; later keys vary fastest.
pub fn grid_points(grid: &Grid) -> Result<Vec<Vec<(String, toml::Value)>>> {
    if let Some(k) = grid.keys().find(|k| !GRID_KEYS.contains(&k.as_str())) {
        return Err(CliError::GridKey(k.clone()));
    }
    let mut points: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
    for (k, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((k.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub point: BTreeMap<String, String>,
    pub accuracies: Vec<f64>,
    pub macro_f1: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_macro_f1: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
    pub footer: String,
}

pub const SWEEP_FOOTER: &str = "Trained and scored on the synthetic planted-cue dataset. Accuracies published for the \
licensed benchmark test splits cannot be reproduced here and are not comparable to these rows.";

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

pub fn ablation_sweep(base: &RunConfig, grid: &Grid, seeds: &[u64], mut progress: impl FnMut(&SweepRow)) -> Result<SweepTable> {
    let mut rows = Vec::new();
    for point in grid_points(grid)? {
        let cfg = apply_point(base, &point)?;
        let mut accuracies = Vec::new();
        let mut f1s = Vec::new();
        for &seed in seeds {
            let r = run_synth(&cfg, seed)?;
            accuracies.push(r.test.accuracy);
            f1s.push(r.test.macro_f1);
        }
        let (mean_accuracy, std_accuracy) = mean_std(&accuracies);
        let row = SweepRow {
            point: point.iter().map(|(k, v)| (k.clone(), v.to_string())).collect(),
            mean_macro_f1: mean_std(&f1s).0,
            accuracies,
            macro_f1: f1s,
            mean_accuracy,
            std_accuracy,
        };
        progress(&row);
        rows.push(row);
    }
    Ok(SweepTable {
        seeds: seeds.to_vec(),
        rows,
        footer: SWEEP_FOOTER.into(),
    })
}

impl SweepTable {
    pub fn text(&self) -> String {
        let keys: Vec<&String> = self.rows.first().map(|r| r.point.keys().collect()).unwrap_or_default();
        let mut s = String::new();
        for k in &keys {
            s += &format!("{k:<28}");
        }
        s += &format!("{:>12}{:>10}{:>12}\n", "acc (%)", "std", "macro F1");
        for r in &self.rows {
            for k in &keys {
                s += &format!("{:<28}", r.point[*k]);
            }
            s += &format!(
                "{:>12.2}{:>10.2}{:>12.2}\n",
                100.0 * r.mean_accuracy,
                100.0 * r.std_accuracy,
                100.0 * r.mean_macro_f1
            );
        }
        s += &format!("seeds: {:?}\nnote: {}\n", self.seeds, self.footer);
        s
    }
}
