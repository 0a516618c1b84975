use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use colors_cli::cost::cost_report;
use colors_cli::metrics::{flip_analysis, mcnemar, FlipCells, FlipTable};
use colors_cli::report::{flip_bars_svg, loss_curves_svg, write_report};
use colors_cli::sweep::{ablation_sweep, synth_data, Grid};
use colors_cli::train::{
    evaluate, examples_from_records, fit_normalization, holdout, load_checkpoint, logits, save_checkpoint, train,
    RunConfig,
};
use colors_core::backbone::ColorsModel;
use colors_data::manifest::{in_split, load_manifest};
use colors_data::records::Split;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "colors", about = "Train, evaluate and analyse the audio-video steering model")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn run_config(&self) -> anyhow::Result<RunConfig> {
        Ok(match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        })
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on a manifest's train split, or on synthetic data from the config.
    Train {
        #[command(flatten)]
        common: Common,
        /// Manifest whose clips have `split` set; media next to it unless --media.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        media: Option<PathBuf>,
    },
    /// Score a checkpoint on a manifest (its test split when splits are set).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        media: Option<PathBuf>,
    },
    /// Compare two prediction files, or tabulate given cells.
    Flip {
        #[command(flatten)]
        common: Common,
        /// Predictions JSON written by `eval` for the video-only model.
        #[arg(long, requires = "av")]
        video: Option<PathBuf>,
        #[arg(long)]
        av: Option<PathBuf>,
        /// `helps,hurts,both_correct,both_wrong` for the whole set.
        #[arg(long, conflicts_with = "video")]
        cells: Option<String>,
        #[arg(long, requires = "cells")]
        violent_cells: Option<String>,
        #[arg(long, requires = "cells")]
        nonviolent_cells: Option<String>,
    },
    /// Continuity-corrected McNemar test on discordant counts.
    Mcnemar {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        helps: usize,
        #[arg(long)]
        hurts: usize,
    },
    /// Parameter and operation counts for the configured model.
    Cost {
        #[command(flatten)]
        common: Common,
    },
    /// Ablation grid on synthetic data.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// TOML file with a `[grid]` table.
        #[arg(long)]
        grid: PathBuf,
        /// Comma-separated seeds; defaults to --seed alone.
        #[arg(long)]
        seeds: Option<String>,
    },
}

#[derive(Serialize, Deserialize)]
struct Prediction {
    clip_id: String,
    label: bool,
    logit: f64,
}

fn media_dir(manifest: &Path, media: Option<&PathBuf>) -> PathBuf {
    media
        .cloned()
        .unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn parse_cells(s: &str) -> anyhow::Result<FlipCells> {
    let v: Vec<usize> = s.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>()?;
    let [helps, hurts, both_correct, both_wrong] = v[..] else {
        bail!("expected four comma-separated counts, got `{s}`");
    };
    Ok(FlipCells {
        helps,
        hurts,
        both_correct,
        both_wrong,
    })
}

fn cmd_train(common: &Common, manifest: Option<&PathBuf>, media: Option<&PathBuf>) -> anyhow::Result<()> {
    let mut cfg = common.run_config()?;
    fs::create_dir_all(&common.out)?;
    let (cfg_used, train_set, val) = match manifest {
        None => {
            let data = synth_data(&cfg, common.seed)?;
            (data.cfg, data.train, data.val)
        }
        Some(m) => {
            let records = load_manifest(m)?;
            let probe = ColorsModel::new(cfg.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
            let dir = media_dir(m, media);
            let train_records = match in_split(&records, Split::Train) {
                r if r.is_empty() => records,
                r => r,
            };
            let examples = examples_from_records(&probe, &train_records, &dir)?;
            let (mut t, mut v) = holdout(examples, cfg.train.val_fraction, common.seed);
            fit_normalization(&mut cfg, &mut [&mut t, &mut v])?;
            (cfg, t, v)
        }
    };
    let mut lines = vec![cfg_used.header()];
    println!("{}", lines[0]);
    let out = train(&cfg_used, &train_set, &val, common.seed, |e| println!("{}", e.line()))?;
    lines.extend(out.log.iter().map(|e| e.line()));
    lines.push(format!("best epoch {}", out.best_epoch));
    write_report(&common.out, "train_log", &(lines.join("\n") + "\n"), &out.log)?;
    fs::write(common.out.join("loss_curves.svg"), loss_curves_svg(&out.log))?;
    fs::write(common.out.join("run_config.toml"), cfg_used.to_toml()?)?;
    save_checkpoint(&common.out.join("checkpoint.ckpt"), &out.model, &cfg_used)?;
    println!("best epoch {} -> {}", out.best_epoch, common.out.join("checkpoint.ckpt").display());
    Ok(())
}

fn cmd_eval(common: &Common, checkpoint: &Path, manifest: &Path, media: Option<&PathBuf>) -> anyhow::Result<()> {
    let (model, _) = load_checkpoint(checkpoint)?;
    let records = load_manifest(manifest)?;
    let records = match in_split(&records, Split::Test) {
        r if r.is_empty() => records,
        r => r,
    };
    let examples = examples_from_records(&model, &records, &media_dir(manifest, media))?;
    let report = evaluate(&model, &examples)?;
    let preds: Vec<Prediction> = examples
        .iter()
        .zip(logits(&model, &examples)?)
        .map(|(e, logit)| Prediction {
            clip_id: e.clip_id.clone(),
            label: e.label,
            logit,
        })
        .collect();
    print!("{}", report.text());
    write_report(&common.out, "eval", &report.text(), &report)?;
    fs::write(common.out.join("predictions.json"), serde_json::to_string_pretty(&preds)?)?;
    Ok(())
}

fn read_predictions(path: &Path) -> anyhow::Result<Vec<Prediction>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn cmd_flip(common: &Common, video: Option<&PathBuf>, av: Option<&PathBuf>, cells: [Option<&String>; 3]) -> anyhow::Result<()> {
    let table = match (video, av, cells[0]) {
        (Some(v), Some(a), _) => {
            let (v, a) = (read_predictions(v)?, read_predictions(a)?);
            if v.iter().map(|p| &p.clip_id).ne(a.iter().map(|p| &p.clip_id)) {
                bail!("prediction files cover different clips");
            }
            let labels: Vec<bool> = v.iter().map(|p| p.label).collect();
            let pv: Vec<bool> = v.iter().map(|p| p.logit > 0.0).collect();
            let pa: Vec<bool> = a.iter().map(|p| p.logit > 0.0).collect();
            flip_analysis(&pv, &pa, &labels)?
        }
        (_, _, Some(c)) => {
            let overall = parse_cells(c)?;
            let part = |s: Option<&String>| s.map(|s| parse_cells(s)).transpose();
            FlipTable::from_cells(overall, part(cells[1])?.unwrap_or_default(), part(cells[2])?.unwrap_or_default())
        }
        _ => bail!("give --video and --av, or --cells"),
    };
    let mut text = table.text();
    let stats = mcnemar(table.overall.helps, table.overall.hurts).ok();
    match stats {
        Some(m) => text += &format!("McNemar chi2 {:.3}, p {:.3e}\n", m.chi2, m.p),
        None => text += "McNemar: not applicable (no discordant pairs)\n",
    }
    print!("{text}");
    write_report(&common.out, "flip", &text, &serde_json::json!({"table": table, "mcnemar": stats}))?;
    fs::write(common.out.join("flip.svg"), flip_bars_svg(&table))?;
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Cmd::Train { common, manifest, media } => cmd_train(&common, manifest.as_ref(), media.as_ref()),
        Cmd::Eval {
            common,
            checkpoint,
            manifest,
            media,
        } => cmd_eval(&common, &checkpoint, &manifest, media.as_ref()),
        Cmd::Flip {
            common,
            video,
            av,
            cells,
            violent_cells,
            nonviolent_cells,
        } => cmd_flip(&common, video.as_ref(), av.as_ref(), [cells.as_ref(), violent_cells.as_ref(), nonviolent_cells.as_ref()]),
        Cmd::Mcnemar { common, helps, hurts } => {
            let m = mcnemar(helps, hurts)?;
            let text = format!("helps {helps} hurts {hurts}\nchi2 {:.4}\np {:.4e}\n", m.chi2, m.p);
            print!("{text}");
            write_report(&common.out, "mcnemar", &text, &m)?;
            Ok(())
        }
        Cmd::Cost { common } => {
            let report = cost_report(&common.run_config()?.model)?;
            print!("{}", report.text());
            write_report(&common.out, "cost", &report.text(), &report)?;
            Ok(())
        }
        Cmd::Sweep { common, grid, seeds } => {
            #[derive(Deserialize)]
            struct GridFile {
                grid: Grid,
            }
            let cfg = common.run_config()?;
            let g: GridFile = toml::from_str(&fs::read_to_string(&grid)?)?;
            let seeds: Vec<u64> = match seeds {
                Some(s) => s.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>()?,
                None => vec![common.seed],
            };
            let table = ablation_sweep(&cfg, &g.grid, &seeds, |row| {
                println!("{:?} -> {:.2}%", row.point, 100.0 * row.mean_accuracy)
            })?;
            print!("{}", table.text());
            write_report(&common.out, "sweep", &table.text(), &table)?;
            Ok(())
        }
    }
}
