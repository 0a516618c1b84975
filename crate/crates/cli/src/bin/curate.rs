use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use colors_data::manifest::{load_manifest, save_manifest, save_training_manifest};
use colors_data::media::{apply_exclusions, filter_records, read_exclusions};
use colors_data::records::{load_annotations, segment_runs, MIN_CLIP_S};
use colors_data::split::{make_splits, parse_ratios, DEFAULT_TOLERANCE};

#[derive(Parser)]
#[command(name = "curate", about = "Segment, filter and split annotated videos into clip manifests")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Cut annotated timelines into clips and run the silence filter.
    Segment {
        #[arg(long)]
        annotations: PathBuf,
        /// Directory holding `<video_id>.wav` source audio.
        #[arg(long)]
        media: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = MIN_CLIP_S)]
        min_clip_s: f64,
    },
    /// Apply a manual exclusion list and write the training manifest.
    Filter {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        exclusions: Option<PathBuf>,
        /// Defaults to `<manifest stem>.train.jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assign whole source videos to train/test.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "0.75,0.25")]
        ratios: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        /// Defaults to overwriting the input manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Segment {
            annotations,
            media,
            out,
            min_clip_s,
        } => {
            let mut records = Vec::new();
            for ann in load_annotations(&annotations).context("loading annotations")? {
                records.extend(segment_runs(&ann, min_clip_s)?.clips);
            }
            filter_records(&mut records, &media)?;
            save_manifest(&out, &records)?;
            println!("{} clips -> {}", records.len(), out.display());
        }
        Cmd::Filter {
            manifest,
            exclusions,
            out,
        } => {
            let mut records = load_manifest(&manifest)?;
            if let Some(path) = exclusions {
                let n = apply_exclusions(&mut records, &read_exclusions(&path)?);
                println!("{n} clips excluded by review");
                save_manifest(&manifest, &records)?;
            }
            let out = out.unwrap_or_else(|| manifest.with_extension("train.jsonl"));
            let kept = save_training_manifest(&out, &records)?;
            println!("{kept} of {} clips usable -> {}", records.len(), out.display());
        }
        Cmd::Split {
            manifest,
            ratios,
            seed,
            tolerance,
            out,
        } => {
            let records = load_manifest(&manifest)?;
            let result = make_splits(&records, parse_ratios(&ratios)?, seed, tolerance)?;
            for w in &result.warnings {
                eprintln!("warning: {w}");
            }
            save_manifest(out.as_ref().unwrap_or(&manifest), &result.records)?;
            println!("{}", result.summary());
        }
    }
    Ok(())
}
