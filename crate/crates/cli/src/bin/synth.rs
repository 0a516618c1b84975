use std::path::PathBuf;

use clap::{Parser, Subcommand};
use colors_cli::train::RunConfig;
use colors_data::synth::synth_generate;

#[derive(Parser)]
#[command(name = "synth", about = "Generate the synthetic planted-cue dataset")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write clips, `manifest.jsonl` and `synth.json` into a directory.
    Gen {
        /// Run configuration; its `[synth]` table is shaped to its `[model]`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let Cmd::Gen { config, out, seed } = Cli::parse().cmd;
    let run = match config {
        Some(p) => RunConfig::load(&p)?,
        None => RunConfig::default(),
    };
    let mut cfg = run.aligned_synth();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ds = synth_generate(&cfg)?;
    ds.save(&out)?;
    println!("{} clips -> {}", ds.clips.len(), out.display());
    Ok(())
}
