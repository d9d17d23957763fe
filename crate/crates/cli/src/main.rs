//! `prt`: precompute training data, train, render, evaluate and serve.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "prt", version, about = "Neural-wavelet precomputed radiance transfer")]
struct Cli {
    /// Worker threads for rendering and data generation (results do not
    /// depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Resolve relative paths and asset ids against this directory.
    #[arg(long, global = true)]
    assets_dir: Option<PathBuf>,
    /// Log filter, e.g. `info` or `prt_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Path-trace a training set of indirect-only images with G-buffers.
    Precompute(commands::PrecomputeArgs),
    /// Fit a transport model to a training set.
    Train(commands::TrainArgs),
    /// Relight a scene with a trained checkpoint.
    Render(commands::RenderArgs),
    /// Score a checkpoint (or a directory of images) against a dataset.
    Eval(commands::EvalArgs),
    /// Energy retained by the top-k wavelets of an environment map.
    WaveletStats(commands::WaveletStatsArgs),
    /// Run the HTTP rendering service.
    Serve(commands::ServeArgs),
    /// Write the built-in scene and procedural probes as an asset tree.
    Fixture(commands::FixtureArgs),
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Global {
    pub assets_dir: Option<PathBuf>,
}

impl Global {
    /// An input path: as given when it exists, else under the asset
    /// directory.
    pub fn path(&self, p: &std::path::Path) -> PathBuf {
        match &self.assets_dir {
            Some(a) if p.is_relative() && !p.exists() => a.join(p),
            _ => p.to_path_buf(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let g = Global {
        assets_dir: cli.assets_dir.clone(),
    };
    let result = match cli.command {
        Command::Precompute(a) => commands::precompute(&g, a),
        Command::Train(a) => commands::train(&g, a),
        Command::Render(a) => commands::render(&g, a),
        Command::Eval(a) => commands::eval(&g, a),
        Command::WaveletStats(a) => commands::wavelet_stats(&g, a),
        Command::Serve(a) => commands::serve(&g, a),
        Command::Fixture(a) => commands::fixture(&g, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.exit == 2 {
                eprintln!("usage: see `prt --help` and `prt <command> --help`");
            }
            eprintln!("error: {}", serde_json::json!({"code": e.code, "message": e.message}));
            ExitCode::from(e.exit)
        }
    }
}
