use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use corrnqs_cli::{run, ExperimentConfig, Options, Task};

/// Correlator-basis neural quantum states: training, exact diagonalization
/// and spectral analysis.
#[derive(Parser, Debug)]
#[command(name = "corrnqs", version)]
struct Args {
    task: Task,
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `out` or `runs/<task>-<hash>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_plot: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    if let Some(n) = std::env::var("CORRNQS_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = ExperimentConfig::load(&args.config).and_then(|mut config| {
        if let Some(seed) = args.seed {
            config.seed = seed;
        }
        let out = args
            .out
            .clone()
            .or_else(|| config.out.clone())
            .unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}", args.task.name(), &config.hash()[..12])));
        run(args.task, &config, &out, &Options { plot: !args.no_plot }).map(|m| (out, m))
    });
    match result {
        Ok((out, manifest)) => {
            println!("{} files written to {}", manifest.files.len(), out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
