mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gelatto_core::Error;

#[derive(Parser, Debug)]
#[command(name = "gelatto", version, about = "Point cloud segmentation with geometric/latent attention")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Run configuration (TOML); the toy setup when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Nearest-first neighbour selection everywhere.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate labelled synthetic rooms and a matching run configuration.
    Synth {
        #[arg(long)]
        train_scenes: Option<usize>,
        #[arg(long)]
        test_scenes: Option<usize>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Train a segmentation network.
    Train(TrainArgs),
    /// Score a checkpoint on labelled scenes by voting.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory of labelled scenes; `paths.eval` when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Label one cloud file.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        /// Output file; `<out>/<input stem>.pred.txt` when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Finite-difference check of the micro network.
    Gradcheck {
        /// Scale the backward pass of one op family (e.g. softmax, linear).
        #[arg(long)]
        inject_fault: Option<String>,
        #[arg(long, default_value_t = 1.5)]
        factor: f64,
    },
    /// Write the attention scores around one point as cloud files.
    DumpAttention {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        point: usize,
        #[arg(long)]
        channel: Option<usize>,
    },
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Training scene directory.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation scene directory.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// both, geometric-only, latent-only or mlp-pool.
    #[arg(long)]
    pub heads: Option<String>,
    /// Channels sharing one attention score.
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Neighbours per ball in every layer.
    #[arg(long)]
    pub k: Option<usize>,
    /// Weight of every auxiliary loss.
    #[arg(long)]
    pub aux_weight: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub target_miou: Option<f64>,
}

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            Error::NonFinite(_) => Failure::Numeric(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn init_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("GELATTO_THREADS") {
        let n: usize = v.parse().map_err(|_| Failure::Usage(format!("GELATTO_THREADS={v} is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match init_threads().and_then(|_| commands::run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Usage(m) => (1, m),
                Failure::Data(m) => (2, m),
                Failure::Numeric(m) => (3, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
