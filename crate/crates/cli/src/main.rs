use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod input;

/// Exit codes shared by every command.
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "rankpool",
    version,
    about = "Rank pooling encoders, trainers and gradient checks"
)]
struct Cli {
    /// Worker threads for per-sequence work [default: RANKPOOL_JOBS, else
    /// available parallelism]
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode every sequence of a dataset into a fixed-length vector
    Encode(EncodeArgs),
    /// Train a classifier (optionally with a learned frame transform)
    Train(TrainArgs),
    /// Print per-sequence class scores and predictions
    Predict(PredictArgs),
    /// Report accuracy, per-class accuracy and mAP
    Eval(EvalArgs),
    /// Compare analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset
    Synth(SynthArgs),
    /// Time the encoders on synthetic sequences
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
pub struct InputArgs {
    /// Dataset (JSON lines) or encodings file; `-` reads stdin
    #[arg(long, short, conflicts_with = "from_dir", required_unless_present = "from_dir")]
    pub input: Option<PathBuf>,
    /// Read `DIR/<class>/<file>` matrices instead of a dataset file
    #[arg(long)]
    pub from_dir: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct EncoderArgs {
    /// avg | max | pyramid | rank | recursive-rank | hrp
    #[arg(long, default_value = "hrp")]
    pub method: String,
    /// Window per layer; one value applies to every layer
    #[arg(long, default_value = "20")]
    pub window: String,
    /// Stride per layer; one value applies to every layer
    #[arg(long, default_value = "1")]
    pub stride: String,
    /// Hierarchy depth
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    /// Map per layer: ser | ssr | relu | l2norm | identity [default: ser
    /// for encoders, identity for the learned transforms]
    #[arg(long)]
    pub map: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    pub svr_c: f64,
    #[arg(long, default_value_t = 0.1)]
    pub svr_eps: f64,
    /// Stopping tolerance on the solver's gradient norm
    #[arg(long, default_value_t = 1e-8)]
    pub svr_tol: f64,
    #[arg(long, default_value_t = 200)]
    pub svr_max_iter: usize,
    /// Replace frames by their running mean before encoding
    #[arg(long)]
    pub smooth_tvm: bool,
    /// L2-normalize every frame before encoding
    #[arg(long)]
    pub l2norm: bool,
    /// Pooling inside the temporal pyramid: avg | max
    #[arg(long, default_value = "avg")]
    pub pyramid_base: String,
}

#[derive(Args)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Output file [default: stdout]
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Write bit-exact little-endian binary instead of CSV
    #[arg(long)]
    pub binary: bool,
    #[command(flatten)]
    pub encoder: EncoderArgs,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Model file to write
    #[arg(long, short)]
    pub output: PathBuf,
    /// linear | discriminative | end2end
    #[arg(long, default_value = "linear")]
    pub mode: String,
    /// cross-entropy | hinge
    #[arg(long, default_value = "cross-entropy")]
    pub loss: String,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// [default: 1e-3, or 1e-2 for end2end]
    #[arg(long)]
    pub lr_start: Option<f64>,
    /// [default: 1e-5, or 1e-4 for end2end]
    #[arg(long)]
    pub lr_end: Option<f64>,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0005)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Epochs of the linear classifier that initialises discriminative
    /// training
    #[arg(long, default_value_t = 30)]
    pub pretrain_epochs: usize,
    /// Gradient of W in discriminative mode: full | diagonal
    #[arg(long, default_value = "full")]
    pub grad_mode: String,
    #[command(flatten)]
    pub encoder: EncoderArgs,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long, short)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Output file [default: stdout]
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long, short)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Print a machine-readable key=value block
    #[arg(long)]
    pub kv: bool,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// svr | theta | inputs | W | pipeline | all; repeatable
    #[arg(long, default_value = "all")]
    pub suite: Vec<String>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct SynthArgs {
    /// order-classes | latent-ramp | noise
    #[arg(long, default_value = "order-classes")]
    pub kind: String,
    /// Number of classes
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Number of sequences
    #[arg(long, default_value_t = 150)]
    pub n: usize,
    /// Fixed sequence length (sets both bounds)
    #[arg(long, conflicts_with_all = ["min_len", "max_len"])]
    pub len: Option<usize>,
    #[arg(long, default_value_t = 40)]
    pub min_len: usize,
    #[arg(long, default_value_t = 40)]
    pub max_len: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file [default: stdout]
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 100)]
    pub len: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Sequences per method
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    /// Methods to time; repeatable [default: all]
    #[arg(long)]
    pub method: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_jobs(cli.jobs) {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_INPUT);
    }
    let result = match cli.command {
        Command::Encode(a) => commands::encode(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Synth(a) => commands::synth(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn configure_jobs(flag: Option<usize>) -> anyhow::Result<()> {
    let jobs = match flag {
        Some(n) => Some(n),
        None => match std::env::var("RANKPOOL_JOBS") {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| anyhow::anyhow!("RANKPOOL_JOBS must be a positive integer, got `{v}`"))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = jobs {
        anyhow::ensure!(n >= 1, "--jobs must be >= 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

/// Numerical failures exit 3; everything else is an input problem.
fn exit_code_for(e: &anyhow::Error) -> u8 {
    let numeric = e
        .chain()
        .filter_map(|c| c.downcast_ref::<rankpool_core::Error>())
        .any(|c| c.is_numeric());
    if numeric {
        EXIT_NUMERIC
    } else {
        EXIT_INPUT
    }
}
