//! `crep`: training runs, theory checks and gradient checks.

mod artifacts;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "crep", version, about = "Constrained-representation actor-critic toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a toy environment, one run per seed.
    Train(TrainArgs),
    /// Run the finite-MDP theorem checks.
    Theory(TheoryArgs),
    /// Finite-difference audit of the tape primitives and networks.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// First seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of consecutive seeds to run.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long)]
    pub smr: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Width of the critic and of both actor layers.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long, value_parser = ["tanh", "sigmoid", "softmax", "layernorm", "none"])]
    pub activation: Option<String>,
    /// Same as `--activation none`.
    #[arg(long)]
    pub no_tanh: bool,
    #[arg(long)]
    pub no_ln: bool,
    #[arg(long)]
    pub no_skip: bool,
    /// Drop the entropy term from the critic target.
    #[arg(long)]
    pub no_ent: bool,
    /// Extra `key=value` overrides for fields without a dedicated flag.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Which {
    All,
    T1,
    T2,
    T3,
    T4,
    T5,
}

#[derive(Args)]
pub struct TheoryArgs {
    #[arg(value_enum, default_value = "all")]
    pub which: Which,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds per check.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Iteration or sample budget of the stochastic checks.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value = "theory-reports")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum CorruptOp {
    Tanh,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub threshold: f64,
    /// Random points per primitive.
    #[arg(long, default_value_t = 100)]
    pub points: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupt a backward rule, to see the suite fail.
    #[arg(long, hide = true)]
    pub corrupt: Option<CorruptOp>,
    /// Also write the report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Train(a) => run::train(a),
        Command::Theory(a) => run::theory(a),
        Command::Gradcheck(a) => run::gradcheck(a),
    };
    ExitCode::from(code)
}
