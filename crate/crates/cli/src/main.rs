use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod manifest;
mod settings;

/// Reconfiguration of radial distribution grids with a physics-informed graph
/// network: data generation, exact oracle, training and evaluation.
#[derive(Parser, Debug)]
#[command(name = "graphyr", version)]
struct Cli {
    /// Flat `key = value` file mirroring the long flags; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw load scenarios for a grid.
    GenData(GenData),
    /// Solve every scenario of a split exactly.
    Oracle(OracleCmd),
    /// Train a committee and write one checkpoint per member.
    Train(TrainCmd),
    /// Evaluate a committee against the oracle.
    Eval(EvalCmd),
    /// Merge evaluation reports into one comparison table.
    Report(ReportCmd),
}

#[derive(Args, Debug)]
pub struct GenData {
    /// Grid file, or a shipped grid name (t5, t5_variant, bw33).
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Half-width of the multiplicative load band.
    #[arg(long)]
    pub band: Option<f64>,
    /// PV capacity as a fraction of peak load.
    #[arg(long)]
    pub pv: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct OracleCmd {
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// all, train, validation or test.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainCmd {
    /// Repeat for multi-grid training; pair each with a --dataset.
    #[arg(long)]
    pub grid: Vec<String>,
    #[arg(long)]
    pub dataset: Vec<PathBuf>,
    /// Oracle files, one per grid, for semi- and supervised modes.
    #[arg(long)]
    pub oracle: Vec<PathBuf>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub committee: Option<usize>,
    /// Seed of the first member; members use consecutive seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub validate_every: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub line_hidden: Option<usize>,
    #[arg(long)]
    pub switch_hidden: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub insi_tau: Option<f64>,
    #[arg(long)]
    pub insi_mu: Option<f64>,
    /// phyr or insi.
    #[arg(long)]
    pub rounding: Option<String>,
    /// unsupervised, semi or supervised.
    #[arg(long)]
    pub supervision: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalCmd {
    /// Directory with `*.ckpt` files from `train`.
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Oracle file; missing scenarios are solved on the fly.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Switch index held open; repeatable.
    #[arg(long)]
    pub force_open: Vec<usize>,
    /// Switch index held closed; repeatable.
    #[arg(long)]
    pub force_closed: Vec<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportCmd {
    /// Evaluation report CSVs.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn exit_code(e: &graphyr::Error) -> u8 {
    use graphyr::Error::*;
    match e {
        Parse { .. } | Validation(_) | Shape(_) | MissingTarget(_) | Checkpoint(_) => 2,
        Infeasible(_) => 3,
        Divergence(_) => 4,
        IterationLimit(_) | Io(_) | Csv(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = settings::Settings::load(cli.config.as_deref()).and_then(|s| match cli.command {
        Command::GenData(a) => commands::gen_data(a, s),
        Command::Oracle(a) => commands::oracle(a, s),
        Command::Train(a) => commands::train(a, s),
        Command::Eval(a) => commands::eval(a, s),
        Command::Report(a) => commands::report(a, s),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
