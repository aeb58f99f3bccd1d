//! `vssdet` command-line interface.

mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "vssdet", version, about = "Lesion detection with sensitivity-specificity losses on synthetic longitudinal phantoms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a phantom corpus and its manifest.
    Phantom(PhantomArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Evaluate a model on a corpus.
    Eval(EvalArgs),
    /// Combine a sensitive and a specific model into a tagged union.
    Ensemble(EnsembleArgs),
    /// ROC or precision-recall curves as CSV and PNG.
    Curves(CurvesArgs),
}

#[derive(Args, Debug)]
pub struct PhantomArgs {
    /// Phantom spec JSON; missing fields take defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub n_patients: usize,
    /// Overrides the seed in the spec.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossArg {
    Bce,
    Jvss,
    Sse,
    Dice,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PriorArg {
    None,
    Channel,
    Path,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModelArg {
    /// Five layers, trains in minutes on one core.
    Desk,
    /// Nine layers, 37³ training and 45³ inference segments.
    Full,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TimepointArg {
    All,
    WithPrior,
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be positive".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(format!("{e}")),
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = LossArg::Jvss)]
    pub loss: LossArg,
    /// Sensitivity weight for jvss and sse.
    #[arg(long, default_value = "0.995", value_parser = unit_interval)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = PriorArg::None)]
    pub prior_mode: PriorArg,
    #[arg(long, value_enum, default_value_t = ModelArg::Desk)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 200, value_parser = positive)]
    pub segments_per_epoch: usize,
    #[arg(long, default_value_t = 16, value_parser = positive)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    pub learning_rate: f64,
    /// Timepoints training segments are drawn from.
    #[arg(long, value_enum, default_value_t = TimepointArg::All)]
    pub timepoints: TimepointArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path; the log goes next to it as `<name>.log.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("model_source").required(true).args(["ckpt", "baseline"]))]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Reference-mask oracle or all-zero predictor instead of a checkpoint.
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineArg>,
    #[arg(long, default_value = "0.5", value_parser = unit_interval)]
    pub threshold: f64,
    #[arg(long, default_value_t = 16, value_parser = positive)]
    pub tile_size: usize,
    #[arg(long, value_enum, default_value_t = TimepointArg::All)]
    pub timepoints: TimepointArg,
    /// Report JSON; table CSVs are written beside it.
    #[arg(long)]
    pub report: PathBuf,
    /// Row label in the CSV tables.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BaselineArg {
    Oracle,
    Zero,
}

#[derive(Args, Debug)]
pub struct EnsembleArgs {
    #[arg(long)]
    pub ckpt_sens: PathBuf,
    #[arg(long)]
    pub ckpt_spec: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "0.5", value_parser = unit_interval)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = TimepointArg::All)]
    pub timepoints: TimepointArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CurveMode {
    Roc,
    Pr,
}

#[derive(Args, Debug)]
pub struct CurvesArgs {
    #[arg(long, value_enum)]
    pub mode: CurveMode,
    /// Output prefix; writes `<prefix>.csv`, `<prefix>.png` and `<prefix>.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// roc: corpus to sweep.
    #[arg(long, required_if_eq("mode", "roc"))]
    pub manifest: Option<PathBuf>,
    /// roc: checkpoint to sweep.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// roc: baseline predictor instead of a checkpoint.
    #[arg(long, value_enum, conflicts_with = "ckpt")]
    pub baseline: Option<BaselineArg>,
    #[arg(long, default_value_t = 16, value_parser = positive)]
    pub tile_size: usize,
    /// roc: number of threshold steps between 1 and 0.
    #[arg(long, default_value_t = 20, value_parser = positive)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = TimepointArg::All)]
    pub timepoints: TimepointArg,
    /// pr: evaluation reports, one point per model.
    #[arg(long, num_args = 1.., required_if_eq("mode", "pr"))]
    pub reports: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(commands::EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Phantom(a) => commands::phantom(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ensemble(a) => commands::ensemble(a),
        Command::Curves(a) => commands::curves(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
