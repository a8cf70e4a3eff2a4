//! `copylab`: data generation, training, evaluation, head analysis, grokking
//! detection, sweeps and reports.

mod commands;
mod overrides;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "copylab", version, about = "Context-copying training lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a copy benchmark as JSONL.
    GenData(GenDataArgs),
    /// Train one run.
    Train(TrainArgs),
    /// Copy accuracy of a checkpoint on a benchmark file.
    EvalCopy(EvalCopyArgs),
    /// Induction-head scores for checkpoints.
    AnalyzeHeads(AnalyzeHeadsArgs),
    /// Plateau and accuracy-surge detection on a metrics file.
    DetectGrok(DetectGrokArgs),
    /// Run a one-axis sweep.
    Sweep(SweepArgs),
    /// Summarize a run or sweep directory.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    /// `paper`, `desk`, or the `copy_eval` table of a run config.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

/// Flags mirroring `RunConfig` fields. Each one replaces the field of the
/// same name after the config file is read.
#[derive(Args, Default)]
pub struct ConfigFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    /// Sets the model, corpus and benchmark vocabularies together.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Also sets the corpus document length to `ctx_len + 1`.
    #[arg(long)]
    pub ctx_len: Option<usize>,
    #[arg(long)]
    pub attn_dropout: Option<f64>,
    #[arg(long)]
    pub peak_lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<u64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub total_steps: Option<u64>,
    /// Any other field, as `section.field=value` in TOML syntax. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Run config (TOML). The desk defaults are used when absent.
    #[arg(long, conflicts_with = "manifest")]
    pub config: Option<PathBuf>,
    /// Re-run the resolved config stored in a run's manifest.json.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub flags: ConfigFlags,
    /// Replace an occupied output directory.
    #[arg(long)]
    pub force: bool,
    /// Continue from a checkpoint written by the same config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this step.
    #[arg(long)]
    pub stop_at: Option<u64>,
    /// Stop once copy accuracy reaches this value.
    #[arg(long)]
    pub stop_when_acc: Option<f64>,
    /// Print the resolved config and exit.
    #[arg(long)]
    pub dry_run: bool,
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Args)]
pub struct EvalCopyArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub bench: PathBuf,
    /// CSV output; defaults to `<checkpoint>.copy.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AnalyzeHeadsArgs {
    /// Run directory; every checkpoint under it is scored.
    #[arg(long, conflicts_with_all = ["checkpoint", "planted"])]
    pub run: Option<PathBuf>,
    /// Individual checkpoint files.
    #[arg(long, num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    /// Score the hand-built induction circuit instead.
    #[arg(long)]
    pub planted: bool,
    /// Probes per checkpoint; the run's setting when absent.
    #[arg(long)]
    pub n_probes: Option<usize>,
    /// Probe half length; the run's setting when absent.
    #[arg(long)]
    pub half: Option<usize>,
    #[arg(long)]
    pub fold_norms: bool,
    /// CSV output; defaults to `heads_analysis.csv` in the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct DetectGrokArgs {
    /// metrics.jsonl written by `train`.
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    #[arg(long, default_value_t = 0.02)]
    pub plateau_eps: f64,
    #[arg(long, default_value_t = 0.1)]
    pub acc_low: f64,
    #[arg(long, default_value_t = 0.5)]
    pub acc_high: f64,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct SweepArgs {
    /// Sweep spec (TOML).
    #[arg(long)]
    pub spec: PathBuf,
    /// Cells run at once, each in its own process.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub force: bool,
    /// Passed to every cell.
    #[arg(long)]
    pub stop_when_acc: Option<f64>,
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Args)]
pub struct ReportArgs {
    /// A run directory or a sweep directory.
    #[arg(long)]
    pub dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("copylab: argument parsing failed: {}", e.kind());
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::EvalCopy(a) => commands::eval_copy(a),
        Command::AnalyzeHeads(a) => commands::analyze_heads(a),
        Command::DetectGrok(a) => commands::detect_grok(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("copylab: {e:#}");
            ExitCode::FAILURE
        }
    }
}
