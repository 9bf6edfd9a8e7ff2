//! `relent`: relation extraction via textual entailment, from the command line.
//!
//! Exit codes: 0 success, 1 operational error, 2 usage error.

mod backend_uri;
mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use backend_uri::BackendUri;

#[derive(Parser, Debug)]
#[command(name = "relent", version, about = "Zero- and few-shot relation extraction with entailment models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Predict a relation for every example of a dataset.
    Classify(ClassifyArgs),
    /// Pick the no-relation threshold on development data.
    Tune(TuneArgs),
    /// Score predictions against gold labels.
    Eval(EvalArgs),
    /// Draw a stratified sample of a dataset.
    Split(SplitArgs),
    /// Compile a labeled dataset into NLI fine-tuning pairs.
    Pairs(PairsArgs),
    /// Label unlabeled data with the engine's predictions.
    Silver(SilverArgs),
    /// Run the HTTP service used by the template workbench.
    Serve(ServeArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct SchemaArg {
    /// Schema file; the bundled TACRED schema when omitted.
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct BackendArgs {
    /// fixture:<path>, lexical: or remote:<address>. The address of a remote
    /// backend can be overridden with RELENT_REMOTE_ADDR.
    #[arg(long, env = "RELENT_BACKEND", default_value = "lexical:")]
    #[serde(serialize_with = "display")]
    backend: BackendUri,
    /// Fail on fixture misses instead of answering (1/3, 1/3, 1/3).
    #[arg(long)]
    strict_fixture: bool,
    /// Pairs per backend call.
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    batch_size: u64,
    /// Remote request timeout in seconds.
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
    /// Remote chunks in flight at once.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    concurrency: u64,
}

fn display<T: std::fmt::Display, S: serde::Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum NorelModeArg {
    Threshold,
    Template,
}

#[derive(Args, Debug, Clone, Serialize)]
struct InferenceArgs {
    /// Minimum score for a positive prediction (threshold mode).
    #[arg(long, default_value_t = relent::inference::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = NorelModeArg::Threshold)]
    norel_mode: NorelModeArg,
    /// Threads used for scoring; 1 keeps runs single-threaded.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
}

#[derive(Args, Debug, Serialize)]
struct ClassifyArgs {
    #[command(flatten)]
    schema: SchemaArg,
    /// Dataset in TACRED format.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    inference: InferenceArgs,
    /// Predictions file (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Include every admitted relation's score in each record.
    #[arg(long)]
    per_relation: bool,
}

#[derive(Args, Debug, Serialize)]
struct TuneArgs {
    #[command(flatten)]
    schema: SchemaArg,
    /// Labeled development data in TACRED format.
    #[arg(long)]
    dev: PathBuf,
    /// Optional test data scored with each tuned threshold.
    #[arg(long)]
    test: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Threads used for scoring.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
    /// Tune on stratified samples of this fraction of the dev data.
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    /// Number of resampled runs (each uses seed + run index).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    runs: u64,
    #[arg(long)]
    seed: u64,
    /// Report (JSON).
    #[arg(long)]
    out: PathBuf,
    /// F1 as a function of the threshold, mean and standard error over runs (CSV).
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Spacing of the curve's threshold grid.
    #[arg(long, default_value_t = 0.01)]
    curve_step: f64,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    /// Gold data in TACRED format.
    #[arg(long)]
    gold: PathBuf,
    /// Predictions written by `classify`.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, default_value = relent::dataset::TACRED_NEGATIVE)]
    negative_label: String,
    /// Report (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Row-normalized confusion matrix (CSV).
    #[arg(long)]
    confusion: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    fraction: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the examples left out of the sample.
    #[arg(long)]
    rest: Option<PathBuf>,
    /// Drop gold labels from the sample (unlabeled pool for `silver`).
    #[arg(long)]
    strip_labels: bool,
}

#[derive(Args, Debug, Serialize)]
struct PairsArgs {
    #[command(flatten)]
    schema: SchemaArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Also emit pairs from the no-relation template.
    #[arg(long)]
    norel_template: bool,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
    /// Pairs file (JSON lines).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SilverArgs {
    #[command(flatten)]
    schema: SchemaArg,
    /// Unlabeled (or to-be-relabeled) data in TACRED format.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    inference: InferenceArgs,
    /// Silver-labeled data in TACRED format.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ServeArgs {
    /// Schema file; edits are saved back to it.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    inference: InferenceArgs,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help and version requests are successes.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(1)
        }
    }
}

/// The error chain, skipping causes already quoted by the message above them.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}
