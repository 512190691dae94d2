//! Command-line front end: `split`, `preprocess`, `train`, `eval`, `predict`,
//! `report`, plus the hidden `synth` generator.
//!
//! Progress goes to standard error; every artifact goes to a named file.
//! Exit status is 0 on success, 2 for usage errors (including missing input
//! paths), and 1 when the data or the pipeline fails.

use std::error::Error;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use log::{info, LevelFilter};

use crate::data::{
    label_stats, read_corpus, transform_column, write_corpus, Delimiter, stratified_split, write_split, SplitBundle, SplitRatios,
};
use crate::metrics::{
    evaluate, misclassification_report, render_table, write_misclassified, EvalOptions, F1Mode,
    MetricsReport, SupportSource,
};
use crate::strategies::{
    load_bundle, predict, save_bundle, train, write_predictions, StrategyConfig,
};
use crate::synth::{synthetic_corpus, SynthConfig};
use crate::textprep::clean_text;

#[derive(Debug, Parser)]
#[command(name = "hostility", version, about = "Hostility detection for Devanagari-script posts")]
pub struct RunConfig {
    /// More progress output on stderr (repeat for debug detail).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,

    /// Only report errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stratified train/validation/test split with a JSON manifest.
    Split(SplitArgs),
    /// Clean the `text` column, leaving other columns untouched.
    Preprocess(PreprocessArgs),
    /// Train a strategy on `DIR/train.*` with `DIR/validation.*` for selection.
    Train(TrainArgs),
    /// Score a bundle against a labeled file.
    Eval(EvalArgs),
    /// Write per-post probabilities and thresholded labels.
    Predict(PredictArgs),
    /// Render report JSON files as a results table.
    Report(ReportArgs),
    /// Generate the keyword-rule synthetic corpus.
    #[command(hide = true)]
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.7,0.1,0.2")]
    pub ratios: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON file with the training configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory holding `train` and `validation` files from `split`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the configuration file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum F1ModeArg {
    Weighted,
    Positive,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Optional TSV of misclassified posts.
    #[arg(long)]
    pub misclassified: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub limit: usize,
    /// Defaults to the threshold stored with the bundle.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum, default_value = "weighted")]
    pub f1_mode: F1ModeArg,
    /// Weight the fine-grained score by this corpus's positive counts instead
    /// of the evaluated subset's.
    #[arg(long)]
    pub supports_from: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report JSON files written by `eval`; rows are named by file stem.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Markdown output file; printed to stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub posts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Failed(Box<dyn Error + Send + Sync>),
}

impl<E: Error + Send + Sync + 'static> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Failed(Box::new(e))
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn existing(flag: &str, path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{flag}: `{}` does not exist", path.display())))
    }
}

/// Finds `DIR/<name>.csv` or `DIR/<name>.tsv`.
fn split_file(flag: &str, dir: &Path, name: &str) -> CliResult<PathBuf> {
    ["csv", "tsv"]
        .iter()
        .map(|ext| dir.join(format!("{name}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| CliError::Usage(format!("{flag}: no {name}.csv or {name}.tsv in `{}`", dir.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match RunConfig::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => LevelFilter::Error,
        (false, 0) => LevelFilter::Info,
        (false, 1) => LevelFilter::Debug,
        _ => LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();

    let result = match cli.command {
        Command::Split(a) => cmd_split(a),
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Report(a) => cmd_report(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Failed(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn cmd_split(a: SplitArgs) -> CliResult {
    existing("--input", &a.input)?;
    let ratios = SplitRatios::parse(&a.ratios).map_err(|e| CliError::Usage(format!("--ratios: {e}")))?;
    let corpus = read_corpus(&a.input)?;
    let bundle: SplitBundle = stratified_split(&corpus, ratios, a.seed)?;
    for w in &bundle.warnings {
        log::warn!("{w}");
    }
    let ext = match Delimiter::for_path(&a.input) {
        Delimiter::Tab => "tsv",
        Delimiter::Comma => "csv",
    };
    write_split(&a.out, &bundle, ext)?;
    let [tr, va, te] = bundle.parts().map(|c| c.len());
    info!("split {} posts into {tr}/{va}/{te} under {}", corpus.len(), a.out.display());
    Ok(())
}

fn cmd_preprocess(a: PreprocessArgs) -> CliResult {
    existing("--input", &a.input)?;
    if same_file(&a.input, &a.output) {
        return Err(CliError::Usage("--output must differ from --input".into()));
    }
    let n = transform_column(&a.input, &a.output, "text", |t| clean_text(t).into_string())?;
    info!("cleaned {n} rows into {}", a.output.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult {
    existing("--config", &a.config)?;
    existing("--data", &a.data)?;
    let train_path = split_file("--data", &a.data, "train")?;
    let val_path = split_file("--data", &a.data, "validation")?;
    let mut config: StrategyConfig = serde_json::from_slice(&fs::read(&a.config)?)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let splits = SplitBundle {
        train: read_corpus(&train_path)?,
        validation: read_corpus(&val_path)?,
        test: Default::default(),
        seed: config.seed,
        ratios: SplitRatios::DEFAULT,
        warnings: Vec::new(),
    };
    let bundle = train(&config, &splits)?;
    save_bundle(&bundle, &a.out)?;
    info!("saved {} bundle to {}", bundle.strategy, a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    existing("--bundle", &a.bundle)?;
    existing("--data", &a.data)?;
    if let Some(p) = &a.supports_from {
        existing("--supports-from", p)?;
    }
    let bundle = load_bundle(&a.bundle)?;
    let gold = read_corpus(&a.data)?;
    let threshold = a.threshold.unwrap_or(bundle.config.threshold);
    let predictions = predict(&bundle, &gold, threshold)?;
    let supports = match &a.supports_from {
        Some(p) => SupportSource::Corpus(label_stats(&read_corpus(p)?)),
        None => SupportSource::EvaluationSubset,
    };
    let options = EvalOptions {
        threshold,
        f1_mode: match a.f1_mode {
            F1ModeArg::Weighted => F1Mode::Weighted,
            F1ModeArg::Positive => F1Mode::Positive,
        },
        supports,
    };
    let report = evaluate(&predictions, &gold, &options)?;
    write_json(&a.report, &report)?;
    info!(
        "hostile {:.4}, weighted fine-grained {:.4}",
        report.hostile_f1, report.weighted_fine_grained
    );
    if let Some(path) = &a.misclassified {
        let rows = misclassification_report(&predictions, &gold, a.limit)?;
        write_misclassified(BufWriter::new(fs::File::create(path)?), &rows)?;
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> CliResult {
    existing("--bundle", &a.bundle)?;
    existing("--data", &a.data)?;
    let bundle = load_bundle(&a.bundle)?;
    let posts = read_corpus(&a.data)?;
    let predictions = predict(&bundle, &posts, a.threshold.unwrap_or(bundle.config.threshold))?;
    let out = BufWriter::new(fs::File::create(&a.out)?);
    write_predictions(out, Delimiter::for_path(&a.out).byte(), &predictions)?;
    info!("wrote {} predictions", predictions.predictions.len());
    Ok(())
}

fn cmd_report(a: ReportArgs) -> CliResult {
    let mut rows = Vec::new();
    for path in &a.reports {
        existing("REPORTS", path)?;
        let report: MetricsReport = serde_json::from_slice(&fs::read(path)?)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        rows.push((name, report));
    }
    let table = render_table(&rows);
    match &a.output {
        Some(p) => fs::write(p, table)?,
        None => print!("{table}"),
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CliResult {
    let corpus = synthetic_corpus(&SynthConfig {
        posts: a.posts,
        seed: a.seed,
        ..SynthConfig::default()
    });
    write_corpus(&a.out, &corpus)?;
    info!("wrote {} synthetic posts to {}", corpus.len(), a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["hostility", "frobnicate"]), 2);
        assert_eq!(run(["hostility", "split", "--ratios", "0.7,0.1,0.2"]), 2);
        assert_eq!(run(["hostility", "split", "--input", "/no/such/file.csv", "--out", "x"]), 2);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(["hostility", "--help"]), 0);
    }
}
