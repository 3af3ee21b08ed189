//! The `tinypeft` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or file
//! error, 3 numeric failure.

pub mod checkpoint;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tinypeft_core::data::{load_csv, make_synthetic, stratified_split, DEFAULT_FRACTIONS};
use tinypeft_core::eval::{compare_runs, evaluate, RunSpec};
use tinypeft_core::gradsuite::{run_suite, THRESHOLD};
use tinypeft_core::model::ClassifierModel;
use tinypeft_core::peft::{attach, count_trainable, freeze_base, merge_lora, Method};
use tinypeft_core::tensor::OpKind;
use tinypeft_core::{train, Dataset};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint};
pub use config::RunConfig;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "tinypeft", version, about = "Parameter-efficient fine-tuning of a small decoder-only classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print per-class counts of a labelled CSV.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Train the method named in the config and write a checkpoint.
    Train {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: bool,
        /// Also print wall-clock time (makes the output non-reproducible).
        #[arg(long)]
        timings: bool,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        ckpt: PathBuf,
        /// Which part of the seeded 80/10/10 split to score.
        #[arg(long, value_enum, default_value_t = SplitPart::All)]
        split: SplitPart,
        #[arg(long)]
        json: bool,
    },
    /// Fold LoRA adapters into the base weights.
    Merge {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score several methods on one shared split.
    Compare {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values = ["none", "adapter", "lora"])]
        methods: Vec<MethodArg>,
        #[arg(long)]
        json: bool,
        #[arg(long)]
        timings: bool,
    },
    /// Check every backward rule against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
        /// Corrupt one backward rule to confirm the check notices.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// CSV file with a `text,label` header.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generate N synthetic examples from the config seed instead.
    #[arg(long, value_name = "N")]
    synthetic: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitPart {
    All,
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    None,
    Lora,
    Adapter,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::None => Method::None,
            MethodArg::Lora => Method::Lora,
            MethodArg::Adapter => Method::Adapter,
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Normal output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Stats { data, json } => cmd_stats(&data, json, out),
        Command::Train {
            source,
            config,
            out: path,
            json,
            timings,
        } => cmd_train(&source, &config, &path, json, timings, out, err),
        Command::Eval {
            source,
            ckpt,
            split,
            json,
        } => cmd_eval(&source, &ckpt, split, json, out),
        Command::Merge { ckpt, out: path } => cmd_merge(&ckpt, &path, out),
        Command::Compare {
            source,
            config,
            methods,
            json,
            timings,
        } => cmd_compare(&source, &config, &methods, json, timings, out, err),
        Command::Gradcheck {
            seed,
            json,
            inject_fault,
        } => cmd_gradcheck(seed, json, inject_fault.as_deref(), out),
    }
    .map(|()| 0)
}

fn emit(out: &mut dyn Write, text: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{text}").map_err(|source| {
        CliError::Core(tinypeft_core::Error::Io {
            path: PathBuf::from("<stdout>"),
            source,
        })
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output serializes")
}

fn load_source(source: &Source, seed: u64) -> Result<Dataset> {
    match (&source.data, source.synthetic) {
        (Some(path), _) => Ok(load_csv(path)?),
        (None, Some(n)) => Ok(make_synthetic(n, seed)?),
        (None, None) => Err(CliError::Usage("one of --data or --synthetic is required".into())),
    }
}

#[derive(Serialize)]
struct StatsOutput<'a> {
    dataset: &'a str,
    total: usize,
    hate: usize,
    nothate: usize,
    hate_fraction: f64,
    nothate_fraction: f64,
}

fn cmd_stats(path: &Path, json: bool, out: &mut dyn Write) -> Result<()> {
    let ds = load_csv(path)?;
    let s = ds.stats();
    if json {
        return emit(
            out,
            to_json(&StatsOutput {
                dataset: &ds.name,
                total: ds.len(),
                hate: s.hate,
                nothate: s.nothate,
                hate_fraction: s.hate_fraction,
                nothate_fraction: s.nothate_fraction,
            }),
        );
    }
    emit(out, format!("dataset {} ({} examples)", ds.name, ds.len()))?;
    emit(out, format!("hate    {:>8}  {:>6.2}%", s.hate, 100.0 * s.hate_fraction))?;
    emit(out, format!("nothate {:>8}  {:>6.2}%", s.nothate, 100.0 * s.nothate_fraction))
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    dataset: &'a str,
    train_size: usize,
    report: &'a tinypeft_core::TrainReport,
    trainable_fraction: f64,
    checkpoint: &'a Path,
    config_hash: String,
}

fn cmd_train(
    source: &Source,
    config_path: &Path,
    ckpt_path: &Path,
    json: bool,
    timings: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    for w in config.warnings() {
        let _ = writeln!(err, "warning: {w}");
    }
    let ds = load_source(source, config.seed)?;
    let split = stratified_split(&ds, DEFAULT_FRACTIONS, config.seed)?;

    let start = Instant::now();
    let mut model = ClassifierModel::init(&config.model_config()?, config.seed)?;
    match config.method {
        Method::None => freeze_base(&mut model),
        m => attach(&mut model, &config.peft(m)?, config.seed)?,
    }
    let report = train(&mut model, &split.train, &config.train_config(config.method))?;
    save_checkpoint(&model, &config, ckpt_path)?;
    let seconds = start.elapsed().as_secs_f64();

    if json {
        return emit(
            out,
            to_json(&TrainOutput {
                dataset: &ds.name,
                train_size: split.train.len(),
                report: &report,
                trainable_fraction: report.params.fraction(),
                checkpoint: ckpt_path,
                config_hash: config.hash(),
            }),
        );
    }
    let epochs = report.epoch_losses.len();
    for (i, (loss, acc)) in report.epoch_losses.iter().zip(&report.epoch_accuracies).enumerate() {
        emit(out, format!("epoch {}/{epochs}  loss {loss:.6}  train_acc {acc:.4}", i + 1))?;
    }
    let p = &report.params;
    emit(
        out,
        format!(
            "method {}  train examples {}  steps {}  lr {}",
            report.method,
            split.train.len(),
            report.steps,
            report.learning_rate
        ),
    )?;
    emit(
        out,
        format!(
            "trainable {} of {} ({:.4}%; peft {}, head {})",
            p.trainable,
            p.total,
            100.0 * p.fraction(),
            p.peft,
            p.head
        ),
    )?;
    emit(out, format!("checkpoint {}", ckpt_path.display()))?;
    if timings {
        emit(out, format!("seconds {seconds:.2}"))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    dataset: &'a str,
    examples: usize,
    method: Method,
    metrics: &'a tinypeft_core::Metrics,
}

fn cmd_eval(source: &Source, ckpt: &Path, part: SplitPart, json: bool, out: &mut dyn Write) -> Result<()> {
    let (config, model) = load_checkpoint(ckpt)?;
    let ds = load_source(source, config.seed)?;
    let ds = match part {
        SplitPart::All => ds,
        part => {
            let split = stratified_split(&ds, DEFAULT_FRACTIONS, config.seed)?;
            match part {
                SplitPart::Train => split.train,
                SplitPart::Val => split.val,
                _ => split.test,
            }
        }
    };
    let metrics = evaluate(&model, &ds, config.train.max_seq_len)?;
    if json {
        return emit(
            out,
            to_json(&EvalOutput {
                dataset: &ds.name,
                examples: ds.len(),
                method: config.method,
                metrics: &metrics,
            }),
        );
    }
    emit(out, format!("dataset {} ({} examples), method {}", ds.name, ds.len(), config.method))?;
    emit(out, metrics)
}

fn cmd_merge(ckpt: &Path, dest: &Path, out: &mut dyn Write) -> Result<()> {
    let (config, mut model) = load_checkpoint(ckpt)?;
    if config.method != Method::Lora {
        return Err(CliError::Config(format!(
            "{} holds a {} checkpoint; only lora checkpoints can be merged",
            ckpt.display(),
            config.method
        )));
    }
    merge_lora(&mut model)?;
    let merged = RunConfig {
        lora: None,
        ..config.with_method(Method::None)
    };
    save_checkpoint(&model, &merged, dest)?;
    let count = count_trainable(&model);
    emit(out, format!("merged {} -> {} ({} parameters)", ckpt.display(), dest.display(), count.total))
}

#[allow(clippy::too_many_arguments)]
fn cmd_compare(
    source: &Source,
    config_path: &Path,
    methods: &[MethodArg],
    json: bool,
    timings: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    if config.method != Method::None {
        let _ = writeln!(err, "warning: compare ignores method {}", config.method);
    }
    let ds = load_source(source, config.seed)?;
    let model_config = config.model_config()?;
    let mut runs = Vec::with_capacity(methods.len());
    for &m in methods {
        let m = Method::from(m);
        if runs.iter().any(|r: &RunSpec| r.peft.method() == m) {
            return Err(CliError::Usage(format!("method {m} listed twice")));
        }
        runs.push(RunSpec {
            peft: config.peft(m)?,
            train: config.train_config(m),
            config_hash: config.with_method(m).hash(),
        });
    }
    let comparison = compare_runs(|| ClassifierModel::init(&model_config, config.seed), &ds, &runs)?;
    if json {
        emit(out, to_json(&comparison))
    } else {
        write!(out, "{}", comparison.render(timings)).map_err(|source| {
            CliError::Core(tinypeft_core::Error::Io {
                path: PathBuf::from("<stdout>"),
                source,
            })
        })
    }
}

#[derive(Serialize)]
struct GradcheckOutput<'a> {
    seed: u64,
    threshold: f64,
    passed: bool,
    checks: &'a [tinypeft_core::gradsuite::CheckResult],
}

fn cmd_gradcheck(seed: u64, json: bool, fault: Option<&str>, out: &mut dyn Write) -> Result<()> {
    let fault = match fault {
        None => None,
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| {
            let known: Vec<&str> = OpKind::DIFFERENTIABLE.iter().map(|k| k.name()).collect();
            CliError::Usage(format!("unknown op {name:?}; expected one of {}", known.join(", ")))
        })?),
    };
    let results = run_suite(seed, fault)?;
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if json {
        emit(
            out,
            to_json(&GradcheckOutput {
                seed,
                threshold: THRESHOLD,
                passed: failed.is_empty(),
                checks: &results,
            }),
        )?;
    } else {
        for r in &results {
            let verdict = if r.passed { "ok" } else { "FAIL" };
            emit(out, format!("{:<18} max_rel_error {:.3e}  {verdict}", r.name, r.max_rel_error))?;
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradCheck(format!(
            "relative error above {THRESHOLD:e} in: {}",
            failed.join(", ")
        )))
    }
}
