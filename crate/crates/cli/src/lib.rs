//! Subcommands behind the `rxfood` binary.
//!
//! Each command is a plain function so tests can drive it without spawning
//! a process; [`run`] adds argument parsing and exit-code mapping.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use rxfood::dualnet::{FusionMode, NetParams};
use rxfood::io::{dataset, netpbm, Checkpoint, RunConfig};
use rxfood::traineval::{self, Dataset, EpochLog, MetricReport, SampleMetrics, Split, TrainOutcome};
use rxfood::verify::{gradient_suite, GradCase, SUITE_SEEDS, THRESHOLD};
use rxfood::Tensor64;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train.log";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CSV_HEADER: &str = "mode,mae,fmeasure,maxf,auc";
pub const DEFAULT_PRED_SUFFIX: &str = ".pred.pgm";

#[derive(Debug, Parser)]
#[command(name = "rxfood", version, about = "Cross-scale RGB-X fusion: data, training, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset as PPM/PGM files plus a manifest.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model; writes checkpoint, log, and final test metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint, or saved predictions, on a dataset split.
    Eval {
        #[arg(long, required_unless_present = "pred_dir", conflicts_with = "pred_dir")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Directory of `<index><suffix>` PGM predictions for the split.
        #[arg(long)]
        pred_dir: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_PRED_SUFFIX)]
        pred_suffix: String,
        /// Row label when evaluating predictions.
        #[arg(long, default_value = "pred")]
        label: String,
        /// Also write the CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Predict a saliency map for one RGB/X pair.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        rgb: PathBuf,
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable component.
    Gradcheck {
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => bail!("unknown split `{s}` (expected train or test)"),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create directory {}", dir.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

/// Generates both splits from the config into `out`.
pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<(usize, usize)> {
    let (train, test) = cfg.train.datasets::<f64>();
    let t = &cfg.train;
    let header = [
        ("seed", t.seed.to_string()),
        ("image_size", t.net.image_size.to_string()),
        ("x_fraction", t.x_fraction.to_string()),
    ];
    dataset::write_dataset(out, &header, &[(Split::Train, &train), (Split::Test, &test)])?;
    Ok((train.len(), test.len()))
}

fn load_splits(cfg: &RunConfig) -> Result<(Dataset<f64>, Dataset<f64>)> {
    let Some(dir) = &cfg.data_dir else {
        return Ok(cfg.train.datasets());
    };
    let train = dataset::read_split(dir, Split::Train)?;
    let test = dataset::read_split(dir, Split::Test)?;
    let size = cfg.train.net.image_size;
    for s in train.samples.iter().chain(&test.samples) {
        if s.mask.shape() != [size, size] {
            bail!(
                "{}: samples are {:?}, config image_size is {size}",
                dir.display(),
                s.mask.shape()
            );
        }
    }
    Ok((train, test))
}

fn fmt_auc(auc: Option<f64>) -> String {
    auc.map_or_else(String::new, |a| format!("{a:.6}"))
}

pub fn csv_row(label: &str, r: &MetricReport) -> String {
    format!(
        "{label},{:.6},{:.6},{:.6},{}",
        r.mae,
        r.fmeasure,
        r.max_f,
        fmt_auc(r.auc)
    )
}

pub fn csv_table(rows: &[(String, MetricReport)]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for (label, r) in rows {
        s.push_str(&csv_row(label, r));
        s.push('\n');
    }
    s
}

pub fn text_table(rows: &[(String, MetricReport)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(4).max(4);
    let mut s = format!(
        "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}\n",
        "mode", "MAE", "F@0.5", "maxF", "AUC"
    );
    for (label, r) in rows {
        let auc = r.auc.map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
        let _ = writeln!(
            s,
            "{label:<width$}  {:>8.4}  {:>8.4}  {:>8.4}  {auc:>8}",
            r.mae, r.fmeasure, r.max_f
        );
    }
    s
}

fn log_line(e: &EpochLog) -> String {
    match &e.test {
        Some(r) => format!(
            "{},{},{},{},{},{}",
            e.epoch,
            e.mean_loss,
            r.mae,
            r.fmeasure,
            r.max_f,
            r.auc.map_or_else(String::new, |a| a.to_string())
        ),
        None => format!("{},{},,,,", e.epoch, e.mean_loss),
    }
}

pub struct TrainRun {
    pub out_dir: PathBuf,
    pub outcome: TrainOutcome<f64>,
}

/// Trains per the config, writing `checkpoint.bin`, `train.log`, and
/// `metrics.csv` into `out` (or the config's `out_dir`).
pub fn cmd_train(cfg: &RunConfig, out: Option<&Path>, progress: &mut dyn Write) -> Result<TrainRun> {
    let out_dir = out.map_or_else(|| cfg.out_dir.clone(), Path::to_path_buf);
    create_dir(&out_dir)?;
    let (train, test) = load_splits(cfg)?;
    let mut log = String::from("# config\n");
    log.push_str(&cfg.source);
    if !cfg.source.ends_with('\n') && !cfg.source.is_empty() {
        log.push('\n');
    }
    log.push_str("# epoch,loss,mae,fmeasure,maxf,auc\n");
    let outcome = traineval::train_on(&cfg.train, &train, &test, &mut |e| {
        log.push_str(&log_line(e));
        log.push('\n');
        let _ = match &e.test {
            Some(r) => writeln!(progress, "epoch {:>3}  loss {:.4}  maxF {:.4}", e.epoch, e.mean_loss, r.max_f),
            None => writeln!(progress, "epoch {:>3}  loss {:.4}", e.epoch, e.mean_loss),
        };
    })?;
    Checkpoint::from_params(&cfg.render(), &outcome.params).save(&out_dir.join(CHECKPOINT_FILE))?;
    write_file(&out_dir.join(LOG_FILE), log)?;
    if let Some(r) = outcome.final_report() {
        let rows = [(cfg.mode().to_string(), r.clone())];
        write_file(&out_dir.join(METRICS_FILE), csv_table(&rows))?;
    }
    Ok(TrainRun { out_dir, outcome })
}

/// Loads a checkpoint into a model shaped by its embedded config.
pub fn load_model(path: &Path) -> Result<(RunConfig, NetParams<Tensor64>)> {
    let ck = Checkpoint::load(path)?;
    let cfg = RunConfig::parse(&ck.config)
        .with_context(|| format!("config block of {}", path.display()))?;
    let mut params = NetParams::zeroed(&cfg.train.net, cfg.mode())?;
    ck.fill(&mut params)
        .with_context(|| format!("parameters of {}", path.display()))?;
    Ok((cfg, params))
}

pub fn eval_checkpoint(checkpoint: &Path, data: &Path, split: Split) -> Result<(FusionMode, MetricReport)> {
    let (cfg, params) = load_model(checkpoint)?;
    let ds = dataset::read_split::<f64>(data, split)?;
    let report = traineval::evaluate(&params, cfg.mode(), &ds)?;
    Ok((cfg.mode(), report))
}

pub fn eval_predictions(data: &Path, split: Split, pred_dir: &Path, suffix: &str) -> Result<MetricReport> {
    let ds = dataset::read_split::<f64>(data, split)?;
    if ds.is_empty() {
        bail!("{}: no {} samples", data.display(), split.name());
    }
    let mut per_sample = Vec::with_capacity(ds.len());
    let manifest = ds.samples.iter().enumerate();
    for (i, s) in manifest {
        let path = pred_dir.join(format!("{i}{suffix}"));
        let g: Tensor64 = netpbm::read_gray(&path)?;
        let pred = g.reshaped(s.mask.shape())?;
        per_sample.push(SampleMetrics::compute(&pred, &s.mask)?);
    }
    Ok(MetricReport::from_samples(per_sample)?)
}

pub fn cmd_infer(checkpoint: &Path, rgb: &Path, x: &Path, out: &Path) -> Result<Tensor64> {
    let (cfg, params) = load_model(checkpoint)?;
    let rgb: Tensor64 = netpbm::read_rgb(rgb)?;
    let x: Tensor64 = netpbm::read_gray(x)?;
    let pred = traineval::predict(&params, cfg.mode(), &rgb, &x)?;
    netpbm::write(out, &pred)?;
    Ok(pred)
}

pub fn cmd_gradcheck(seeds: &[u64]) -> Result<Vec<GradCase>> {
    Ok(gradient_suite(seeds)?)
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Gen { config, out: dir } => {
            let cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            let (a, b) = cmd_gen(&cfg, &dir)?;
            writeln!(out, "wrote {a} train and {b} test samples to {}", dir.display())?;
        }
        Command::Train { config, out: dir, quiet } => {
            let cfg = RunConfig::load(&config)?;
            let mut sink = std::io::sink();
            let progress: &mut dyn Write = if quiet { &mut sink } else { &mut *out };
            let run = cmd_train(&cfg, dir.as_deref(), progress)?;
            if let Some(r) = run.outcome.final_report() {
                write!(out, "{}", text_table(&[(cfg.mode().to_string(), r.clone())]))?;
            }
            writeln!(out, "checkpoint: {}", run.out_dir.join(CHECKPOINT_FILE).display())?;
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            pred_dir,
            pred_suffix,
            label,
            csv,
        } => {
            let split = parse_split(&split)?;
            let row = match (checkpoint, pred_dir) {
                (Some(ck), _) => {
                    let (mode, r) = eval_checkpoint(&ck, &data, split)?;
                    (mode.to_string(), r)
                }
                (None, Some(dir)) => (label, eval_predictions(&data, split, &dir, &pred_suffix)?),
                (None, None) => bail!("either --checkpoint or --pred-dir is required"),
            };
            let rows = [row];
            write!(out, "{}\n{}", text_table(&rows), csv_table(&rows))?;
            if let Some(path) = csv {
                write_file(&path, csv_table(&rows))?;
            }
        }
        Command::Infer { checkpoint, rgb, x, out: path } => {
            cmd_infer(&checkpoint, &rgb, &x, &path)?;
            writeln!(out, "wrote {}", path.display())?;
        }
        Command::Gradcheck { seeds } => {
            let seeds = seeds.unwrap_or_else(|| SUITE_SEEDS.to_vec());
            let cases = cmd_gradcheck(&seeds)?;
            let mut failed = 0;
            for c in &cases {
                let verdict = if c.passed() { "ok" } else { "FAIL" };
                failed += usize::from(!c.passed());
                writeln!(out, "{verdict:<4}  {:<16} seed {:<3} max rel err {:.3e}", c.name, c.seed, c.error)?;
            }
            writeln!(
                out,
                "{} of {} checks below {THRESHOLD:e}",
                cases.len() - failed,
                cases.len()
            )?;
            if failed > 0 {
                return Ok(EXIT_VERIFY);
            }
        }
    }
    Ok(EXIT_OK)
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code. Diagnostics go to `err`.
pub fn run<I, A>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_USAGE
        }
    }
}
