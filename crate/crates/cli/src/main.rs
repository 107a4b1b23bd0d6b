//! `fairdet` command-line tool.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 training aborted
//! on a non-finite loss, 4 a verification property failed.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fairdet::data::{self, GeneratorConfig, Grouping};
use fairdet::model::{Checkpoint, ModelParams};
use fairdet::trainer::{self, Evaluation, SweepMode, TrainConfig, TrainError, DEFAULT_GRID};
use fairdet::verify;

const SPLIT_FRACTIONS: [f64; 3] = [0.6, 0.2, 0.2];

#[derive(Debug, Parser)]
#[command(
    name = "fairdet",
    version,
    about = "CVaR-based fair detector training and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic group-imbalanced dataset
    GenData(GenDataArgs),
    /// Train one model and write its checkpoint and log
    Train(TrainArgs),
    /// Sweep the alpha grid and select a point by the validation rule
    Sweep(SweepArgs),
    /// Evaluate a checkpoint on a dataset
    Eval(EvalArgs),
    /// Run the mathematical property checks
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Generator configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output CSV for the full dataset
    #[arg(long, required_unless_present = "split")]
    out: Option<PathBuf>,
    /// Also write a 60/20/20 split as train.csv, val.csv and test.csv
    #[arg(long, requires = "out_dir")]
    split: bool,
    /// Directory for the split files
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training set CSV
    #[arg(long)]
    train: PathBuf,
    /// Validation set CSV
    #[arg(long)]
    val: PathBuf,
    /// Training configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output model checkpoint (JSON)
    #[arg(long)]
    out_model: PathBuf,
    /// Output training log (JSON)
    #[arg(long)]
    out_log: PathBuf,
    /// Optional per-epoch CSV log for plotting
    #[arg(long)]
    log_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepModeArg {
    DagFdd,
    DawFdd,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Training set CSV
    #[arg(long)]
    train: PathBuf,
    /// Validation set CSV
    #[arg(long)]
    val: PathBuf,
    /// Base training configuration (JSON); its loss field is replaced per point
    #[arg(long)]
    config: PathBuf,
    /// Which loss to sweep
    #[arg(long, value_enum)]
    mode: SweepModeArg,
    /// Comma-separated alpha values (used for both alpha and alpha_g)
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_GRID.to_vec())]
    grid: Vec<f64>,
    /// Number of grid points trained concurrently
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,
    /// Output sweep result (JSON)
    #[arg(long)]
    out: PathBuf,
    /// Optional checkpoint for the selected point
    #[arg(long)]
    out_model: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Model checkpoint (JSON)
    #[arg(long)]
    model: PathBuf,
    /// Dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Grouping to report: "intersection" or "attrN" (repeatable)
    #[arg(long = "grouping", default_value = "intersection")]
    groupings: Vec<Grouping>,
    /// Output report (JSON)
    #[arg(long)]
    out: PathBuf,
    /// Optional per-grouping metrics CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Seed for the random instances
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug)]
enum Failure {
    Input(anyhow::Error),
    Abort(anyhow::Error),
    Verify(usize),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Abort(_) => 3,
            Failure::Verify(_) => 4,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::NonFiniteLoss { .. } => Failure::Abort(e.into()),
        other => Failure::Input(other.into()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Eval(a) => eval(a),
        Command::Verify(a) => run_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Input(e) | Failure::Abort(e) => eprintln!("error: {e:#}"),
                Failure::Verify(n) => eprintln!("error: {n} propert{} failed", if *n == 1 { "y" } else { "ies" }),
            }
            ExitCode::from(f.code())
        }
    }
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> anyhow::Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes every file through a temporary sibling and renames them only once
/// all contents have been produced.
fn write_all(files: &[(&Path, &[u8])]) -> anyhow::Result<()> {
    let mut staged = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("writing {}", path.display()))?;
        tmp.write_all(bytes)?;
        tmp.flush()?;
        staged.push((tmp, *path));
    }
    for (tmp, path) in staged {
        tmp.persist(path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn csv_bytes(ds: &data::Dataset) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    data::write_csv(ds, &mut buf)?;
    Ok(buf)
}

fn load_dataset(path: &Path) -> anyhow::Result<data::Dataset> {
    data::load_csv(path).with_context(|| format!("loading {}", path.display()))
}

fn load_train_config(path: &Path) -> anyhow::Result<TrainConfig> {
    let config = TrainConfig::from_json(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))?;
    config
        .validate()
        .with_context(|| format!("invalid config {}", path.display()))?;
    Ok(config)
}

fn gen_data(args: GenDataArgs) -> Result<(), Failure> {
    let config = GeneratorConfig::from_json(&read_text(&args.config)?)
        .with_context(|| format!("parsing {}", args.config.display()))?;
    let ds = data::generate(&config).map_err(anyhow::Error::from)?;
    let mut outputs: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    if let Some(out) = &args.out {
        outputs.push((out.clone(), csv_bytes(&ds)?));
    }
    if args.split {
        let dir = args
            .out_dir
            .as_ref()
            .ok_or_else(|| anyhow!("--split needs --out-dir"))?;
        let parts = data::split(&ds, SPLIT_FRACTIONS, config.seed).map_err(anyhow::Error::from)?;
        for (name, part) in [
            ("train.csv", &parts.train),
            ("val.csv", &parts.val),
            ("test.csv", &parts.test),
        ] {
            outputs.push((dir.join(name), csv_bytes(part)?));
        }
    }
    let files: Vec<(&Path, &[u8])> = outputs.iter().map(|(p, b)| (p.as_path(), b.as_slice())).collect();
    write_all(&files)?;
    println!("generated {} samples", ds.len());
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let config = load_train_config(&args.config)?;
    let train_set = load_dataset(&args.train)?;
    let val_set = load_dataset(&args.val)?;
    let log = trainer::train(&train_set, &val_set, &config).map_err(train_failure)?;
    let model = to_json(&log.final_params)?;
    let log_json = to_json(&log)?;
    let csv = log.epochs_csv();
    let mut files: Vec<(&Path, &[u8])> = vec![(&args.out_model, &model), (&args.out_log, &log_json)];
    if let Some(p) = &args.log_csv {
        files.push((p, csv.as_bytes()));
    }
    write_all(&files)?;
    if let Some(last) = log.epochs.last() {
        println!("trained {} epochs, final loss {:.6}", log.epochs.len(), last.train_loss);
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let config = load_train_config(&args.config)?;
    let train_set = load_dataset(&args.train)?;
    let val_set = load_dataset(&args.val)?;
    let mode = match args.mode {
        SweepModeArg::DagFdd => SweepMode::DagFdd,
        SweepModeArg::DawFdd => SweepMode::DawFdd,
    };
    let outcome =
        trainer::sweep(&train_set, &val_set, &config, mode, &args.grid, args.jobs as usize).map_err(train_failure)?;
    let result_json = to_json(&outcome.result)?;
    let model_json = match (&args.out_model, outcome.chosen_params()) {
        (Some(_), Some(p)) => Some(to_json(&Checkpoint::from(p))?),
        (Some(_), None) => return Err(Failure::Abort(anyhow!("every grid point failed; no model to write"))),
        _ => None,
    };
    let mut files: Vec<(&Path, &[u8])> = vec![(&args.out, &result_json)];
    if let (Some(p), Some(m)) = (&args.out_model, &model_json) {
        files.push((p, m));
    }
    write_all(&files)?;
    let r = &outcome.result;
    println!(
        "baseline val AUC {:.2}%, floor {:.2}%",
        100.0 * r.baseline_val_auc,
        100.0 * r.auc_floor
    );
    for (i, p) in r.points.iter().enumerate() {
        let marker = if Some(i) == r.chosen { "*" } else { " " };
        match (p.val_auc, p.val_f_fpr) {
            (Some(auc), Some(f)) => println!(
                "{marker} {:?}  AUC {:.2}%  F_FPR {:.2}%{}",
                p.loss,
                100.0 * auc,
                100.0 * f,
                if p.passes_filter { "" } else { "  (below floor)" }
            ),
            _ => println!("{marker} {:?}  failed: {}", p.loss, p.error.as_deref().unwrap_or("")),
        }
    }
    if r.filter_empty {
        println!("no point reached the AUC floor; selected the highest validation AUC");
    }
    Ok(())
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn eval_table(evaluation: &Evaluation) -> String {
    let mut head = String::new();
    let mut row = String::new();
    for g in &evaluation.groupings {
        let f = &g.report.fairness;
        for (name, v) in [("G_FPR", f.g_fpr), ("F_FPR", f.f_fpr), ("F_EO", f.f_eo)] {
            let _ = write!(head, "{:>20}", format!("{}:{name}", g.grouping));
            let _ = write!(row, "{:>20}", pct(v));
        }
    }
    let o = &evaluation.overall;
    for (name, v) in [("AUC", o.auc), ("FPR", o.fpr), ("TPR", o.tpr), ("ACC", o.acc)] {
        let _ = write!(head, "{name:>8}");
        let _ = write!(row, "{:>8}", pct(v));
    }
    format!("{head}\n{row}\n")
}

fn eval_csv(evaluation: &Evaluation) -> String {
    let mut out = String::from("grouping,metric,group,value\n");
    for g in &evaluation.groupings {
        for line in g.report.to_csv().lines().skip(1) {
            let _ = writeln!(out, "{},{line}", g.grouping);
        }
    }
    out
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let params = ModelParams::from_json(&read_text(&args.model)?)
        .with_context(|| format!("parsing {}", args.model.display()))?;
    let ds = load_dataset(&args.data)?;
    let evaluation = trainer::evaluate(&params, &ds, &args.groupings).map_err(train_failure)?;
    let json = to_json(&evaluation)?;
    let csv = eval_csv(&evaluation);
    let mut files: Vec<(&Path, &[u8])> = vec![(&args.out, &json)];
    if let Some(p) = &args.csv {
        files.push((p, csv.as_bytes()));
    }
    write_all(&files)?;
    print!("{}", eval_table(&evaluation));
    Ok(())
}

fn run_verify(args: VerifyArgs) -> Result<(), Failure> {
    let outcomes = verify::run_all(args.seed);
    let mut failed = 0;
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "pass" } else { "FAIL" }, o.name, o.detail);
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        Err(Failure::Verify(failed))
    } else {
        Ok(())
    }
}
