//! Command-line front end for the AFRL desk-scale experiments.

use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use afrl::metrics::{evaluate, per_class_prf, PredictionRecord};
use afrl::runner::{
    evaluate_policy, matched_student, prepare_data, predictions, reduced_student, run_ablation, run_distill,
    run_kl_lab, run_training, standard_matrix, with_pool, ExperimentConfig, RunError, TrainOutcome,
};
use afrl::world::gen_dataset;
use afrl::{ConfigError, Policy};

#[derive(Parser)]
#[command(name = "afrl", version, about = "Desk-scale AFRL relevance training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long)]
    deterministic: bool,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset as JSONL.
    GenData(Common),
    /// Cold-start SFT followed by the three-stage hybrid loop.
    Train(Common),
    /// Score predictions (JSONL of prediction records) or a saved policy.
    Eval {
        #[command(flatten)]
        common: Common,
        /// JSONL file of prediction records.
        #[arg(long, conflicts_with = "policy")]
        predictions: Option<PathBuf>,
        /// Saved policy JSON, scored on the held-out split of the config.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Run an ablation matrix (array of configs, or one base config expanded to the standard matrix).
    Ablate(Common),
    /// Distill a teacher into a reduced and a capacity-matched student.
    Distill {
        #[command(flatten)]
        common: Common,
        /// Saved teacher policy; falls back to `distill.teacher_path`, then to training one.
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Forward versus reverse KL fits on the bimodal demo.
    KlLab(Common),
}

#[derive(Debug)]
enum CliError {
    Run(RunError),
    Abort(String),
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        Self::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Run(RunError::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Run(RunError::Json(e))
    }
}

fn config_error(field: &'static str, msg: impl Into<String>) -> CliError {
    CliError::Run(RunError::Config(ConfigError::new(field, msg)))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| config_error("--config", format!("{}: {e}", path.display())))
}

fn load_config(c: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::from_json(&read_text(&c.config)?).map_err(RunError::Config)?;
    apply_overrides(&mut cfg, c);
    Ok(cfg)
}

fn apply_overrides(cfg: &mut ExperimentConfig, c: &Common) {
    if c.deterministic {
        cfg.deterministic = true;
    }
    if let Some(out) = &c.out {
        cfg.output_dir = Some(out.clone());
    }
}

fn out_dir(cfg: &ExperimentConfig) -> Result<Option<PathBuf>, CliError> {
    match &cfg.output_dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            Ok(Some(d.clone()))
        }
        None => Ok(None),
    }
}

fn emit(dir: Option<&Path>, name: &str, body: &str) -> Result<(), CliError> {
    match dir {
        Some(d) => std::fs::write(d.join(name), body)?,
        None => print!("{body}"),
    }
    Ok(())
}

fn check_abort(out: &TrainOutcome) -> Result<(), CliError> {
    match &out.abort {
        Some(a) => Err(CliError::Abort(format!(
            "numeric abort at step {}: {} (last good parameters kept)",
            a.step, a.reason
        ))),
        None => Ok(()),
    }
}

fn gen_data(c: &Common) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    let ds = with_pool(cfg.deterministic, || gen_dataset(cfg.n_instances, &cfg.world)).map_err(RunError::from)?;
    match out_dir(&cfg)? {
        Some(d) => {
            let f = std::fs::File::create(d.join("data.jsonl"))?;
            ds.write_jsonl(std::io::BufWriter::new(f)).map_err(RunError::from)?;
            eprintln!("wrote {} instances to {}", ds.len(), d.join("data.jsonl").display());
        }
        None => ds.write_jsonl(std::io::stdout().lock()).map_err(RunError::from)?,
    }
    Ok(())
}

fn train(c: &Common) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    out_dir(&cfg)?;
    let out = run_training(&cfg)?;
    if cfg.output_dir.is_none() {
        print!("{}", out.log.to_csv());
    }
    if let Some(last) = out.log.last() {
        eprintln!(
            "final step {}: 5-ACC {:.4} pair {:.4} entropy {:.4}",
            last.step, last.five_acc, last.pair_acc, last.entropy
        );
    }
    check_abort(&out)
}

fn eval(c: &Common, preds: Option<&Path>, policy: Option<&Path>) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    let dir = out_dir(&cfg)?;
    let records: Vec<PredictionRecord> = match (preds, policy) {
        (Some(p), _) => {
            let f = BufReader::new(std::fs::File::open(p)?);
            serde_json::Deserializer::from_reader(f)
                .into_iter::<PredictionRecord>()
                .collect::<Result<_, _>>()?
        }
        (None, Some(p)) => {
            let params = Policy::from_json(&std::fs::read_to_string(p)?).map_err(RunError::from)?;
            let data = prepare_data(&cfg)?;
            let snap = evaluate_policy(&params, &data.heldout)?;
            eprintln!("{}", serde_json::to_string(&snap)?);
            predictions(&params, &data.heldout).map_err(RunError::from)?
        }
        (None, None) => return Err(config_error("eval", "one of --predictions or --policy is required")),
    };
    let summary = evaluate(&records).map_err(RunError::from)?;
    emit(dir.as_deref(), "metrics.json", &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    if let Some(d) = &dir {
        let prf = per_class_prf(&records).map_err(RunError::from)?;
        std::fs::write(d.join("per_class.csv"), prf.to_csv())?;
    }
    Ok(())
}

fn ablate(c: &Common) -> Result<(), CliError> {
    let text = read_text(&c.config)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| config_error("config", e.to_string()))?;
    let mut cfgs = match value {
        serde_json::Value::Array(items) => items
            .into_iter()
            .map(|v| ExperimentConfig::from_json(&v.to_string()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(RunError::Config)?,
        other => standard_matrix(&ExperimentConfig::from_json(&other.to_string()).map_err(RunError::Config)?),
    };
    for cfg in &mut cfgs {
        apply_overrides(cfg, c);
    }
    let dir = out_dir(&cfgs[0])?;
    for cfg in &mut cfgs {
        cfg.output_dir = None;
    }
    let report = run_ablation(&cfgs)?;
    emit(dir.as_deref(), "summary.csv", &report.summary_csv())?;
    if let Some(d) = &dir {
        std::fs::write(d.join("side_by_side.csv"), report.side_by_side_csv())?;
        std::fs::write(d.join("efficiency.json"), serde_json::to_string_pretty(&report.efficiency)? + "\n")?;
        for run in &report.runs {
            let sub = d.join(run.label.replace('/', "_"));
            std::fs::create_dir_all(&sub)?;
            run.outcome.log.save(&sub)?;
        }
    }
    for run in &report.runs {
        check_abort(&run.outcome)?;
    }
    Ok(())
}

fn distill(c: &Common, teacher: Option<&Path>) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    let dir = out_dir(&cfg)?;
    let teacher_path = teacher.map(Path::to_path_buf).or_else(|| cfg.distill.teacher_path.clone());
    let teacher = match teacher_path {
        Some(p) => Policy::from_json(&std::fs::read_to_string(p)?).map_err(RunError::from)?,
        None => {
            let mut tcfg = cfg.clone();
            tcfg.output_dir = dir.as_ref().map(|d| d.join("teacher"));
            let out = run_training(&tcfg)?;
            check_abort(&out)?;
            out.params
        }
    };
    let reports = with_pool(cfg.deterministic, || -> Result<_, RunError> {
        let data = prepare_data(&cfg)?;
        let (reduced, r) = run_distill(&teacher, reduced_student(&teacher, &cfg.distill, cfg.seed), &data, &cfg.distill, cfg.seed)?;
        let (_, m) = run_distill(&teacher, matched_student(&teacher, &cfg.distill, cfg.seed), &data, &cfg.distill, cfg.seed)?;
        Ok((reduced, r, m))
    })?;
    let (student, reduced, matched) = reports;
    let body = serde_json::json!({ "reduced": reduced, "matched": matched });
    emit(dir.as_deref(), "distill_report.json", &(serde_json::to_string_pretty(&body)? + "\n"))?;
    if let Some(d) = &dir {
        std::fs::write(d.join("student.json"), student.to_json())?;
    }
    Ok(())
}

fn kl_lab(c: &Common) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    let dir = out_dir(&cfg)?;
    let report = run_kl_lab(&cfg.kl_lab)?;
    emit(dir.as_deref(), "kl_summary.csv", &report.summary_csv())?;
    if let Some(d) = &dir {
        std::fs::write(d.join("kl_traces.csv"), report.traces_csv())?;
        std::fs::write(d.join("kl_report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(c) => gen_data(c),
        Command::Train(c) => train(c),
        Command::Eval { common, predictions, policy } => eval(common, predictions.as_deref(), policy.as_deref()),
        Command::Ablate(c) => ablate(c),
        Command::Distill { common, teacher } => distill(common, teacher.as_deref()),
        Command::KlLab(c) => kl_lab(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(CliError::Abort(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
