//! Command-line front end: `validate`, `run` and `report`.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{load_dataset, IngestReport, Schema};
use crate::error::{Result, ScarfError};
use crate::eval::report::win_matrix_svg;
use crate::eval::{
    mean_accuracy, read_runs, relative_improvement, run_benchmark, win_matrix, ExperimentConfig, Method, MethodRun,
    RelativeImprovement, ResultsStore, Setting, TrialOutput, RESULTS_FILE,
};

pub const CONFIG_ECHO_FILE: &str = "config.toml";
pub const CURVES_DIR: &str = "curves";
pub const WIN_MATRIX_FILE: &str = "win_matrix.csv";
pub const RELATIVE_IMPROVEMENT_FILE: &str = "relative_improvement.csv";

#[derive(Debug, Parser)]
#[command(name = "scarf", version, about = "Contrastive pre-training for tabular data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a dataset and print what preprocessing sees.
    Validate(ValidateArgs),
    /// Run one dataset with one or more methods across seeded trials.
    Run(RunArgs),
    /// Win matrix and relative-improvement tables from a results file.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Method name, or several separated by commas.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub setting: Option<Setting>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// results.jsonl, or a directory containing one.
    #[arg(long)]
    pub results: PathBuf,
    /// Comma-separated methods; defaults to every method in the results.
    #[arg(long)]
    pub methods: Option<String>,
    /// Baseline for relative improvements; `control` when present.
    #[arg(long)]
    pub reference: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    pub p_threshold: f64,
    /// Directory for the CSV tables; defaults to the results directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Validate(a) => cmd_validate(&a.dataset, &a.schema, stdout).map(|_| ()),
        Command::Run(a) => {
            let config = effective_config(&a)?;
            cmd_run(&config, stdout).map(|_| ())
        }
        Command::Report(a) => cmd_report(&a, stdout),
    }
}

fn out_err(e: std::io::Error) -> ScarfError {
    ScarfError::io("<stdout>", e)
}

pub fn cmd_validate(dataset: &Path, schema: &Path, stdout: &mut dyn Write) -> Result<IngestReport> {
    let schema = Schema::load(schema)?;
    let loaded = load_dataset(dataset, &schema)?;
    let r = &loaded.report;
    let w = |stdout: &mut dyn Write, s: String| writeln!(stdout, "{s}").map_err(out_err);
    w(stdout, format!("rows: {}", r.rows))?;
    w(stdout, "columns:".into())?;
    for c in &r.columns {
        let kind = serde_json::to_value(c.kind).expect("kind serialises");
        w(stdout, format!("  {:<24} {:<12} missing {}", c.name, kind.as_str().unwrap_or("?"), c.missing))?;
    }
    if r.dropped.is_empty() {
        w(stdout, "dropped: none".into())?;
    } else {
        w(stdout, format!("dropped: {}", r.dropped.join(", ")))?;
    }
    w(stdout, format!("encoded width: {}", r.encoded_width))?;
    w(stdout, "class balance:".into())?;
    for (class, n) in &r.class_counts {
        w(stdout, format!("  {class:<24} {n:>8} ({:.1}%)", 100.0 * *n as f64 / r.rows.max(1) as f64))?;
    }
    Ok(loaded.report)
}

pub fn effective_config(a: &RunArgs) -> Result<ExperimentConfig> {
    let mut c = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = &a.dataset {
        c.dataset = Some(v.clone());
    }
    if let Some(v) = &a.schema {
        c.schema = Some(v.clone());
    }
    if let Some(v) = &a.method {
        c.method = v.clone();
    }
    if let Some(v) = a.setting {
        c.setting = v;
    }
    if let Some(v) = a.trials {
        c.trials = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.jobs {
        c.jobs = v;
    }
    if let Some(v) = &a.out {
        c.out = v.clone();
    }
    Ok(c)
}

pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let mut seen = BTreeSet::new();
    let mut methods = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m: Method = name.parse()?;
        if seen.insert(m.name.clone()) {
            methods.push(m);
        }
    }
    if methods.is_empty() {
        return Err(ScarfError::Config("no method given".into()));
    }
    Ok(methods)
}

fn dataset_id(config: &ExperimentConfig, path: &Path) -> String {
    config.dataset_id.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| ScarfError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| ScarfError::io(path, e))
}

pub fn curve_path(out: &Path, run: &MethodRun, phase: &str) -> PathBuf {
    out.join(CURVES_DIR).join(format!(
        "{}__{}__{}__{}__{phase}.csv",
        run.dataset_id, run.method, run.setting, run.trial
    ))
}

fn write_curves(out: &Path, t: &TrialOutput) -> Result<()> {
    if let Some(p) = &t.pretrain {
        write_file(&curve_path(out, &t.record, "pretrain"), &p.curves.to_csv_string())?;
    }
    write_file(&curve_path(out, &t.record, "finetune"), &t.finetune.curves.to_csv_string())
}

#[derive(Debug)]
pub struct RunSummary {
    pub completed: Vec<MethodRun>,
    pub failed: usize,
    pub resumed: usize,
}

pub fn cmd_run(config: &ExperimentConfig, stdout: &mut dyn Write) -> Result<RunSummary> {
    let methods = parse_methods(&config.method)?;
    for m in &methods {
        let mut single = config.clone();
        single.method = m.name.clone();
        single.validate()?;
    }
    let data_path = config
        .dataset
        .as_deref()
        .ok_or_else(|| ScarfError::Config("no dataset given (--dataset or `dataset` key)".into()))?;
    let schema_path = config
        .schema
        .as_deref()
        .ok_or_else(|| ScarfError::Config("no schema given (--schema or `schema` key)".into()))?;
    let schema = Schema::load(schema_path)?;
    let loaded = load_dataset(data_path, &schema)?;
    let id = dataset_id(config, data_path);

    let out = &config.out;
    std::fs::create_dir_all(out).map_err(|e| ScarfError::io(out, e))?;
    write_file(&out.join(CONFIG_ECHO_FILE), &config.to_toml_string()?)?;
    let mut store = ResultsStore::open(out)?;
    let datasets = vec![(id, loaded.dataset)];
    let result = run_benchmark(
        &datasets,
        &methods,
        &[config.setting],
        config.trials,
        config,
        Some(&mut store),
        |t| {
            write_curves(out, t)?;
            writeln!(
                stdout,
                "{} {} {} trial {}: accuracy {:.4}",
                t.record.dataset_id, t.record.method, t.record.setting, t.record.trial, t.record.test_accuracy
            )
            .map_err(out_err)
        },
    )?;
    for f in &result.failures {
        writeln!(
            stdout,
            "{} {} {} trial {}: FAILED {}",
            f.key.dataset_id, f.key.method, f.key.setting, f.key.trial, f.error
        )
        .map_err(out_err)?;
    }
    for (m, acc) in mean_accuracy(&result.runs) {
        writeln!(stdout, "mean {m}: {acc:.4}").map_err(out_err)?;
    }
    if result.resumed > 0 {
        writeln!(stdout, "skipped {} completed trials", result.resumed).map_err(out_err)?;
    }
    if result.runs.is_empty() && !result.failures.is_empty() {
        return Err(ScarfError::State(format!(
            "all {} trials failed; see failures.jsonl",
            result.failures.len()
        )));
    }
    Ok(RunSummary {
        completed: result.runs,
        failed: result.failures.len(),
        resumed: result.resumed,
    })
}

pub fn cmd_report(a: &ReportArgs, stdout: &mut dyn Write) -> Result<()> {
    let path = if a.results.is_dir() {
        a.results.join(RESULTS_FILE)
    } else {
        a.results.clone()
    };
    let runs = read_runs(&path)?;
    let methods: Vec<String> = match &a.methods {
        Some(list) => parse_methods(list)?.into_iter().map(|m| m.name).collect(),
        None => {
            let mut seen = BTreeSet::new();
            runs.iter()
                .filter(|r| seen.insert(r.method.clone()))
                .map(|r| r.method.clone())
                .collect()
        }
    };
    if methods.is_empty() {
        return Err(ScarfError::Validation(format!("{} holds no results", path.display())));
    }
    for m in &methods {
        if !runs.iter().any(|r| &r.method == m) {
            return Err(ScarfError::Validation(format!("no results for method '{m}'")));
        }
    }
    let out_dir = match &a.out {
        Some(d) => d.clone(),
        None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let matrix = win_matrix(&runs, &methods, a.p_threshold);
    write_file(&out_dir.join(WIN_MATRIX_FILE), &matrix.to_csv_string())?;
    write!(stdout, "{}", matrix.to_csv_string()).map_err(out_err)?;

    let reference = match &a.reference {
        Some(r) => {
            let name = r.parse::<Method>()?.name;
            if !runs.iter().any(|x| x.method == name) {
                return Err(ScarfError::Validation(format!("no results for reference method '{name}'")));
            }
            Some(name)
        }
        None => runs.iter().any(|x| x.method == "control").then(|| "control".to_string()),
    };
    if let Some(reference) = reference {
        let mut table = RelativeImprovement::default();
        for m in methods.iter().filter(|m| **m != reference) {
            let ri = relative_improvement(&runs, m, &reference, a.p_threshold);
            table.entries.extend(ri.entries);
            table.skipped.extend(ri.skipped);
        }
        write_file(&out_dir.join(RELATIVE_IMPROVEMENT_FILE), &table.to_csv_string())?;
        for s in &table.skipped {
            writeln!(stdout, "skipped {} {}: {}", s.dataset_id, s.setting, s.reason).map_err(out_err)?;
        }
    }
    if let Some(svg) = &a.svg {
        write_file(svg, &win_matrix_svg(&matrix))?;
    }
    Ok(())
}
