//! Command-line front end: `split`, `train`, `evaluate`, `riskfactors` and
//! `clusters`.
//!
//! Every command reads and writes plain files. Models are JSON documents
//! carrying their scaling parameters, so evaluation and ranking never refit
//! anything. A `--config` file of `key = value` lines supplies default flag
//! values; flags given on the command line take precedence.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::{
    evaluate_raw, fit_stl, fit_stl_with_intercept, MaeReport, Penalty, Setting, StlSpec,
    TaskPredictor, TotalMode,
};
use crate::cmtl::{fit_cmtl_with, CmtlParams, RelaxedClusterMatrix};
use crate::dataset::{load_csv, save_csv, split_indices, stratified_split, MultiTaskDataset, ScalingParams};
use crate::fista::{Momentum, SolveTrace, SolverConfig, TraceSummary};
use crate::mtl_l21::{fit_mtl, fit_mtl_with_intercept, predict_linear, WeightMatrix};
use crate::riskfactors::{Levels, RiskReport};
use crate::{Error, Result};

/// Environment variable that sets the worker thread count.
pub const THREADS_ENV: &str = "MTLRISK_THREADS";

/// Current model file layout.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "mtlrisk", version, about = "Multi-task risk-factor modelling")]
#[command(args_override_self = true)]
pub struct Cli {
    /// File of `key = value` lines used as default flag values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a CSV into per-task stratified train and test files.
    Split(SplitArgs),
    /// Fit a model on a training CSV and write it as JSON.
    Train(TrainArgs),
    /// Report per-task and total MAE of one or more models on a test CSV.
    Evaluate(EvaluateArgs),
    /// Rank risk factors by fitted weight at task, cluster and population level.
    Riskfactors(RiskArgs),
    /// Dump the cluster assignments and relaxed cluster matrix of a CMTL model.
    Clusters(ClustersArgs),
}

#[derive(Debug, Args)]
pub struct ColumnArgs {
    /// Column holding the task (subpopulation) label.
    #[arg(long, default_value = "task")]
    pub task_col: String,
    /// Column holding the outcome.
    #[arg(long, default_value = "outcome")]
    pub outcome_col: String,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, value_name = "CSV")]
    pub data: PathBuf,
    #[command(flatten)]
    pub columns: ColumnArgs,
    /// Directory receiving train.csv, test.csv and split.json.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0.6)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mtl,
    Cmtl,
    Stl,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MomentumArg {
    Lagged,
    Lookahead,
    None,
}

impl From<MomentumArg> for Momentum {
    fn from(m: MomentumArg) -> Self {
        match m {
            MomentumArg::Lagged => Momentum::Lagged,
            MomentumArg::Lookahead => Momentum::Lookahead,
            MomentumArg::None => Momentum::None,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "CSV")]
    pub train: PathBuf,
    #[command(flatten)]
    pub columns: ColumnArgs,
    #[arg(long, value_enum)]
    pub model: ModelKind,
    #[arg(long, value_name = "JSON")]
    pub out: PathBuf,
    /// L2,1 weight (mtl) or ridge/lasso weight (stl).
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub rho1: Option<f64>,
    #[arg(long)]
    pub rho2: Option<f64>,
    /// Number of task clusters (cmtl).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = crate::cmtl::DEFAULT_KMEANS_SEED)]
    pub kmeans_seed: u64,
    #[arg(long, value_parser = parse_from_str::<Setting>, default_value = "individual")]
    pub setting: Setting,
    #[arg(long, value_parser = parse_from_str::<Penalty>, default_value = "none")]
    pub penalty: Penalty,
    /// Fit an unpenalized per-task intercept (mtl, stl).
    #[arg(long)]
    pub intercept: bool,
    /// Also min-max scale the outcome; predictions are mapped back.
    #[arg(long)]
    pub scale_outcome: bool,
    /// Fit scaling parameters on this CSV instead of the training file.
    #[arg(long, value_name = "CSV")]
    pub scale_from: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub rel_tol: f64,
    #[arg(long, value_enum, default_value = "lagged")]
    pub momentum: MomentumArg,
    /// Write the per-iteration solver trace as CSV.
    #[arg(long, value_name = "CSV")]
    pub trace_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// One or more model files; each becomes an MAE column.
    #[arg(long, value_name = "JSON", num_args = 1.., required = true)]
    pub model: Vec<PathBuf>,
    #[arg(long, value_name = "CSV")]
    pub test: PathBuf,
    #[command(flatten)]
    pub columns: ColumnArgs,
    /// How the TOTAL row combines tasks.
    #[arg(long, value_parser = parse_from_str::<TotalMode>, default_value = "pooled")]
    pub total: TotalMode,
    /// Output CSV; stdout when absent.
    #[arg(long, value_name = "CSV")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RiskArgs {
    #[arg(long, value_name = "JSON")]
    pub model: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Comma-separated subset of task, cluster, population.
    #[arg(long, value_parser = parse_from_str::<Levels>, default_value = "task,population")]
    pub levels: Levels,
    /// CSV with `feature,category` rows echoed into the report.
    #[arg(long, value_name = "CSV")]
    pub categories: Option<PathBuf>,
    #[arg(long, value_name = "JSON")]
    pub out_json: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    pub out_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClustersArgs {
    #[arg(long, value_name = "JSON")]
    pub model: PathBuf,
    /// JSON with assignments and the relaxed cluster matrix; stdout when absent.
    #[arg(long, value_name = "JSON")]
    pub out: Option<PathBuf>,
    /// Also write `task,cluster` rows.
    #[arg(long, value_name = "CSV")]
    pub assignments_csv: Option<PathBuf>,
}

fn parse_from_str<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure of [`run`]: bad arguments or a failed command.
#[derive(Debug)]
pub enum CliError {
    Usage(clap::Error),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> std::result::Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = inject_config(args)?;
    let cli = Cli::try_parse_from(args).map_err(CliError::Usage)?;
    configure_threads()?;
    match cli.command {
        Command::Split(a) => cmd_split(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Riskfactors(a) => cmd_riskfactors(&a),
        Command::Clusters(a) => cmd_clusters(&a),
    }
    .map_err(CliError::Run)
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::param("threads", format!("{THREADS_ENV}=`{raw}` is not a count")))?;
    // a pool may already exist when `run` is called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Reads `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| {
            let l = l.trim();
            !l.is_empty() && !l.starts_with('#')
        })
        .map(|(i, l)| {
            let (k, v) = l.split_once('=').ok_or_else(|| {
                Error::Schema(format!("config line {}: expected `key = value`", i + 1))
            })?;
            let key = k.trim().trim_start_matches("--").replace('_', "-");
            if key.is_empty() {
                return Err(Error::Schema(format!("config line {}: empty key", i + 1)));
            }
            Ok((key, v.trim().to_string()))
        })
        .collect()
}

/// Splices config values in front of the user's flags so the latter win.
fn inject_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut config = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut iter = args.into_iter();
    if let Some(bin) = iter.next() {
        rest.push(bin);
    }
    while let Some(arg) = iter.next() {
        match arg.to_str() {
            Some("--config") => match iter.next() {
                Some(path) => config = Some(PathBuf::from(path)),
                None => rest.push(arg),
            },
            Some(s) if s.starts_with("--config=") => {
                config = Some(PathBuf::from(&s["--config=".len()..]))
            }
            _ => rest.push(arg),
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut injected = Vec::new();
    for (key, value) in parse_config(&text)? {
        match value.as_str() {
            "true" => injected.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                injected.push(format!("--{key}").into());
                injected.push(value.into());
            }
        }
    }
    let sub = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|p| p + 2)
        .unwrap_or(rest.len());
    rest.splice(sub..sub, injected);
    Ok(rest)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_output(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, contents),
        None => std::io::stdout()
            .write_all(contents.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn load(path: &Path, columns: &ColumnArgs) -> Result<MultiTaskDataset> {
    Ok(load_csv(path, &columns.task_col, &columns.outcome_col)?.dataset)
}

#[derive(Debug, Serialize)]
struct SplitManifest {
    seed: u64,
    train_fraction: f64,
    dropped_rows: usize,
    tasks: Vec<SplitCounts>,
}

#[derive(Debug, Serialize)]
struct SplitCounts {
    task: String,
    n: usize,
    train: usize,
    test: usize,
}

fn cmd_split(a: &SplitArgs) -> Result<()> {
    let loaded = load_csv(&a.data, &a.columns.task_col, &a.columns.outcome_col)?;
    let ds = &loaded.dataset;
    let (train, test) = stratified_split(ds, a.fraction, a.seed)?;
    let counts = split_indices(ds, a.fraction, a.seed)?;
    let manifest = SplitManifest {
        seed: a.seed,
        train_fraction: a.fraction,
        dropped_rows: loaded.dropped_rows,
        tasks: ds
            .tasks()
            .iter()
            .zip(&counts)
            .map(|(t, s)| SplitCounts {
                task: t.label.clone(),
                n: t.n_rows(),
                train: s.train.len(),
                test: s.test.len(),
            })
            .collect(),
    };
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let (tc, oc) = (&a.columns.task_col, &a.columns.outcome_col);
    save_csv(&train, a.out_dir.join("train.csv"), tc, oc)?;
    save_csv(&test, a.out_dir.join("test.csv"), tc, oc)?;
    write_file(
        &a.out_dir.join("split.json"),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )
}

/// Cluster structure stored with a CMTL model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSection {
    pub params: CmtlParams,
    pub kmeans_seed: u64,
    pub assignments: Vec<usize>,
    pub c: RelaxedClusterMatrix,
}

/// On-disk model: weights in scaled feature space plus everything needed to
/// predict from raw data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub kind: ModelKind,
    pub task_column: String,
    pub outcome_column: String,
    pub feature_names: Vec<String>,
    pub task_labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stl: Option<StlSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<ClusterSection>,
    pub scaling: ScalingParams,
    pub weights: WeightMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercepts: Option<Vec<f64>>,
    pub solver: SolverConfig,
    pub traces: Vec<TraceSummary>,
}

impl ModelFile {
    pub fn load(path: impl AsRef<Path>) -> Result<ModelFile> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: ModelFile = serde_json::from_str(&text)?;
        if model.format_version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "{}: model format version {} is not supported (expected {FORMAT_VERSION})",
                path.display(),
                model.format_version
            )));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_json()?)
    }
}

impl TaskPredictor for ModelFile {
    fn task_labels(&self) -> &[String] {
        &self.task_labels
    }
    fn feature_names(&self) -> &[String] {
        &self.feature_names
    }
    fn scaling(&self) -> Option<&ScalingParams> {
        Some(&self.scaling)
    }
    fn predict_task(&self, x: &DMatrix<f64>, t: usize) -> Result<DVector<f64>> {
        predict_linear(&self.weights, self.intercepts.as_deref(), x, t)
    }
}

fn require<T>(value: Option<T>, flag: &'static str, model: &str) -> Result<T> {
    value.ok_or_else(|| Error::param(flag, format!("required for --model {model}")))
}

fn traces_csv(traces: &[(String, &SolveTrace)]) -> String {
    let mut out = String::from("fit,iteration,objective,gamma,alpha\n");
    for (label, trace) in traces {
        for line in trace.to_csv().lines().skip(1) {
            out.push_str(label);
            out.push(',');
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

/// Fits the model described by `a` on raw training data.
pub fn train_model(a: &TrainArgs, raw: &MultiTaskDataset) -> Result<(ModelFile, String)> {
    let scaling = match &a.scale_from {
        Some(path) => {
            let source = load(path, &a.columns)?.align_features(raw.feature_names())?;
            ScalingParams::fit(&source, a.scale_outcome)
        }
        None => ScalingParams::fit(raw, a.scale_outcome),
    };
    let ds = scaling.apply(raw)?;
    let cfg = SolverConfig {
        max_iters: a.max_iters,
        rel_tol: a.rel_tol,
        momentum: a.momentum.into(),
        ..SolverConfig::default()
    };
    cfg.validate()?;
    let mut file = ModelFile {
        format_version: FORMAT_VERSION,
        kind: a.model,
        task_column: a.columns.task_col.clone(),
        outcome_column: a.columns.outcome_col.clone(),
        feature_names: ds.feature_names().to_vec(),
        task_labels: ds.task_labels(),
        lambda: None,
        stl: None,
        clusters: None,
        scaling,
        weights: WeightMatrix::zeros(ds.n_tasks(), ds.n_features()),
        intercepts: None,
        solver: cfg,
        traces: Vec::new(),
    };
    let trace_csv = match a.model {
        ModelKind::Mtl => {
            let lambda = require(a.lambda, "lambda", "mtl")?;
            let m = if a.intercept {
                fit_mtl_with_intercept(&ds, lambda, &cfg)?
            } else {
                fit_mtl(&ds, lambda, &cfg)?
            };
            file.lambda = Some(lambda);
            file.weights = m.weights;
            file.intercepts = m.intercepts;
            file.traces = vec![m.trace.summary()];
            traces_csv(&[("mtl".into(), &m.trace)])
        }
        ModelKind::Cmtl => {
            if a.intercept {
                return Err(Error::param("intercept", "not supported for --model cmtl"));
            }
            let params = CmtlParams::new(
                require(a.rho1, "rho1", "cmtl")?,
                require(a.rho2, "rho2", "cmtl")?,
                require(a.k, "k", "cmtl")?,
            )?;
            let m = fit_cmtl_with(&ds, &params, &cfg, a.kmeans_seed, None)?;
            file.weights = m.weights;
            file.clusters = Some(ClusterSection {
                params,
                kmeans_seed: m.kmeans_seed,
                assignments: m.assignments,
                c: m.c,
            });
            file.traces = vec![m.trace.summary()];
            traces_csv(&[("cmtl".into(), &m.trace)])
        }
        ModelKind::Stl => {
            let spec = StlSpec::new(a.setting, a.penalty, a.lambda.unwrap_or(0.0))?;
            let m = if a.intercept {
                fit_stl_with_intercept(&ds, &spec, &cfg)?
            } else {
                fit_stl(&ds, &spec, &cfg)?
            };
            let labels: Vec<String> = match spec.setting {
                Setting::Global => vec!["all".into()],
                Setting::Individual => m.task_labels.clone(),
            };
            let csv = traces_csv(
                &labels
                    .into_iter()
                    .zip(&m.traces)
                    .collect::<Vec<(String, &SolveTrace)>>(),
            );
            file.stl = Some(spec);
            file.lambda = Some(spec.lambda);
            file.weights = m.weights;
            file.intercepts = m.intercepts;
            file.traces = m.traces.iter().map(SolveTrace::summary).collect();
            csv
        }
    };
    Ok((file, trace_csv))
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let raw = load(&a.train, &a.columns)?;
    let (file, trace) = train_model(a, &raw)?;
    file.save(&a.out)?;
    if let Some(path) = &a.trace_out {
        write_file(path, &trace)?;
    }
    Ok(())
}

/// Column label for each model: its file stem, suffixed when repeated.
fn model_labels(paths: &[PathBuf]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    paths
        .iter()
        .map(|p| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "model".into());
            let n = seen.entry(stem.clone()).or_default();
            *n += 1;
            if *n == 1 {
                stem
            } else {
                format!("{stem}_{n}")
            }
        })
        .collect()
}

/// `task,n,<model>…` with a final `TOTAL` row.
pub fn mae_table_csv(labels: &[String], reports: &[MaeReport]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["task".to_string(), "n".to_string()];
    header.extend(labels.iter().cloned());
    wtr.write_record(&header)?;
    let Some(first) = reports.first() else {
        return Err(Error::Empty("no reports"));
    };
    for (i, row) in first.per_task.iter().enumerate() {
        let mut rec = vec![row.task.clone(), row.n.to_string()];
        rec.extend(reports.iter().map(|r| r.per_task[i].mae.to_string()));
        wtr.write_record(&rec)?;
    }
    let mut total = vec!["TOTAL".to_string(), first.total_n.to_string()];
    total.extend(reports.iter().map(|r| r.total.to_string()));
    wtr.write_record(&total)?;
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::io("<csv buffer>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let test = load(&a.test, &a.columns)?;
    let reports = a
        .model
        .iter()
        .map(|p| evaluate_raw(&ModelFile::load(p)?, &test, a.total))
        .collect::<Result<Vec<_>>>()?;
    write_output(a.out.as_deref(), &mae_table_csv(&model_labels(&a.model), &reports)?)
}

/// Reads a `feature,category` CSV.
pub fn load_categories(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        match (rec.get(0), rec.get(1)) {
            (Some(f), Some(c)) => {
                out.insert(f.trim().to_string(), c.trim().to_string());
            }
            _ => {
                return Err(Error::Schema(format!(
                    "{}: category rows need `feature,category`",
                    path.display()
                )))
            }
        }
    }
    Ok(out)
}

/// Builds the risk-factor report for a loaded model. `top` is capped at the
/// number of features.
pub fn risk_report(model: &ModelFile, top: usize, levels: Levels) -> Result<RiskReport> {
    if levels.cluster && model.clusters.is_none() {
        return Err(Error::param(
            "levels",
            format!("cluster level needs a cmtl model, found {:?}", model.kind).to_lowercase(),
        ));
    }
    RiskReport::build(
        &model.weights,
        &model.feature_names,
        &model.task_labels,
        top.min(model.feature_names.len()),
        levels,
        model.clusters.as_ref().map(|c| c.assignments.as_slice()),
    )
}

fn cmd_riskfactors(a: &RiskArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let mut report = risk_report(&model, a.top, a.levels)?;
    if let Some(path) = &a.categories {
        report = report.with_categories(&load_categories(path)?);
    }
    if let Some(path) = &a.out_csv {
        write_file(path, &report.to_csv()?)?;
    }
    match &a.out_json {
        Some(path) => write_file(path, &report.to_json()?),
        None if a.out_csv.is_none() => write_output(None, &report.to_json()?),
        None => Ok(()),
    }
}

#[derive(Debug, Serialize)]
struct ClusterDump<'a> {
    k: usize,
    kmeans_seed: u64,
    tasks: Vec<TaskCluster<'a>>,
    c: &'a RelaxedClusterMatrix,
}

#[derive(Debug, Serialize)]
struct TaskCluster<'a> {
    task: &'a str,
    cluster: usize,
}

fn cmd_clusters(a: &ClustersArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let clusters = model.clusters.as_ref().ok_or_else(|| {
        Error::param("model", format!("{} has no clusters (not a cmtl model)", a.model.display()))
    })?;
    let tasks: Vec<TaskCluster> = model
        .task_labels
        .iter()
        .zip(&clusters.assignments)
        .map(|(t, &c)| TaskCluster { task: t, cluster: c })
        .collect();
    if let Some(path) = &a.assignments_csv {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["task", "cluster"])?;
        for t in &tasks {
            wtr.write_record([t.task, &t.cluster.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
    }
    let dump = ClusterDump {
        k: clusters.params.k,
        kmeans_seed: clusters.kmeans_seed,
        tasks,
        c: &clusters.c,
    };
    write_output(a.out.as_deref(), &(serde_json::to_string_pretty(&dump)? + "\n"))
}
