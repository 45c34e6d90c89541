//! Single-task baselines and MAE evaluation.
//!
//! A single-task (STL) model ignores task structure: either one model is
//! fitted to all rows pooled together (global setting) or one model per task
//! with no coupling (individual setting). The loss is the same unnormalized
//! `½‖Xw − y‖²` the multi-task solvers use, with an optional ridge
//! `(λ/2)‖w‖²` or lasso `λ‖w‖₁` penalty, solved with the shared FISTA engine.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmtl::ClusteredModel;
use crate::dataset::{stratified_split, MultiTaskDataset, ScalingParams};
use crate::fista::{self, ProximalProblem, SolveTrace, SolverConfig};
use crate::mtl_l21::{predict_linear, MtlModel, WeightMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Global,
    Individual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    None,
    Ridge,
    Lasso,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Global => "global",
            Setting::Individual => "individual",
        })
    }
}

impl fmt::Display for Penalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Penalty::None => "none",
            Penalty::Ridge => "ridge",
            Penalty::Lasso => "lasso",
        })
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Setting::Global),
            "individual" => Ok(Setting::Individual),
            _ => Err(Error::param("setting", format!("`{s}` is not global or individual"))),
        }
    }
}

impl FromStr for Penalty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Penalty::None),
            "ridge" => Ok(Penalty::Ridge),
            "lasso" => Ok(Penalty::Lasso),
            _ => Err(Error::param("penalty", format!("`{s}` is not none, ridge or lasso"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StlSpec {
    pub setting: Setting,
    pub penalty: Penalty,
    pub lambda: f64,
}

impl StlSpec {
    pub fn new(setting: Setting, penalty: Penalty, lambda: f64) -> Result<Self> {
        let spec = Self {
            setting,
            penalty,
            lambda,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::param("lambda", format!("{} is not a finite value ≥ 0", self.lambda)));
        }
        if self.penalty == Penalty::None && self.lambda != 0.0 {
            return Err(Error::param("lambda", "must be 0 when the penalty is none"));
        }
        Ok(())
    }

    /// Short label such as `individual-lasso`.
    pub fn name(&self) -> String {
        format!("{}-{}", self.setting, self.penalty)
    }
}

/// One-task least squares with a ridge or lasso penalty. `penalized[j]` is
/// false for columns left out of the penalty (an intercept).
struct StlProblem<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    penalty: Penalty,
    lambda: f64,
    penalized: Vec<bool>,
}

impl StlProblem<'_> {
    fn residual(&self, w: &DMatrix<f64>) -> DVector<f64> {
        self.x * w.row(0).transpose() - self.y
    }
}

impl ProximalProblem for StlProblem<'_> {
    fn smooth_value(&self, w: &DMatrix<f64>) -> f64 {
        0.5 * self.residual(w).norm_squared()
    }

    fn smooth_grad(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let g = self.x.tr_mul(&self.residual(w));
        DMatrix::from_row_slice(1, g.len(), g.as_slice())
    }

    fn prox(&self, h: &DMatrix<f64>, step: f64) -> Result<DMatrix<f64>> {
        let t = self.lambda * step;
        let mut out = h.clone();
        for (j, v) in out.iter_mut().enumerate() {
            if !self.penalized[j] {
                continue;
            }
            *v = match self.penalty {
                Penalty::None => *v,
                Penalty::Ridge => *v / (1.0 + t),
                Penalty::Lasso => v.signum() * (v.abs() - t).max(0.0),
            };
        }
        Ok(out)
    }

    fn nonsmooth_value(&self, w: &DMatrix<f64>) -> f64 {
        let masked = w.iter().zip(&self.penalized).filter(|(_, &p)| p).map(|(v, _)| *v);
        match self.penalty {
            Penalty::None => 0.0,
            Penalty::Ridge => 0.5 * self.lambda * masked.map(|v| v * v).sum::<f64>(),
            Penalty::Lasso => self.lambda * masked.map(f64::abs).sum::<f64>(),
        }
    }
}

/// STL objective of weight vector `w` on one design: loss plus penalty.
pub fn stl_objective(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>, spec: &StlSpec) -> Result<f64> {
    if x.ncols() != w.len() || x.nrows() != y.len() {
        return Err(Error::dims("STL design", format!("{}x{}", y.len(), w.len()), format!("{}x{}", x.nrows(), x.ncols())));
    }
    let p = StlProblem {
        x,
        y,
        penalty: spec.penalty,
        lambda: spec.lambda,
        penalized: vec![true; w.len()],
    };
    Ok(p.full_objective(&DMatrix::from_row_slice(1, w.len(), w.as_slice())))
}

fn fit_vector(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &StlSpec,
    intercept: bool,
    cfg: &SolverConfig,
) -> Result<(DVector<f64>, Option<f64>, SolveTrace)> {
    let (design, j) = if intercept {
        let j = x.ncols();
        (x.clone().insert_column(j, 1.0), j)
    } else {
        (x.clone(), x.ncols())
    };
    let mut penalized = vec![true; design.ncols()];
    if intercept {
        penalized[j] = false;
    }
    let problem = StlProblem {
        x: &design,
        y,
        penalty: spec.penalty,
        lambda: spec.lambda,
        penalized,
    };
    let (w, trace) = fista::solve(&problem, &DMatrix::zeros(1, design.ncols()), cfg)?;
    let b = intercept.then(|| w[(0, j)]);
    Ok((w.row(0).columns(0, j).transpose(), b, trace))
}

/// A fitted STL baseline, stored as a T × J weight matrix so it predicts
/// like the multi-task models. Global fits repeat the same row.
#[derive(Debug, Clone, PartialEq)]
pub struct StlModel {
    pub spec: StlSpec,
    pub weights: WeightMatrix,
    pub intercepts: Option<Vec<f64>>,
    pub feature_names: Vec<String>,
    pub task_labels: Vec<String>,
    pub scaling: Option<ScalingParams>,
    /// One trace for a global fit, one per task for an individual fit.
    pub traces: Vec<SolveTrace>,
}

pub fn fit_stl(ds: &MultiTaskDataset, spec: &StlSpec, cfg: &SolverConfig) -> Result<StlModel> {
    fit_stl_impl(ds, spec, cfg, false)
}

/// [`fit_stl`] with an unpenalized intercept per fitted vector.
pub fn fit_stl_with_intercept(
    ds: &MultiTaskDataset,
    spec: &StlSpec,
    cfg: &SolverConfig,
) -> Result<StlModel> {
    fit_stl_impl(ds, spec, cfg, true)
}

fn fit_stl_impl(
    ds: &MultiTaskDataset,
    spec: &StlSpec,
    cfg: &SolverConfig,
    intercept: bool,
) -> Result<StlModel> {
    spec.validate()?;
    cfg.validate()?;
    let t = ds.n_tasks();
    let mut weights = DMatrix::zeros(t, ds.n_features());
    let mut intercepts = vec![0.0; t];
    let traces = match spec.setting {
        Setting::Global => {
            let pooled = ds.pooled("all");
            let task = &pooled.tasks()[0];
            let (w, b, trace) = fit_vector(&task.x, &task.y, spec, intercept, cfg)?;
            for (row, b_row) in intercepts.iter_mut().enumerate() {
                weights.row_mut(row).copy_from(&w.transpose());
                *b_row = b.unwrap_or(0.0);
            }
            vec![trace]
        }
        Setting::Individual => {
            let fits = ds
                .tasks()
                .par_iter()
                .map(|task| fit_vector(&task.x, &task.y, spec, intercept, cfg))
                .collect::<Result<Vec<_>>>()?;
            fits.into_iter()
                .enumerate()
                .map(|(row, (w, b, trace))| {
                    weights.row_mut(row).copy_from(&w.transpose());
                    intercepts[row] = b.unwrap_or(0.0);
                    trace
                })
                .collect()
        }
    };
    Ok(StlModel {
        spec: *spec,
        weights: WeightMatrix(weights),
        intercepts: intercept.then_some(intercepts),
        feature_names: ds.feature_names().to_vec(),
        task_labels: ds.task_labels(),
        scaling: None,
        traces,
    })
}

/// Anything that predicts per task from a design matrix in its own (scaled)
/// feature space.
pub trait TaskPredictor {
    fn task_labels(&self) -> &[String];
    fn feature_names(&self) -> &[String];
    fn scaling(&self) -> Option<&ScalingParams>;
    fn predict_task(&self, x: &DMatrix<f64>, task_index: usize) -> Result<DVector<f64>>;
}

impl TaskPredictor for MtlModel {
    fn task_labels(&self) -> &[String] {
        &self.task_labels
    }
    fn feature_names(&self) -> &[String] {
        &self.feature_names
    }
    fn scaling(&self) -> Option<&ScalingParams> {
        self.scaling.as_ref()
    }
    fn predict_task(&self, x: &DMatrix<f64>, t: usize) -> Result<DVector<f64>> {
        predict_linear(&self.weights, self.intercepts.as_deref(), x, t)
    }
}

impl TaskPredictor for ClusteredModel {
    fn task_labels(&self) -> &[String] {
        &self.task_labels
    }
    fn feature_names(&self) -> &[String] {
        &self.feature_names
    }
    fn scaling(&self) -> Option<&ScalingParams> {
        self.scaling.as_ref()
    }
    fn predict_task(&self, x: &DMatrix<f64>, t: usize) -> Result<DVector<f64>> {
        predict_linear(&self.weights, None, x, t)
    }
}

impl TaskPredictor for StlModel {
    fn task_labels(&self) -> &[String] {
        &self.task_labels
    }
    fn feature_names(&self) -> &[String] {
        &self.feature_names
    }
    fn scaling(&self) -> Option<&ScalingParams> {
        self.scaling.as_ref()
    }
    fn predict_task(&self, x: &DMatrix<f64>, t: usize) -> Result<DVector<f64>> {
        predict_linear(&self.weights, self.intercepts.as_deref(), x, t)
    }
}

/// Mean absolute error.
pub fn mae(pred: &DVector<f64>, actual: &DVector<f64>) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::dims("mae inputs", actual.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::Empty("mae of an empty vector"));
    }
    Ok((pred - actual).abs().sum() / pred.len() as f64)
}

/// How the TOTAL row combines tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TotalMode {
    /// MAE over all test rows together.
    #[default]
    Pooled,
    /// Unweighted mean of the per-task MAEs.
    MeanOfTasks,
}

impl FromStr for TotalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(TotalMode::Pooled),
            "mean-of-tasks" => Ok(TotalMode::MeanOfTasks),
            _ => Err(Error::param("total", format!("`{s}` is not pooled or mean-of-tasks"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMae {
    pub task: String,
    pub n: usize,
    pub mae: f64,
    /// Spread across repeated runs, when aggregated.
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeReport {
    pub per_task: Vec<TaskMae>,
    pub total_n: usize,
    pub total: f64,
    pub mode: TotalMode,
}

impl MaeReport {
    /// `task,n,mae` rows followed by a `TOTAL` row.
    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["task", "n", "mae"])?;
        for row in &self.per_task {
            wtr.write_record([row.task.clone(), row.n.to_string(), row.mae.to_string()])?;
        }
        wtr.write_record(["TOTAL".to_string(), self.total_n.to_string(), self.total.to_string()])?;
        csv_string(wtr)
    }
}

fn csv_string(wtr: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::io("<csv buffer>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Per-task predictions for `test`, matched to the model's tasks by label.
/// `test` must already be in the model's feature space.
pub fn predict_dataset<M: TaskPredictor + ?Sized>(
    model: &M,
    test: &MultiTaskDataset,
) -> Result<Vec<DVector<f64>>> {
    if test.feature_names() != model.feature_names() {
        return Err(Error::Schema(
            "test features do not match the model's features (align them first)".into(),
        ));
    }
    test.tasks()
        .iter()
        .map(|task| {
            let t = model
                .task_labels()
                .iter()
                .position(|l| *l == task.label)
                .ok_or_else(|| Error::MissingTaskModel(task.label.clone()))?;
            model.predict_task(&task.x, t)
        })
        .collect()
}

/// MAE per test task plus a pooled TOTAL.
pub fn evaluate<M: TaskPredictor + ?Sized>(model: &M, test: &MultiTaskDataset) -> Result<MaeReport> {
    evaluate_with(model, test, TotalMode::Pooled)
}

pub fn evaluate_with<M: TaskPredictor + ?Sized>(
    model: &M,
    test: &MultiTaskDataset,
    mode: TotalMode,
) -> Result<MaeReport> {
    let preds = predict_dataset(model, test)?;
    report_from_predictions(test, &preds, DVector::clone, mode)
}

/// Evaluates on raw (unscaled) test data: aligns features by name, applies
/// the model's stored scaling and reports MAE in raw outcome units.
pub fn evaluate_raw<M: TaskPredictor + ?Sized>(
    model: &M,
    raw_test: &MultiTaskDataset,
    mode: TotalMode,
) -> Result<MaeReport> {
    let aligned = raw_test.align_features(model.feature_names())?;
    let Some(scaling) = model.scaling() else {
        return evaluate_with(model, &aligned, mode);
    };
    let mut feature_only = scaling.clone();
    feature_only.outcome = None;
    let scaled = feature_only.apply(&aligned)?;
    let preds = predict_dataset(model, &scaled)?;
    report_from_predictions(&aligned, &preds, |p| scaling.unscale_outcome(p), mode)
}

fn report_from_predictions(
    test: &MultiTaskDataset,
    preds: &[DVector<f64>],
    map: impl Fn(&DVector<f64>) -> DVector<f64>,
    mode: TotalMode,
) -> Result<MaeReport> {
    let mut per_task = Vec::with_capacity(test.n_tasks());
    let mut abs_sum = 0.0;
    for (task, p) in test.tasks().iter().zip(preds) {
        let p = map(p);
        let m = mae(&p, &task.y)?;
        abs_sum += m * task.n_rows() as f64;
        per_task.push(TaskMae {
            task: task.label.clone(),
            n: task.n_rows(),
            mae: m,
            sd: None,
        });
    }
    let total_n = test.total_rows();
    let total = match mode {
        TotalMode::Pooled => abs_sum / total_n as f64,
        TotalMode::MeanOfTasks => {
            per_task.iter().map(|r| r.mae).sum::<f64>() / per_task.len() as f64
        }
    };
    Ok(MaeReport {
        per_task,
        total_n,
        total,
        mode,
    })
}

/// `n` values log-spaced from `lambda_max` down to `lambda_max · min_ratio`.
pub fn lambda_grid(lambda_max: f64, n: usize, min_ratio: f64) -> Result<Vec<f64>> {
    if !(lambda_max > 0.0 && lambda_max.is_finite()) {
        return Err(Error::param("lambda_max", format!("{lambda_max} is not positive")));
    }
    if !(min_ratio > 0.0 && min_ratio < 1.0) || n < 2 {
        return Err(Error::param("grid", "needs n ≥ 2 and min_ratio in (0, 1)"));
    }
    let step = min_ratio.ln() / (n - 1) as f64;
    Ok((0..n).map(|i| lambda_max * (step * i as f64).exp()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaSearch {
    pub best: f64,
    /// `(λ, validation MAE)` in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Picks the λ with the lowest pooled validation MAE on an inner stratified
/// holdout of `ds`. Ties go to the earlier grid entry.
pub fn tune_lambda<P, F>(
    ds: &MultiTaskDataset,
    grid: &[f64],
    train_fraction: f64,
    seed: u64,
    fit: F,
) -> Result<LambdaSearch>
where
    P: TaskPredictor,
    F: Fn(&MultiTaskDataset, f64) -> Result<P>,
{
    if grid.is_empty() {
        return Err(Error::Empty("lambda grid"));
    }
    let (inner_train, validation) = stratified_split(ds, train_fraction, seed)?;
    let mut scores = Vec::with_capacity(grid.len());
    let mut best = (f64::INFINITY, grid[0]);
    for &lambda in grid {
        let model = fit(&inner_train, lambda)?;
        let score = evaluate(&model, &validation)?.total;
        if score < best.0 {
            best = (score, lambda);
        }
        scores.push((lambda, score));
    }
    Ok(LambdaSearch {
        best: best.1,
        scores,
    })
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub task: String,
    pub n: usize,
    pub outcome_mean: f64,
    pub outcome_sd: f64,
    /// `(mean, sd)` of the MAE across runs, one per method.
    pub cells: Vec<(f64, f64)>,
}

/// Per-task MAE of several methods summarized over repeated seeded runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkTable {
    pub methods: Vec<String>,
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkTable {
    /// `runs[m]` holds one report per seed for method `m`; `data` supplies
    /// the per-task sizes and outcome statistics. The last row is `TOTAL`.
    pub fn from_runs(
        data: &MultiTaskDataset,
        methods: &[String],
        runs: &[Vec<MaeReport>],
    ) -> Result<Self> {
        if methods.len() != runs.len() {
            return Err(Error::dims("benchmark methods", methods.len(), runs.len()));
        }
        if runs.iter().any(Vec::is_empty) {
            return Err(Error::Empty("a method has no runs"));
        }
        let mut rows = Vec::with_capacity(data.n_tasks() + 1);
        let stats = |y: &[f64]| mean_sd(y);
        for task in data.tasks() {
            let (outcome_mean, outcome_sd) = stats(task.y.as_slice());
            let cells = runs
                .iter()
                .map(|reports| {
                    let vals = reports
                        .iter()
                        .map(|r| {
                            r.per_task
                                .iter()
                                .find(|p| p.task == task.label)
                                .map(|p| p.mae)
                                .ok_or_else(|| Error::MissingTaskModel(task.label.clone()))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(mean_sd(&vals))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(BenchmarkRow {
                task: task.label.clone(),
                n: task.n_rows(),
                outcome_mean,
                outcome_sd,
                cells,
            });
        }
        let all_y: Vec<f64> = data.tasks().iter().flat_map(|t| t.y.iter().copied()).collect();
        let (outcome_mean, outcome_sd) = stats(&all_y);
        rows.push(BenchmarkRow {
            task: "TOTAL".into(),
            n: data.total_rows(),
            outcome_mean,
            outcome_sd,
            cells: runs
                .iter()
                .map(|reports| mean_sd(&reports.iter().map(|r| r.total).collect::<Vec<_>>()))
                .collect(),
        });
        Ok(Self {
            methods: methods.to_vec(),
            rows,
        })
    }

    /// `task,n,outcome_mean,outcome_sd,<method>_mae,<method>_sd,…`
    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = ["task", "n", "outcome_mean", "outcome_sd"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for m in &self.methods {
            header.push(format!("{m}_mae"));
            header.push(format!("{m}_sd"));
        }
        wtr.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![
                row.task.clone(),
                row.n.to_string(),
                row.outcome_mean.to_string(),
                row.outcome_sd.to_string(),
            ];
            for (m, s) in &row.cells {
                rec.push(m.to_string());
                rec.push(s.to_string());
            }
            wtr.write_record(&rec)?;
        }
        csv_string(wtr)
    }
}
