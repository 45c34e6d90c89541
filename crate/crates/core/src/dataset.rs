//! Multi-task tabular data: loading, min-max scaling and per-task splitting.
//!
//! A dataset is a list of tasks that share one ordered feature space. Every
//! operation here preserves task order and feature order, and every value is
//! immutable once built, so datasets can be shared freely across threads.

use std::collections::HashMap;
use std::io;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Rows of one task: design matrix `x` (n_t × J) and outcome `y` (n_t).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub label: String,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl TaskData {
    pub fn new(label: impl Into<String>, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let label = label.into();
        if x.nrows() != y.len() {
            return Err(Error::dims("task rows", x.nrows(), y.len()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::DegenerateTask {
                task: label,
                reason: "non-finite value".into(),
            });
        }
        Ok(Self { label, x, y })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    fn select_rows(&self, rows: &[usize]) -> TaskData {
        TaskData {
            label: self.label.clone(),
            x: self.x.select_rows(rows),
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r])),
        }
    }
}

/// Ordered tasks over a shared, named feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskDataset {
    tasks: Vec<TaskData>,
    feature_names: Vec<String>,
}

impl MultiTaskDataset {
    /// Validates that there is at least one task, every task has at least one
    /// row and exactly `feature_names.len()` columns, and names are unique.
    pub fn new(feature_names: Vec<String>, tasks: Vec<TaskData>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Empty("dataset has no tasks"));
        }
        let mut seen = HashMap::new();
        for (j, name) in feature_names.iter().enumerate() {
            if seen.insert(name.as_str(), j).is_some() {
                return Err(Error::Schema(format!("duplicate feature name `{name}`")));
            }
        }
        let mut labels = HashMap::new();
        for task in &tasks {
            if task.x.ncols() != feature_names.len() {
                return Err(Error::dims(
                    "task feature count",
                    feature_names.len(),
                    task.x.ncols(),
                ));
            }
            if task.n_rows() == 0 {
                return Err(Error::DegenerateTask {
                    task: task.label.clone(),
                    reason: "no rows".into(),
                });
            }
            if labels.insert(task.label.as_str(), ()).is_some() {
                return Err(Error::Schema(format!("duplicate task label `{}`", task.label)));
            }
        }
        Ok(Self {
            tasks,
            feature_names,
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn tasks(&self) -> &[TaskData] {
        &self.tasks
    }

    pub fn task(&self, index: usize) -> Result<&TaskData> {
        self.tasks.get(index).ok_or(Error::Index {
            what: "tasks",
            index,
            len: self.tasks.len(),
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn task_labels(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.label.clone()).collect()
    }

    pub fn task_index(&self, label: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.label == label)
    }

    pub fn total_rows(&self) -> usize {
        self.tasks.iter().map(TaskData::n_rows).sum()
    }

    /// All rows stacked into a single task, in task order.
    pub fn pooled(&self, label: impl Into<String>) -> MultiTaskDataset {
        let n = self.total_rows();
        let j = self.n_features();
        let mut x = DMatrix::zeros(n, j);
        let mut y = DVector::zeros(n);
        let mut offset = 0;
        for task in &self.tasks {
            let m = task.n_rows();
            x.view_mut((offset, 0), (m, j)).copy_from(&task.x);
            y.rows_mut(offset, m).copy_from(&task.y);
            offset += m;
        }
        MultiTaskDataset {
            tasks: vec![TaskData {
                label: label.into(),
                x,
                y,
            }],
            feature_names: self.feature_names.clone(),
        }
    }

    /// The dataset restricted to one task.
    pub fn single_task(&self, index: usize) -> Result<MultiTaskDataset> {
        Ok(MultiTaskDataset {
            tasks: vec![self.task(index)?.clone()],
            feature_names: self.feature_names.clone(),
        })
    }

    /// Appends a constant column of ones named `name` as the last feature.
    pub fn with_constant_column(&self, name: &str) -> Result<MultiTaskDataset> {
        let mut names = self.feature_names.clone();
        names.push(name.to_string());
        let tasks = self
            .tasks
            .iter()
            .map(|t| {
                let n = t.n_rows();
                let x = t.x.clone().insert_column(t.x.ncols(), 1.0);
                debug_assert_eq!(x.nrows(), n);
                TaskData {
                    label: t.label.clone(),
                    x,
                    y: t.y.clone(),
                }
            })
            .collect();
        MultiTaskDataset::new(names, tasks)
    }

    /// Reorders (and checks) columns so they follow `names`.
    ///
    /// Every name must be present here and every column here must be named,
    /// so a test file with permuted columns aligns to the training layout.
    pub fn align_features(&self, names: &[String]) -> Result<MultiTaskDataset> {
        let position: HashMap<&str, usize> = self
            .feature_names
            .iter()
            .enumerate()
            .map(|(j, n)| (n.as_str(), j))
            .collect();
        let wanted: HashMap<&str, ()> = names.iter().map(|n| (n.as_str(), ())).collect();
        if let Some(extra) = self
            .feature_names
            .iter()
            .find(|n| !wanted.contains_key(n.as_str()))
        {
            return Err(Error::UnknownFeature(extra.clone()));
        }
        let order = names
            .iter()
            .map(|n| {
                position
                    .get(n.as_str())
                    .copied()
                    .ok_or_else(|| Error::MissingColumn { column: n.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        let tasks = self
            .tasks
            .iter()
            .map(|t| TaskData {
                label: t.label.clone(),
                x: t.x.select_columns(&order),
                y: t.y.clone(),
            })
            .collect();
        MultiTaskDataset::new(names.to_vec(), tasks)
    }

    fn map_tasks(&self, f: impl Fn(&TaskData) -> TaskData) -> MultiTaskDataset {
        MultiTaskDataset {
            tasks: self.tasks.iter().map(f).collect(),
            feature_names: self.feature_names.clone(),
        }
    }
}

/// Observed range of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Range {
        let mut r = Range {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        };
        for v in values {
            r.min = r.min.min(v);
            r.max = r.max.max(v);
        }
        r
    }

    /// `(x - min) / (max - min)`, or 0 for a constant column.
    pub fn scale(&self, x: f64) -> f64 {
        let width = self.max - self.min;
        if width > 0.0 {
            (x - self.min) / width
        } else {
            0.0
        }
    }

    /// Inverse of [`Range::scale`]; a constant column maps back to `min`.
    pub fn unscale(&self, z: f64) -> f64 {
        let width = self.max - self.min;
        if width > 0.0 {
            z * width + self.min
        } else {
            self.min
        }
    }
}

/// Per-feature min/max pairs, pooled across tasks, plus an optional outcome range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub features: Vec<Range>,
    #[serde(default)]
    pub outcome: Option<Range>,
}

impl ScalingParams {
    pub fn fit(ds: &MultiTaskDataset, scale_outcome: bool) -> ScalingParams {
        let features = (0..ds.n_features())
            .map(|j| {
                Range::of(
                    ds.tasks
                        .iter()
                        .flat_map(|t| (0..t.n_rows()).map(move |i| t.x[(i, j)])),
                )
            })
            .collect();
        let outcome =
            scale_outcome.then(|| Range::of(ds.tasks.iter().flat_map(|t| t.y.iter().copied())));
        ScalingParams { features, outcome }
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    fn check(&self, ds: &MultiTaskDataset) -> Result<()> {
        if ds.n_features() != self.features.len() {
            return Err(Error::dims(
                "scaling parameters",
                self.features.len(),
                ds.n_features(),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, ds: &MultiTaskDataset) -> Result<MultiTaskDataset> {
        self.check(ds)?;
        Ok(ds.map_tasks(|t| {
            let mut x = t.x.clone();
            for (j, range) in self.features.iter().enumerate() {
                x.column_mut(j).apply(|v| *v = range.scale(*v));
            }
            let y = match &self.outcome {
                Some(r) => t.y.map(|v| r.scale(v)),
                None => t.y.clone(),
            };
            TaskData {
                label: t.label.clone(),
                x,
                y,
            }
        }))
    }

    pub fn invert(&self, ds: &MultiTaskDataset) -> Result<MultiTaskDataset> {
        self.check(ds)?;
        Ok(ds.map_tasks(|t| {
            let mut x = t.x.clone();
            for (j, range) in self.features.iter().enumerate() {
                x.column_mut(j).apply(|v| *v = range.unscale(*v));
            }
            TaskData {
                label: t.label.clone(),
                x,
                y: self.unscale_outcome(&t.y),
            }
        }))
    }

    /// Maps predictions made in scaled outcome units back to raw units.
    pub fn unscale_outcome(&self, y: &DVector<f64>) -> DVector<f64> {
        match &self.outcome {
            Some(r) => y.map(|v| r.unscale(v)),
            None => y.clone(),
        }
    }
}

/// Fits min-max parameters on `ds` (features only) and applies them.
pub fn minmax_scale(ds: &MultiTaskDataset) -> (MultiTaskDataset, ScalingParams) {
    minmax_scale_with(ds, false)
}

pub fn minmax_scale_with(
    ds: &MultiTaskDataset,
    scale_outcome: bool,
) -> (MultiTaskDataset, ScalingParams) {
    let params = ScalingParams::fit(ds, scale_outcome);
    let scaled = params
        .apply(ds)
        .expect("parameters fitted on the same dataset");
    (scaled, params)
}

pub fn apply_scale(ds: &MultiTaskDataset, params: &ScalingParams) -> Result<MultiTaskDataset> {
    params.apply(ds)
}

/// Train/test row indices of one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaskSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// The shuffle generator for task `task_index`: ChaCha8 seeded with `seed`
/// on stream `task_index`, which gives the same sequence on every platform.
pub fn task_rng(seed: u64, task_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task_index as u64);
    rng
}

/// Per-task shuffled partition of row indices.
///
/// Each task gets `round(train_fraction * n_t)` training rows, clamped to
/// `1..=n_t - 1` so both sides see every task.
pub fn split_indices(
    ds: &MultiTaskDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<Vec<TaskSplit>> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::param(
            "train_fraction",
            format!("{train_fraction} is not in (0, 1)"),
        ));
    }
    ds.tasks
        .iter()
        .enumerate()
        .map(|(t, task)| {
            let n = task.n_rows();
            if n < 2 {
                return Err(Error::DegenerateTask {
                    task: task.label.clone(),
                    reason: format!("{n} row(s); splitting needs at least 2"),
                });
            }
            let mut rows: Vec<usize> = (0..n).collect();
            rows.shuffle(&mut task_rng(seed, t));
            let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
            let test = rows.split_off(n_train);
            Ok(TaskSplit { train: rows, test })
        })
        .collect()
}

/// Stratified-by-task shuffled split; same seed gives the same partition.
pub fn stratified_split(
    ds: &MultiTaskDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(MultiTaskDataset, MultiTaskDataset)> {
    let splits = split_indices(ds, train_fraction, seed)?;
    let (train, test): (Vec<_>, Vec<_>) = ds
        .tasks
        .iter()
        .zip(&splits)
        .map(|(task, s)| (task.select_rows(&s.train), task.select_rows(&s.test)))
        .unzip();
    Ok((
        MultiTaskDataset::new(ds.feature_names.clone(), train)?,
        MultiTaskDataset::new(ds.feature_names.clone(), test)?,
    ))
}

/// Result of reading a CSV file.
#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub dataset: MultiTaskDataset,
    /// Rows skipped because their outcome cell was empty.
    pub dropped_rows: usize,
}

pub fn load_csv(path: impl AsRef<Path>, task_column: &str, outcome_column: &str) -> Result<LoadedCsv> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(io::BufReader::new(file), task_column, outcome_column)
}

/// Reads a header-first CSV. One task per distinct value of `task_column`,
/// ordered by first appearance; every other column except the outcome is a
/// numeric feature.
pub fn read_csv<R: io::Read>(reader: R, task_column: &str, outcome_column: &str) -> Result<LoadedCsv> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
    };
    let task_idx = find(task_column)?;
    let outcome_idx = find(outcome_column)?;
    if task_idx == outcome_idx {
        return Err(Error::Schema(
            "task and outcome columns must differ".to_string(),
        ));
    }
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != task_idx && c != outcome_idx)
        .collect();
    let feature_names: Vec<String> = feature_cols.iter().map(|&c| headers[c].to_string()).collect();
    let j = feature_cols.len();

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, (Vec<f64>, Vec<f64>)> = HashMap::new();
    let mut dropped = 0usize;
    let mut dropped_labels: Vec<String> = Vec::new();

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let label = record.get(task_idx).unwrap_or("").trim().to_string();
        if !rows.contains_key(&label) && !dropped_labels.contains(&label) {
            order.push(label.clone());
        }
        let outcome_cell = record.get(outcome_idx).unwrap_or("").trim();
        if outcome_cell.is_empty() {
            dropped += 1;
            if !rows.contains_key(&label) && !dropped_labels.contains(&label) {
                dropped_labels.push(label);
            }
            continue;
        }
        let y = parse_cell(outcome_cell, line, &headers[outcome_idx])?;
        let entry = rows.entry(label).or_default();
        for &c in &feature_cols {
            let cell = record.get(c).unwrap_or("").trim();
            if cell.is_empty() {
                return Err(Error::MissingFeature {
                    row: line,
                    column: headers[c].to_string(),
                });
            }
            entry.0.push(parse_cell(cell, line, &headers[c])?);
        }
        entry.1.push(y);
    }

    let mut tasks = Vec::with_capacity(order.len());
    for label in order {
        let Some((xs, ys)) = rows.remove(&label) else {
            return Err(Error::DegenerateTask {
                task: label,
                reason: "no rows left after dropping missing outcomes".into(),
            });
        };
        let n = ys.len();
        let x = DMatrix::from_row_slice(n, j, &xs);
        tasks.push(TaskData::new(label, x, DVector::from_vec(ys))?);
    }
    if tasks.is_empty() {
        return Err(Error::Empty("CSV has no data rows"));
    }
    Ok(LoadedCsv {
        dataset: MultiTaskDataset::new(feature_names, tasks)?,
        dropped_rows: dropped,
    })
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            row,
            column: column.to_string(),
            value: cell.to_string(),
        }),
    }
}

/// Writes `task_column, features..., outcome_column` with shortest
/// round-trip float formatting, tasks in order.
pub fn write_csv<W: io::Write>(
    ds: &MultiTaskDataset,
    writer: W,
    task_column: &str,
    outcome_column: &str,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![task_column.to_string()];
    header.extend(ds.feature_names.iter().cloned());
    header.push(outcome_column.to_string());
    wtr.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for task in &ds.tasks {
        for i in 0..task.n_rows() {
            record.clear();
            record.push(task.label.clone());
            record.extend(task.x.row(i).iter().map(|v| v.to_string()));
            record.push(task.y[i].to_string());
            wtr.write_record(&record)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

pub fn save_csv(
    ds: &MultiTaskDataset,
    path: impl AsRef<Path>,
    task_column: &str,
    outcome_column: &str,
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(ds, io::BufWriter::new(file), task_column, outcome_column)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds_from(columns: &[(&str, &[f64])], tasks: &[(&str, usize)]) -> MultiTaskDataset {
        // columns hold pooled rows; tasks give consecutive row counts
        let names = columns.iter().map(|(n, _)| n.to_string()).collect();
        let mut start = 0;
        let tasks = tasks
            .iter()
            .map(|&(label, n)| {
                let x = DMatrix::from_fn(n, columns.len(), |i, j| columns[j].1[start + i]);
                let y = DVector::from_fn(n, |i, _| (start + i) as f64);
                start += n;
                TaskData::new(label, x, y).unwrap()
            })
            .collect();
        MultiTaskDataset::new(names, tasks).unwrap()
    }

    #[test]
    fn minmax_maps_endpoints() {
        let ds = ds_from(&[("a", &[2.0, 4.0, 6.0])], &[("t", 3)]);
        let (scaled, _) = minmax_scale(&ds);
        assert_eq!(scaled.tasks()[0].x.as_slice(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn minmax_pools_across_tasks() {
        let ds = ds_from(&[("a", &[2.0, 4.0, 6.0])], &[("t0", 1), ("t1", 2)]);
        let (scaled, params) = minmax_scale(&ds);
        assert_eq!(params.features[0], Range { min: 2.0, max: 6.0 });
        assert_eq!(scaled.tasks()[0].x[(0, 0)], 0.0);
        assert_eq!(scaled.tasks()[1].x.as_slice(), &[0.5, 1.0]);
    }

    #[test]
    fn constant_column_scales_to_zero() {
        let ds = ds_from(&[("a", &[7.0, 7.0])], &[("t", 2)]);
        let (scaled, params) = minmax_scale(&ds);
        assert_eq!(scaled.tasks()[0].x.as_slice(), &[0.0, 0.0]);
        // re-applying the stored params to fresh data keeps the rule
        let again = apply_scale(&ds_from(&[("a", &[-3.0, 100.0])], &[("t", 2)]), &params).unwrap();
        assert_eq!(again.tasks()[0].x.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn unit_range_is_unchanged() {
        let col = [0.0, 0.25, 0.3, 1.0, 0.9];
        let ds = ds_from(&[("a", &col)], &[("t", 5)]);
        let (scaled, _) = minmax_scale(&ds);
        for (a, b) in scaled.tasks()[0].x.iter().zip(col.iter()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn apply_scale_extrapolates() {
        let params = ScalingParams {
            features: vec![Range { min: 0.0, max: 10.0 }],
            outcome: None,
        };
        let ds = ds_from(&[("a", &[5.0, 12.0])], &[("t", 2)]);
        let out = apply_scale(&ds, &params).unwrap();
        assert_eq!(out.tasks()[0].x.as_slice(), &[0.5, 1.2]);
    }

    #[test]
    fn apply_scale_rejects_wrong_width() {
        let params = ScalingParams {
            features: vec![Range { min: 0.0, max: 1.0 }; 2],
            outcome: None,
        };
        let ds = ds_from(&[("a", &[5.0])], &[("t", 1)]);
        assert!(matches!(
            apply_scale(&ds, &params),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn outcome_scaling_round_trips() {
        let ds = ds_from(&[("a", &[1.0, 3.0, 8.0])], &[("t", 3)]);
        let (scaled, params) = minmax_scale_with(&ds, true);
        assert_eq!(scaled.tasks()[0].y.as_slice(), &[0.0, 0.5, 1.0]);
        let back = params.invert(&scaled).unwrap();
        assert_eq!(back.tasks()[0].y, ds.tasks()[0].y);
    }

    #[test]
    fn split_sizes_follow_fraction() {
        let col: Vec<f64> = (0..30).map(f64::from).collect();
        let ds = ds_from(&[("a", &col)], &[("a", 10), ("b", 10), ("c", 10)]);
        let (train, test) = stratified_split(&ds, 0.6, 1).unwrap();
        for t in 0..3 {
            assert_eq!(train.tasks()[t].n_rows(), 6);
            assert_eq!(test.tasks()[t].n_rows(), 4);
        }
    }

    #[test]
    fn split_two_rows_half() {
        let ds = ds_from(&[("a", &[1.0, 2.0, 3.0, 4.0])], &[("a", 2), ("b", 2)]);
        let (train, test) = stratified_split(&ds, 0.5, 3).unwrap();
        for t in 0..2 {
            assert_eq!(train.tasks()[t].n_rows(), 1);
            assert_eq!(test.tasks()[t].n_rows(), 1);
        }
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let col: Vec<f64> = (0..40).map(f64::from).collect();
        let ds = ds_from(&[("a", &col)], &[("a", 20), ("b", 20)]);
        let a = split_indices(&ds, 0.6, 42).unwrap();
        let b = split_indices(&ds, 0.6, 42).unwrap();
        let c = split_indices(&ds, 0.6, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        // different tasks get different shuffles from the same seed
        assert_ne!(a[0].train, a[1].train);
    }

    #[test]
    fn split_rejects_single_row_task() {
        let ds = ds_from(&[("a", &[1.0, 2.0, 3.0])], &[("a", 2), ("b", 1)]);
        assert!(matches!(
            stratified_split(&ds, 0.6, 0),
            Err(Error::DegenerateTask { task, .. }) if task == "b"
        ));
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let ds = ds_from(&[("a", &[1.0, 2.0])], &[("a", 2)]);
        assert!(stratified_split(&ds, 1.0, 0).is_err());
        assert!(stratified_split(&ds, 0.0, 0).is_err());
    }

    #[test]
    fn csv_minimal() {
        let text = "task,x,y\nA,1.5,2\n";
        let loaded = read_csv(text.as_bytes(), "task", "y").unwrap();
        let ds = loaded.dataset;
        assert_eq!((ds.n_tasks(), ds.n_features()), (1, 1));
        assert_eq!(ds.tasks()[0].n_rows(), 1);
        assert_eq!(ds.tasks()[0].x[(0, 0)], 1.5);
    }

    #[test]
    fn csv_groups_by_first_appearance_and_drops_missing_outcomes() {
        let text = "f1,grp,out,f2\n1,b,10,2\n3,a,,4\n5,a,30,6\n7,b,40,8\n";
        let loaded = read_csv(text.as_bytes(), "grp", "out").unwrap();
        assert_eq!(loaded.dropped_rows, 1);
        let ds = loaded.dataset;
        assert_eq!(ds.task_labels(), vec!["b", "a"]);
        assert_eq!(ds.feature_names(), &["f1".to_string(), "f2".to_string()]);
        assert_eq!(ds.tasks()[0].y.as_slice(), &[10.0, 40.0]);
        assert_eq!(ds.tasks()[0].x.row(1).iter().copied().collect::<Vec<_>>(), vec![7.0, 8.0]);
        assert_eq!(ds.tasks()[1].n_rows(), 1);
    }

    #[test]
    fn csv_errors_name_the_problem() {
        let err = read_csv("a,b\n1,2\n".as_bytes(), "task", "b").unwrap_err();
        assert!(matches!(err, Error::MissingColumn { ref column } if column == "task"));

        let err = read_csv("t,x,y\nA,abc,1\n".as_bytes(), "t", "y").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, ref column, .. } if column == "x"));

        let err = read_csv("t,x,y\nA,,1\n".as_bytes(), "t", "y").unwrap_err();
        assert!(matches!(err, Error::MissingFeature { row: 2, .. }));

        let err = read_csv("t,x,y\nA,1,1\nB,2,\n".as_bytes(), "t", "y").unwrap_err();
        assert!(matches!(err, Error::DegenerateTask { ref task, .. } if task == "B"));
    }

    #[test]
    fn csv_write_read_round_trip() {
        let ds = ds_from(
            &[("a", &[0.1, 1.0 / 3.0, -2.5e-7]), ("b", &[1e10, 2.0, 3.0])],
            &[("x", 2), ("y", 1)],
        );
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf, "task", "out").unwrap();
        let back = read_csv(buf.as_slice(), "task", "out").unwrap().dataset;
        assert_eq!(back, ds);
    }

    #[test]
    fn align_reorders_and_rejects_unknown() {
        let ds = ds_from(&[("a", &[1.0]), ("b", &[2.0])], &[("t", 1)]);
        let names = vec!["b".to_string(), "a".to_string()];
        let aligned = ds.align_features(&names).unwrap();
        assert_eq!(aligned.tasks()[0].x.as_slice(), &[2.0, 1.0]);
        let err = ds.align_features(&["a".to_string()]).unwrap_err();
        assert!(matches!(err, Error::UnknownFeature(ref f) if f == "b"));
    }

    #[test]
    fn dataset_rejects_duplicates() {
        let t = TaskData::new("t", DMatrix::zeros(1, 2), DVector::zeros(1)).unwrap();
        assert!(MultiTaskDataset::new(vec!["a".into(), "a".into()], vec![t.clone()]).is_err());
        assert!(MultiTaskDataset::new(vec!["a".into(), "b".into()], vec![t.clone(), t]).is_err());
    }
}
