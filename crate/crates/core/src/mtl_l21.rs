//! Multi-task least squares with an L2,1 (joint feature sparsity) penalty.
//!
//! With weights `Φ` of shape T × J (row t holds task t's coefficients):
//!
//! ```text
//! minimize  ½ Σ_t ‖X_t Φ_tᵀ − Y_t‖²  +  λ Σ_j ‖Φ_{·j}‖₂
//! ```
//!
//! The penalty groups each feature's weights across all tasks, so a feature
//! is either used by every task or dropped for all of them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{MultiTaskDataset, ScalingParams};
use crate::fista::{self, ProximalProblem, SolveTrace, SolverConfig};
use crate::{Error, Result};

/// Task-by-feature coefficients (T × J).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightMatrix(#[serde(with = "crate::linalg::row_major")] pub DMatrix<f64>);

impl WeightMatrix {
    pub fn zeros(n_tasks: usize, n_features: usize) -> Self {
        Self(DMatrix::zeros(n_tasks, n_features))
    }

    pub fn n_tasks(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.0.ncols()
    }

    pub fn task_row(&self, t: usize) -> DVector<f64> {
        self.0.row(t).transpose()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Features whose column norm across tasks is below `tol`.
    pub fn zero_columns(&self, tol: f64) -> usize {
        (0..self.n_features())
            .filter(|&j| self.0.column(j).norm() < tol)
            .count()
    }
}

impl From<DMatrix<f64>> for WeightMatrix {
    fn from(m: DMatrix<f64>) -> Self {
        Self(m)
    }
}

pub(crate) fn check_weights(phi: &DMatrix<f64>, ds: &MultiTaskDataset) -> Result<()> {
    if phi.nrows() != ds.n_tasks() || phi.ncols() != ds.n_features() {
        return Err(Error::dims(
            "weight matrix",
            format!("{}x{}", ds.n_tasks(), ds.n_features()),
            format!("{}x{}", phi.nrows(), phi.ncols()),
        ));
    }
    Ok(())
}

/// Residual `X_t Φ_tᵀ − Y_t` of every task.
pub(crate) fn residuals(phi: &DMatrix<f64>, ds: &MultiTaskDataset) -> Vec<DVector<f64>> {
    ds.tasks()
        .iter()
        .enumerate()
        .map(|(t, task)| &task.x * phi.row(t).transpose() - &task.y)
        .collect()
}

/// Row t is `(X_tᵀ r_t)ᵀ`, each row scaled by `weights[t]`.
pub(crate) fn weighted_task_grad(
    ds: &MultiTaskDataset,
    residuals: &[DVector<f64>],
    weights: impl Fn(usize) -> f64,
) -> DMatrix<f64> {
    let mut grad = DMatrix::zeros(ds.n_tasks(), ds.n_features());
    for (t, (task, r)) in ds.tasks().iter().zip(residuals).enumerate() {
        let g = task.x.tr_mul(r) * weights(t);
        grad.row_mut(t).copy_from(&g.transpose());
    }
    grad
}

/// `½ Σ_t ‖X_t Φ_tᵀ − Y_t‖²`.
pub fn loss(phi: &WeightMatrix, ds: &MultiTaskDataset) -> Result<f64> {
    check_weights(&phi.0, ds)?;
    Ok(loss_unchecked(&phi.0, ds))
}

fn loss_unchecked(phi: &DMatrix<f64>, ds: &MultiTaskDataset) -> f64 {
    0.5 * residuals(phi, ds)
        .iter()
        .map(DVector::norm_squared)
        .sum::<f64>()
}

/// Gradient of [`loss`]: row t is `(X_tᵀ (X_t Φ_tᵀ − Y_t))ᵀ`.
pub fn grad_loss(phi: &WeightMatrix, ds: &MultiTaskDataset) -> Result<DMatrix<f64>> {
    check_weights(&phi.0, ds)?;
    Ok(grad_unchecked(&phi.0, ds))
}

fn grad_unchecked(phi: &DMatrix<f64>, ds: &MultiTaskDataset) -> DMatrix<f64> {
    weighted_task_grad(ds, &residuals(phi, ds), |_| 1.0)
}

/// `Σ_j ‖Φ_{·j}‖₂`: sum over features of the column norm across tasks.
pub fn l21_norm(phi: &WeightMatrix) -> f64 {
    l21_masked(&phi.0, None)
}

fn l21_masked(phi: &DMatrix<f64>, penalized: Option<&[bool]>) -> f64 {
    phi.column_iter()
        .enumerate()
        .filter(|(j, _)| penalized.is_none_or(|mask| mask[*j]))
        .map(|(_, c)| c.norm())
        .sum()
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::param("lambda", format!("{lambda} must be finite and ≥ 0")));
    }
    Ok(())
}

/// `loss + λ·‖Φ‖_{2,1}`.
pub fn objective(phi: &WeightMatrix, ds: &MultiTaskDataset, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(loss(phi, ds)? + lambda * l21_norm(phi))
}

/// Group soft-thresholding of every feature column:
/// `h_j ↦ max(0, 1 − threshold/‖h_j‖)·h_j`, the identity when `threshold == 0`.
pub fn prox_l21(h: &DMatrix<f64>, threshold: f64) -> Result<DMatrix<f64>> {
    if !(threshold >= 0.0) {
        return Err(Error::param("threshold", format!("{threshold} is negative")));
    }
    Ok(prox_masked(h, threshold, None))
}

fn prox_masked(h: &DMatrix<f64>, threshold: f64, penalized: Option<&[bool]>) -> DMatrix<f64> {
    let mut out = h.clone();
    if threshold == 0.0 {
        return out;
    }
    for (j, mut col) in out.column_iter_mut().enumerate() {
        if penalized.is_some_and(|mask| !mask[j]) {
            continue;
        }
        let norm = col.norm();
        if norm <= threshold {
            col.fill(0.0);
        } else {
            col.scale_mut(1.0 - threshold / norm);
        }
    }
    out
}

/// Smallest λ for which `Φ = 0` is optimal: the largest feature-column norm
/// of the loss gradient at zero.
pub fn lambda_max(ds: &MultiTaskDataset) -> f64 {
    let g0 = grad_unchecked(&DMatrix::zeros(ds.n_tasks(), ds.n_features()), ds);
    g0.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Largest violation of the first-order optimality conditions at `phi`.
///
/// Nonzero columns need `∇_j + λ φ_j/‖φ_j‖ = 0`; zero columns need
/// `‖∇_j‖ ≤ λ`.
pub fn optimality_gap(phi: &WeightMatrix, ds: &MultiTaskDataset, lambda: f64) -> Result<f64> {
    let grad = grad_loss(phi, ds)?;
    let mut worst = 0.0f64;
    for (j, w) in phi.0.column_iter().enumerate() {
        let g = grad.column(j);
        let norm = w.norm();
        let v = if norm > 0.0 {
            (g + w * (lambda / norm)).norm()
        } else {
            (g.norm() - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    Ok(worst)
}

/// The L2,1 least-squares problem in the form the FISTA engine consumes.
pub struct L21Problem<'a> {
    ds: &'a MultiTaskDataset,
    lambda: f64,
    penalized: Option<Vec<bool>>,
}

impl<'a> L21Problem<'a> {
    pub fn new(ds: &'a MultiTaskDataset, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self {
            ds,
            lambda,
            penalized: None,
        })
    }

    /// Leaves the listed feature columns out of the penalty and the prox.
    pub fn with_unpenalized(mut self, columns: &[usize]) -> Result<Self> {
        let mut mask = vec![true; self.ds.n_features()];
        for &j in columns {
            *mask.get_mut(j).ok_or(Error::Index {
                what: "features",
                index: j,
                len: self.ds.n_features(),
            })? = false;
        }
        self.penalized = Some(mask);
        Ok(self)
    }
}

impl ProximalProblem for L21Problem<'_> {
    fn smooth_value(&self, x: &DMatrix<f64>) -> f64 {
        loss_unchecked(x, self.ds)
    }

    fn smooth_grad(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        grad_unchecked(x, self.ds)
    }

    fn prox(&self, h: &DMatrix<f64>, step: f64) -> Result<DMatrix<f64>> {
        Ok(prox_masked(h, self.lambda * step, self.penalized.as_deref()))
    }

    fn nonsmooth_value(&self, x: &DMatrix<f64>) -> f64 {
        self.lambda * l21_masked(x, self.penalized.as_deref())
    }
}

/// A fitted multi-task linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct MtlModel {
    pub weights: WeightMatrix,
    pub lambda: f64,
    pub feature_names: Vec<String>,
    pub task_labels: Vec<String>,
    /// Unpenalized per-task intercepts, when fitted with one.
    pub intercepts: Option<Vec<f64>>,
    pub scaling: Option<ScalingParams>,
    pub trace: SolveTrace,
}

impl MtlModel {
    pub fn n_tasks(&self) -> usize {
        self.weights.n_tasks()
    }

    pub fn n_features(&self) -> usize {
        self.weights.n_features()
    }
}

/// Fits the L2,1 model from `Φ₀ = 0`.
///
/// With `λ = 0` and a rank-deficient design this returns one of the many
/// least-squares minimizers.
pub fn fit_mtl(ds: &MultiTaskDataset, lambda: f64, cfg: &SolverConfig) -> Result<MtlModel> {
    let problem = L21Problem::new(ds, lambda)?;
    let x0 = DMatrix::zeros(ds.n_tasks(), ds.n_features());
    let (phi, trace) = fista::solve(&problem, &x0, cfg)?;
    Ok(MtlModel {
        weights: WeightMatrix(phi),
        lambda,
        feature_names: ds.feature_names().to_vec(),
        task_labels: ds.task_labels(),
        intercepts: None,
        scaling: None,
        trace,
    })
}

/// Like [`fit_mtl`] but adds a per-task intercept that is not penalized.
pub fn fit_mtl_with_intercept(
    ds: &MultiTaskDataset,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<MtlModel> {
    let augmented = ds.with_constant_column("\u{0}intercept")?;
    let j = ds.n_features();
    let problem = L21Problem::new(&augmented, lambda)?.with_unpenalized(&[j])?;
    let x0 = DMatrix::zeros(ds.n_tasks(), j + 1);
    let (phi, trace) = fista::solve(&problem, &x0, cfg)?;
    let intercepts = phi.column(j).iter().copied().collect();
    Ok(MtlModel {
        weights: WeightMatrix(phi.columns(0, j).into_owned()),
        lambda,
        feature_names: ds.feature_names().to_vec(),
        task_labels: ds.task_labels(),
        intercepts: Some(intercepts),
        scaling: None,
        trace,
    })
}

/// Linear prediction `X Φ_tᵀ` (+ intercept) for one task.
pub fn predict(model: &MtlModel, x: &DMatrix<f64>, task_index: usize) -> Result<DVector<f64>> {
    predict_linear(&model.weights, model.intercepts.as_deref(), x, task_index)
}

pub(crate) fn predict_linear(
    weights: &WeightMatrix,
    intercepts: Option<&[f64]>,
    x: &DMatrix<f64>,
    task_index: usize,
) -> Result<DVector<f64>> {
    if task_index >= weights.n_tasks() {
        return Err(Error::Index {
            what: "tasks",
            index: task_index,
            len: weights.n_tasks(),
        });
    }
    if x.ncols() != weights.n_features() {
        return Err(Error::dims("prediction features", weights.n_features(), x.ncols()));
    }
    let mut out = x * weights.task_row(task_index);
    if let Some(b) = intercepts {
        out.add_scalar_mut(b[task_index]);
    }
    Ok(out)
}
