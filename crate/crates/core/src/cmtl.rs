//! Clustered multi-task learning through a convex relaxation of k-means.
//!
//! The k-means error of the task weight vectors, `tr(ΦᵀΦ) − tr(Φᵀ O Oᵀ Φ)`
//! for a cluster indicator `O`, is relaxed by replacing `O Oᵀ` with a matrix
//! `C` from `{tr C = K, 0 ⪯ C ⪯ I}`. With `η = ρ2/ρ1` the fitted objective is
//!
//! ```text
//! Σ_t (1/N_t) ‖X_t Φ_tᵀ − Y_t‖²  +  ρ1 η (1 + η) tr(Φᵀ (ηI + C)⁻¹ Φ)
//! ```
//!
//! minimized jointly over `(Φ, C)`. `C` is T × T and contracts the task
//! index of `Φ`. The regularizer is jointly convex (a matrix-fractional
//! function), so FISTA runs on the stacked variable `[Φ | C]` with the
//! identity prox on `Φ` and a Euclidean projection onto the constraint set
//! on `C`. Hard clusters are read off the relaxed `C` afterwards.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{MultiTaskDataset, ScalingParams};
use crate::fista::{self, ProximalProblem, SolveTrace, SolverConfig};
use crate::linalg::{max_asymmetry, sorted_eigen, spectral_map, symmetrize};
use crate::mtl_l21::{check_weights, residuals, weighted_task_grad, WeightMatrix};
use crate::{Error, Result};

/// Symmetry tolerance for matrices entering the `C` update.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Seed used for cluster extraction when none is given.
pub const DEFAULT_KMEANS_SEED: u64 = 0;

/// Number of seeded k-means restarts in [`extract_clusters`].
pub const KMEANS_RESTARTS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmtlParams {
    pub rho1: f64,
    pub rho2: f64,
    pub k: usize,
}

impl CmtlParams {
    pub fn new(rho1: f64, rho2: f64, k: usize) -> Result<Self> {
        let p = Self { rho1, rho2, k };
        if !(rho1 > 0.0 && rho1.is_finite()) {
            return Err(Error::param("rho1", format!("{rho1} must be positive")));
        }
        if !(rho2 > 0.0 && rho2.is_finite()) {
            return Err(Error::param("rho2", format!("{rho2} must be positive")));
        }
        if k < 1 {
            return Err(Error::param("k", "need at least one cluster"));
        }
        Ok(p)
    }

    /// `η = ρ2 / ρ1`.
    pub fn eta(&self) -> f64 {
        self.rho2 / self.rho1
    }

    /// Coefficient `ρ1 η (1 + η)` of the trace term.
    pub fn reg_weight(&self) -> f64 {
        let eta = self.eta();
        self.rho1 * eta * (1.0 + eta)
    }

    fn check_tasks(&self, n_tasks: usize) -> Result<()> {
        if self.k >= n_tasks {
            return Err(Error::param(
                "k",
                format!("{} clusters need more than {} tasks", self.k, n_tasks),
            ));
        }
        Ok(())
    }
}

/// Relaxed cluster matrix: symmetric T × T with spectrum in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelaxedClusterMatrix(#[serde(with = "crate::linalg::row_major")] pub DMatrix<f64>);

/// How far a matrix is from the constraint set `{tr C = K, 0 ⪯ C ⪯ I}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility {
    pub trace_error: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub asymmetry: f64,
}

impl Feasibility {
    pub fn within(&self, trace_tol: f64, eig_tol: f64, sym_tol: f64) -> bool {
        self.trace_error <= trace_tol
            && self.min_eigenvalue >= -eig_tol
            && self.max_eigenvalue <= 1.0 + eig_tol
            && self.asymmetry <= sym_tol
    }
}

impl RelaxedClusterMatrix {
    /// `(K/T)·I`, the starting point of [`fit_cmtl`].
    pub fn scaled_identity(n_tasks: usize, k: usize) -> Self {
        Self(DMatrix::identity(n_tasks, n_tasks) * (k as f64 / n_tasks as f64))
    }

    pub fn n_tasks(&self) -> usize {
        self.0.nrows()
    }

    pub fn feasibility(&self, k: usize) -> Result<Feasibility> {
        let (values, _) = sorted_eigen(&symmetrize(&self.0))?;
        Ok(Feasibility {
            trace_error: (self.0.trace() - k as f64).abs(),
            min_eigenvalue: values.min(),
            max_eigenvalue: values.max(),
            asymmetry: max_asymmetry(&self.0),
        })
    }
}

/// `(ηI + C)⁻¹` through the eigendecomposition of `C`.
fn shifted_inverse(c: &DMatrix<f64>, eta: f64) -> Result<DMatrix<f64>> {
    let (values, vectors) = sorted_eigen(&symmetrize(c))?;
    let smallest = values.min() + eta;
    if !(smallest > 0.0) {
        return Err(Error::Numerical(format!(
            "ηI + C is not positive definite (smallest eigenvalue {smallest:e})"
        )));
    }
    Ok(spectral_map(&values, &vectors, |s| 1.0 / (eta + s)))
}

fn check_c(c: &DMatrix<f64>, n_tasks: usize) -> Result<()> {
    if c.nrows() != n_tasks || c.ncols() != n_tasks {
        return Err(Error::dims(
            "cluster matrix",
            format!("{n_tasks}x{n_tasks}"),
            format!("{}x{}", c.nrows(), c.ncols()),
        ));
    }
    Ok(())
}

/// `ρ1 η (1+η) tr(Φᵀ (ηI + C)⁻¹ Φ)`.
pub fn cmtl_regularizer(
    phi: &WeightMatrix,
    c: &RelaxedClusterMatrix,
    params: &CmtlParams,
) -> Result<f64> {
    check_c(&c.0, phi.n_tasks())?;
    let inv = shifted_inverse(&c.0, params.eta())?;
    Ok(params.reg_weight() * trace_form(&phi.0, &inv))
}

/// `tr(Φᵀ M Φ)`.
fn trace_form(phi: &DMatrix<f64>, m: &DMatrix<f64>) -> f64 {
    phi.dot(&(m * phi))
}

/// `Σ_t (1/N_t) ‖X_t Φ_tᵀ − Y_t‖²`.
pub fn cmtl_loss(phi: &WeightMatrix, ds: &MultiTaskDataset) -> Result<f64> {
    check_weights(&phi.0, ds)?;
    Ok(loss_unchecked(&phi.0, ds))
}

fn loss_unchecked(phi: &DMatrix<f64>, ds: &MultiTaskDataset) -> f64 {
    residuals(phi, ds)
        .iter()
        .map(|r| r.norm_squared() / r.len() as f64)
        .sum()
}

fn loss_grad_unchecked(phi: &DMatrix<f64>, ds: &MultiTaskDataset) -> DMatrix<f64> {
    let res = residuals(phi, ds);
    weighted_task_grad(ds, &res, |t| 2.0 / ds.tasks()[t].n_rows() as f64)
}

/// Gradient in `Φ` of loss plus regularizer:
/// rows `(2/N_t)(X_tᵀ r_t)ᵀ` plus `2 ρ1 η (1+η) (ηI + C)⁻¹ Φ`.
pub fn grad_phi(
    phi: &WeightMatrix,
    c: &RelaxedClusterMatrix,
    ds: &MultiTaskDataset,
    params: &CmtlParams,
) -> Result<DMatrix<f64>> {
    check_weights(&phi.0, ds)?;
    check_c(&c.0, ds.n_tasks())?;
    let inv = shifted_inverse(&c.0, params.eta())?;
    Ok(loss_grad_unchecked(&phi.0, ds) + (&inv * &phi.0) * (2.0 * params.reg_weight()))
}

/// `(ηI + C)⁻¹ Φ Φᵀ (ηI + C)⁻¹`, the negated `C`-gradient of the trace term.
fn c_curvature(phi: &DMatrix<f64>, inv: &DMatrix<f64>) -> DMatrix<f64> {
    let left = inv * phi;
    symmetrize(&(&left * left.transpose()))
}

/// Gradient step on `C` at the search point:
/// `G_C = C_S + (ρ1 η (1+η) / γ) (ηI + C_S)⁻¹ Φ_S Φ_Sᵀ (ηI + C_S)⁻¹`.
pub fn grad_c_step(
    phi_s: &WeightMatrix,
    c_s: &DMatrix<f64>,
    params: &CmtlParams,
    gamma: f64,
) -> Result<DMatrix<f64>> {
    check_c(c_s, phi_s.n_tasks())?;
    if !(gamma > 0.0) {
        return Err(Error::param("gamma", format!("{gamma} is not positive")));
    }
    let asym = max_asymmetry(c_s);
    if asym > SYMMETRY_TOL {
        return Err(Error::Numerical(format!(
            "search point C_S is not symmetric (max |C - Cᵀ| = {asym:e})"
        )));
    }
    let inv = shifted_inverse(c_s, params.eta())?;
    let step = c_curvature(&phi_s.0, &inv) * (params.reg_weight() / gamma);
    Ok(symmetrize(&(c_s + step)))
}

/// Euclidean projection of `sigma_hat` onto `{σ : Σσ = K, 0 ≤ σ ≤ 1}`.
///
/// The solution is `σ_t = clip(σ̂_t − θ, 0, 1)` for the shift `θ` at which
/// the clipped sum equals `K`. The sum is piecewise linear and
/// non-increasing in `θ` with kinks at `σ̂_t` and `σ̂_t − 1`, so the root is
/// found exactly by scanning the sorted kinks and interpolating.
pub fn capped_simplex_project(sigma_hat: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
    let n = sigma_hat.len();
    if k < 1 || k > n {
        return Err(Error::param(
            "k",
            format!("{k} is not in 1..={n} for a {n}-vector"),
        ));
    }
    if sigma_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite value to project".into()));
    }
    let target = k as f64;
    let clipped_sum = |theta: f64| -> f64 {
        sigma_hat
            .iter()
            .map(|&s| (s - theta).clamp(0.0, 1.0))
            .sum()
    };
    let mut kinks: Vec<f64> = sigma_hat
        .iter()
        .flat_map(|&s| [s - 1.0, s])
        .collect();
    kinks.sort_by(f64::total_cmp);
    kinks.dedup();

    // clipped_sum(kinks[0]) = n ≥ K and clipped_sum(last) = 0 < K
    let mut lo = kinks[0];
    let mut g_lo = clipped_sum(lo);
    let mut theta = lo;
    if g_lo > target {
        for &hi in &kinks[1..] {
            let g_hi = clipped_sum(hi);
            if g_hi <= target {
                theta = if g_lo == g_hi {
                    hi
                } else {
                    lo + (g_lo - target) / (g_lo - g_hi) * (hi - lo)
                };
                break;
            }
            lo = hi;
            g_lo = g_hi;
        }
    }
    Ok(sigma_hat.map(|s| (s - theta).clamp(0.0, 1.0)))
}

/// Frobenius projection of a symmetric matrix onto `{tr C = K, 0 ⪯ C ⪯ I}`:
/// keep the eigenvectors, project the eigenvalues onto the capped simplex.
pub fn project_spectral(g: &DMatrix<f64>, k: usize) -> Result<RelaxedClusterMatrix> {
    if g.nrows() != g.ncols() {
        return Err(Error::dims(
            "spectral projection",
            "square matrix",
            format!("{}x{}", g.nrows(), g.ncols()),
        ));
    }
    let (values, vectors) = sorted_eigen(&symmetrize(g))?;
    let projected = capped_simplex_project(&values, k)?;
    let mut scaled = vectors.clone();
    for (j, &s) in projected.iter().enumerate() {
        scaled.column_mut(j).scale_mut(s);
    }
    Ok(RelaxedClusterMatrix(symmetrize(&(scaled * vectors.transpose()))))
}

/// The CMTL objective over the stacked variable `[Φ | C]` (T × (J + T)).
pub struct CmtlProblem<'a> {
    ds: &'a MultiTaskDataset,
    params: CmtlParams,
    observer: Option<RefCell<&'a mut dyn FnMut(&RelaxedClusterMatrix)>>,
}

impl<'a> CmtlProblem<'a> {
    pub fn new(ds: &'a MultiTaskDataset, params: CmtlParams) -> Result<Self> {
        params.check_tasks(ds.n_tasks())?;
        Ok(Self {
            ds,
            params,
            observer: None,
        })
    }

    /// Calls `observer` with every projected `C` the solver produces.
    pub fn with_observer(mut self, observer: &'a mut dyn FnMut(&RelaxedClusterMatrix)) -> Self {
        self.observer = Some(RefCell::new(observer));
        self
    }

    pub fn stack(phi: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
        let t = phi.nrows();
        let j = phi.ncols();
        let mut z = DMatrix::zeros(t, j + t);
        z.columns_mut(0, j).copy_from(phi);
        z.columns_mut(j, t).copy_from(c);
        z
    }

    /// Splits `[Φ | C]` back into its blocks.
    pub fn split(&self, z: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let j = self.ds.n_features();
        let t = self.ds.n_tasks();
        (z.columns(0, j).into_owned(), z.columns(j, t).into_owned())
    }

    fn inverse(&self, c: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        shifted_inverse(c, self.params.eta()).ok()
    }
}

impl ProximalProblem for CmtlProblem<'_> {
    fn smooth_value(&self, z: &DMatrix<f64>) -> f64 {
        let (phi, c) = self.split(z);
        match self.inverse(&c) {
            Some(inv) => {
                loss_unchecked(&phi, self.ds) + self.params.reg_weight() * trace_form(&phi, &inv)
            }
            None => f64::INFINITY,
        }
    }

    fn smooth_grad(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let (phi, c) = self.split(z);
        let Some(inv) = self.inverse(&c) else {
            return DMatrix::from_element(z.nrows(), z.ncols(), f64::NAN);
        };
        let w = self.params.reg_weight();
        let g_phi = loss_grad_unchecked(&phi, self.ds) + (&inv * &phi) * (2.0 * w);
        let g_c = c_curvature(&phi, &inv) * -w;
        Self::stack(&g_phi, &g_c)
    }

    fn prox(&self, h: &DMatrix<f64>, _step: f64) -> Result<DMatrix<f64>> {
        let (phi, c) = self.split(h);
        let projected = project_spectral(&c, self.params.k)?;
        if let Some(obs) = &self.observer {
            (obs.borrow_mut())(&projected);
        }
        Ok(Self::stack(&phi, &projected.0))
    }

    /// Momentum may push `C_S` outside the feasible set; it is used only while
    /// `ηI + C_S` keeps its eigenvalues above `η/2`.
    fn admissible_search_point(&self, z: &DMatrix<f64>) -> bool {
        let (_, c) = self.split(z);
        match sorted_eigen(&symmetrize(&c)) {
            Ok((values, _)) => values.min() >= -0.5 * self.params.eta(),
            Err(_) => false,
        }
    }
}

/// A fitted clustered model.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredModel {
    pub weights: WeightMatrix,
    pub c: RelaxedClusterMatrix,
    pub params: CmtlParams,
    /// Cluster id per task, canonicalized by first occurrence.
    pub assignments: Vec<usize>,
    pub kmeans_seed: u64,
    pub feature_names: Vec<String>,
    pub task_labels: Vec<String>,
    pub scaling: Option<ScalingParams>,
    pub trace: SolveTrace,
}

/// Fits `(Φ, C)` from `Φ₀ = 0`, `C₀ = (K/T)·I` and extracts hard clusters
/// with [`DEFAULT_KMEANS_SEED`].
pub fn fit_cmtl(
    ds: &MultiTaskDataset,
    params: &CmtlParams,
    cfg: &SolverConfig,
) -> Result<ClusteredModel> {
    fit_cmtl_with(ds, params, cfg, DEFAULT_KMEANS_SEED, None)
}

/// [`fit_cmtl`] with an explicit k-means seed and an optional observer that
/// sees every projected `C`.
pub fn fit_cmtl_with(
    ds: &MultiTaskDataset,
    params: &CmtlParams,
    cfg: &SolverConfig,
    kmeans_seed: u64,
    observer: Option<&mut dyn FnMut(&RelaxedClusterMatrix)>,
) -> Result<ClusteredModel> {
    let mut problem = CmtlProblem::new(ds, *params)?;
    if let Some(obs) = observer {
        problem = problem.with_observer(obs);
    }
    let t = ds.n_tasks();
    let c0 = RelaxedClusterMatrix::scaled_identity(t, params.k);
    let z0 = CmtlProblem::stack(&DMatrix::zeros(t, ds.n_features()), &c0.0);
    let (z, trace) = fista::solve(&problem, &z0, cfg)?;
    let (phi, c) = problem.split(&z);
    let c = RelaxedClusterMatrix(c);
    let assignments = extract_clusters(&c, params.k, kmeans_seed)?;
    Ok(ClusteredModel {
        weights: WeightMatrix(phi),
        c,
        params: *params,
        assignments,
        kmeans_seed,
        feature_names: ds.feature_names().to_vec(),
        task_labels: ds.task_labels(),
        scaling: None,
        trace,
    })
}

/// Rounds a relaxed cluster matrix to hard task clusters.
///
/// Tasks are embedded by the top-K eigenvectors of `C`, each scaled by its
/// eigenvalue (the rows of the best rank-K approximation of `C`, up to a
/// rotation), and grouped by k-means with k-means++ seeding and
/// [`KMEANS_RESTARTS`] restarts drawn from ChaCha8 streams of `seed`. Labels
/// are renumbered by first occurrence.
pub fn extract_clusters(c: &RelaxedClusterMatrix, k: usize, seed: u64) -> Result<Vec<usize>> {
    let t = c.n_tasks();
    if k < 1 || k > t {
        return Err(Error::param("k", format!("{k} is not in 1..={t}")));
    }
    if k == 1 {
        return Ok(vec![0; t]);
    }
    let (values, vectors) = sorted_eigen(&symmetrize(&c.0))?;
    let points: Vec<Vec<f64>> = (0..t)
        .map(|i| (0..k).map(|j| vectors[(i, j)] * values[j].max(0.0)).collect())
        .collect();
    let labels = kmeans(&points, k, KMEANS_RESTARTS, seed);
    Ok(canonical_labels(&labels))
}

/// Renumbers labels so ids appear in increasing order of first occurrence.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<(usize, usize)> = Vec::new();
    labels
        .iter()
        .map(|&l| match map.iter().find(|(from, _)| *from == l) {
            Some(&(_, to)) => to,
            None => {
                let to = map.len();
                map.push((l, to));
                to
            }
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Best-of-`restarts` Lloyd k-means; ties go to the earliest restart.
fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Vec<usize> {
    let runs: Vec<(f64, Vec<usize>)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            lloyd(points, k, &mut rng)
        })
        .collect();
    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.0 < runs[best].0 {
            best = i;
        }
    }
    runs.into_iter().nth(best).map(|r| r.1).unwrap_or_default()
}

fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (f64, Vec<usize>) {
    let dim = points[0].len();
    let mut centers = kmeans_pp_init(points, k, rng);
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..300 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centers[l]))
        .sum();
    (inertia, labels)
}

/// Orthogonal cluster indicator `O` (T × K): `O_tk = 1/sqrt(n_k)` when task
/// `t` is in cluster `k`, where `n_k` counts the tasks in cluster `k`.
pub fn cluster_indicator(assignments: &[usize], k: usize) -> Result<DMatrix<f64>> {
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        *sizes.get_mut(a).ok_or(Error::Index {
            what: "clusters",
            index: a,
            len: k,
        })? += 1;
    }
    let mut o = DMatrix::zeros(assignments.len(), k);
    for (t, &a) in assignments.iter().enumerate() {
        o[(t, a)] = 1.0 / (sizes[a] as f64).sqrt();
    }
    Ok(o)
}

/// k-means error of the task weight vectors under a hard partition:
/// `Σ_k Σ_{t ∈ k} ‖Φ_t − Φ̄_k‖²`.
pub fn partition_sse(phi: &WeightMatrix, assignments: &[usize], k: usize) -> Result<f64> {
    if assignments.len() != phi.n_tasks() {
        return Err(Error::dims("assignments", phi.n_tasks(), assignments.len()));
    }
    let j = phi.n_features();
    let mut sse = 0.0;
    for cluster in 0..k {
        let members: Vec<usize> = (0..assignments.len())
            .filter(|&t| assignments[t] == cluster)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut mean = DVector::zeros(j);
        for &t in &members {
            mean += phi.task_row(t);
        }
        mean /= members.len() as f64;
        for &t in &members {
            sse += (phi.task_row(t) - &mean).norm_squared();
        }
    }
    Ok(sse)
}
