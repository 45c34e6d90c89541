//! Synthetic data shared by the integration tests.

#![allow(dead_code)]

use mtlrisk::dataset::{MultiTaskDataset, TaskData};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| normal(rng))
}

pub fn feature_names(j: usize) -> Vec<String> {
    (0..j).map(|k| format!("x{k}")).collect()
}

/// Gaussian design per task, `y_t = X_t w_t + σ ε`.
pub fn linear_tasks(
    rng: &mut ChaCha8Rng,
    weights: &DMatrix<f64>,
    rows: &[usize],
    sigma: f64,
) -> MultiTaskDataset {
    let j = weights.ncols();
    let tasks = rows
        .iter()
        .enumerate()
        .map(|(t, &n)| {
            let x = normal_matrix(rng, n, j);
            let noise = DVector::from_fn(n, |_, _| sigma * normal(rng));
            let y = &x * weights.row(t).transpose() + noise;
            TaskData::new(format!("task{t}"), x, y).unwrap()
        })
        .collect();
    MultiTaskDataset::new(feature_names(j), tasks).unwrap()
}

/// Random weights for `t` tasks sharing the first `active` of `j` features.
pub fn shared_support_weights(rng: &mut ChaCha8Rng, t: usize, j: usize, active: usize) -> DMatrix<f64> {
    DMatrix::from_fn(t, j, |_, c| {
        if c < active {
            let mag = rng.random_range(1.0..3.0);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        } else {
            0.0
        }
    })
}

/// Tasks drawn around `k` well separated centers; returns the planted labels.
pub fn planted_cluster_weights(
    rng: &mut ChaCha8Rng,
    t: usize,
    k: usize,
    j: usize,
    min_distance: f64,
    spread: f64,
) -> (DMatrix<f64>, Vec<usize>) {
    let centers = loop {
        let c = normal_matrix(rng, k, j) * 2.0;
        let separated = (0..k).all(|a| {
            (a + 1..k).all(|b| (c.row(a) - c.row(b)).norm() >= min_distance)
        });
        if separated {
            break c;
        }
    };
    let labels: Vec<usize> = (0..t).map(|i| i % k).collect();
    let w = DMatrix::from_fn(t, j, |r, c| centers[(labels[r], c)] + spread * normal(rng));
    (w, labels)
}

/// Writes `ds` as the CLI's CSV layout (`task`, features…, `outcome`).
pub fn dataset_csv(ds: &MultiTaskDataset) -> String {
    let mut buf = Vec::new();
    mtlrisk::dataset::write_csv(ds, &mut buf, "task", "outcome").unwrap();
    String::from_utf8(buf).unwrap()
}
