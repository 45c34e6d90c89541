//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use mtlrisk::baselines::{
    evaluate, fit_stl, lambda_grid, tune_lambda, Penalty, Setting, StlSpec,
};
use mtlrisk::cmtl::{
    capped_simplex_project, cluster_indicator, cmtl_loss, cmtl_regularizer,
    fit_cmtl_with, grad_phi, partition_sse, project_spectral, CmtlParams, RelaxedClusterMatrix,
};
use mtlrisk::fista::{Momentum, SolverConfig};
use mtlrisk::mtl_l21::{fit_mtl, grad_loss, lambda_max, loss, prox_l21, WeightMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tight(max_iters: usize) -> SolverConfig {
    SolverConfig::default()
        .with_max_iters(max_iters)
        .with_rel_tol(1e-15)
}

// 1 ------------------------------------------------------------------------

/// Minimizer of `½‖Z − H‖² + τ Σ_j ‖Z_j‖` by projected gradient ascent on the
/// dual `max_{‖U_j‖ ≤ τ} −½‖H − U‖²`, with `Z = H − U`.
fn prox_oracle(h: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let mut u = DMatrix::zeros(h.nrows(), h.ncols());
    for _ in 0..200 {
        let mut next = &u + (h - &u) * 0.5;
        for mut col in next.column_iter_mut() {
            let n = col.norm();
            if n > tau {
                col *= tau / n;
            }
        }
        u = next;
    }
    h - u
}

fn l21_prox_objective(z: &DMatrix<f64>, h: &DMatrix<f64>, tau: f64) -> f64 {
    0.5 * (z - h).norm_squared() + tau * z.column_iter().map(|c| c.norm()).sum::<f64>()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut not_optimal = 0;
    for case in 0..200 {
        let mut r = rng(1_000 + case);
        let t = r.random_range(1..=6);
        let j = r.random_range(1..=20);
        let h = normal_matrix(&mut r, t, j) * r.random_range(0.1..3.0);
        let max_norm = h.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
        let tau = r.random_range(0.0..1.5) * max_norm;
        let z = prox_l21(&h, tau).unwrap();
        let oracle = prox_oracle(&h, tau);
        worst = worst.max((&z - &oracle).norm());
        if l21_prox_objective(&z, &h, tau) > l21_prox_objective(&oracle, &h, tau) + 1e-12 {
            not_optimal += 1;
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        worst <= 1e-5 && not_optimal == 0 && elapsed < Duration::from_secs(30),
        format!("200 cases, max Frobenius gap {worst:.2e} (tol 1e-5), {not_optimal} worse than oracle, {elapsed:.2?} (limit 30s)"),
    )
}

// 2 ------------------------------------------------------------------------

fn central_difference(x: &DMatrix<f64>, f: impl Fn(&DMatrix<f64>) -> f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let h = 1e-6 * x[(i, j)].abs().max(1.0);
            let mut up = x.clone();
            up[(i, j)] += h;
            let mut down = x.clone();
            down[(i, j)] -= h;
            g[(i, j)] = (f(&up) - f(&down)) / (2.0 * h);
        }
    }
    g
}

fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-8)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let (mut worst_loss, mut worst_phi) = (0.0f64, 0.0f64);
    for case in 0..50 {
        let mut r = rng(2_000 + case);
        let t = r.random_range(2..=4);
        let j = r.random_range(2..=8);
        let rows: Vec<usize> = (0..t).map(|_| r.random_range(3..=12)).collect();
        let w = normal_matrix(&mut r, t, j);
        let ds = linear_tasks(&mut r, &w, &rows, 0.5);
        let phi = normal_matrix(&mut r, t, j);

        let g = grad_loss(&WeightMatrix(phi.clone()), &ds).unwrap();
        let fd = central_difference(&phi, |p| loss(&WeightMatrix(p.clone()), &ds).unwrap());
        worst_loss = worst_loss.max(relative_error(&g, &fd));

        let k = r.random_range(1..t);
        let params = CmtlParams::new(r.random_range(0.1..2.0), r.random_range(0.1..2.0), k).unwrap();
        let s = normal_matrix(&mut r, t, t);
        let c = project_spectral(&(&s + s.transpose()), k).unwrap();
        let g = grad_phi(&WeightMatrix(phi.clone()), &c, &ds, &params).unwrap();
        let fd = central_difference(&phi, |p| {
            let p = WeightMatrix(p.clone());
            cmtl_loss(&p, &ds).unwrap() + cmtl_regularizer(&p, &c, &params).unwrap()
        });
        worst_phi = worst_phi.max(relative_error(&g, &fd));
    }
    let elapsed = start.elapsed();
    Outcome::new(
        worst_loss <= 1e-4 && worst_phi <= 1e-4 && elapsed < Duration::from_secs(10),
        format!("50 instances, worst relative error grad_loss {worst_loss:.2e}, grad_phi {worst_phi:.2e} (tol 1e-4), {elapsed:.2?} (limit 10s)"),
    )
}

// 3 ------------------------------------------------------------------------

fn criterion_3() -> Outcome {
    let cfg = tight(50_000);
    let (mut worst_mtl, mut worst_stl) = (0.0f64, 0.0f64);
    for case in 0..20 {
        let mut r = rng(3_000 + case);
        let j = r.random_range(2..=8);
        let w = normal_matrix(&mut r, 1, j);
        let ds = linear_tasks(&mut r, &w, &[60], 0.3);
        let task = &ds.tasks()[0];
        let normal_eq = (task.x.transpose() * &task.x)
            .cholesky()
            .expect("well conditioned")
            .solve(&(task.x.transpose() * &task.y));

        let mtl = fit_mtl(&ds, 0.0, &cfg).unwrap();
        worst_mtl = worst_mtl.max((mtl.weights.task_row(0) - &normal_eq).amax());
        let spec = StlSpec::new(Setting::Individual, Penalty::None, 0.0).unwrap();
        let stl = fit_stl(&ds, &spec, &cfg).unwrap();
        worst_stl = worst_stl.max((stl.weights.task_row(0) - &normal_eq).amax());
    }
    Outcome::new(
        worst_mtl <= 1e-5 && worst_stl <= 1e-5,
        format!("20 systems, max |Δw| fit_mtl {worst_mtl:.2e}, fit_stl {worst_stl:.2e} (tol 1e-5)"),
    )
}

// 4 ------------------------------------------------------------------------

/// Design with AR(1)-correlated columns, which slows plain proximal gradient.
fn correlated_tasks(r: &mut ChaCha8Rng, t: usize, n: usize, j: usize, rho: f64) -> mtlrisk::dataset::MultiTaskDataset {
    let w = shared_support_weights(r, t, j, j / 3);
    let tasks = (0..t)
        .map(|ti| {
            let z = normal_matrix(r, n, j);
            let mut x = z.clone();
            for i in 0..n {
                for c in 1..j {
                    x[(i, c)] = rho * x[(i, c - 1)] + (1.0 - rho * rho).sqrt() * z[(i, c)];
                }
            }
            let y = &x * w.row(ti).transpose() + DVector::from_fn(n, |_, _| 0.5 * normal(r));
            mtlrisk::dataset::TaskData::new(format!("task{ti}"), x, y).unwrap()
        })
        .collect();
    mtlrisk::dataset::MultiTaskDataset::new(feature_names(j), tasks).unwrap()
}

fn first_within(objectives: &[f64], target: f64) -> Option<usize> {
    objectives.iter().position(|&f| f <= target).map(|i| i + 1)
}

fn criterion_4() -> Outcome {
    let mut max_rel = 0.0f64;
    let mut faster = 0;
    let mut ratios = Vec::new();
    for case in 0..10 {
        let mut r = rng(4_000 + case);
        let ds = correlated_tasks(&mut r, 4, 40, 30, 0.9);
        let lambda = 0.05 * lambda_max(&ds);
        let cfg = SolverConfig::default().with_max_iters(200_000).with_rel_tol(1e-13);
        let fista = fit_mtl(&ds, lambda, &cfg).unwrap();
        let ista = fit_mtl(&ds, lambda, &cfg.with_momentum(Momentum::None)).unwrap();
        let (ff, fi) = (fista.trace.best_objective(), ista.trace.best_objective());
        max_rel = max_rel.max((ff - fi).abs() / fi.abs().max(1.0));
        let target = fi + 1e-4 * fi.abs();
        let it_f = first_within(&fista.trace.objective_per_iter, target);
        let it_i = first_within(&ista.trace.objective_per_iter, target);
        if let (Some(a), Some(b)) = (it_f, it_i) {
            ratios.push(a as f64 / b as f64);
            if 2 * a <= b {
                faster += 1;
            }
        }
    }
    let ratio_text: Vec<String> = ratios.iter().map(|x| format!("{x:.2}")).collect();
    Outcome::new(
        max_rel <= 1e-6 && faster >= 8,
        format!(
            "10 problems, max relative objective gap {max_rel:.2e} (tol 1e-6), FISTA ≤ half ISTA iterations on {faster}/10 (need 8), ratios [{}]",
            ratio_text.join(", ")
        ),
    )
}

// 5 ------------------------------------------------------------------------

fn criterion_5() -> Outcome {
    let mut r = rng(5_000);
    let (t, j) = (4, 20);
    let w = shared_support_weights(&mut r, t, j, 8);
    let ds = linear_tasks(&mut r, &w, &[40; 4], 0.5);
    let lmax = lambda_max(&ds);
    let cfg = tight(20_000);
    let counts: Vec<usize> = (0..10)
        .map(|i| {
            let lambda = lmax * i as f64 / 9.0;
            fit_mtl(&ds, lambda, &cfg).unwrap().weights.zero_columns(1e-8)
        })
        .collect();
    let monotone = counts.windows(2).all(|p| p[0] <= p[1]);
    Outcome::new(
        monotone && counts[9] == j,
        format!("zero-column counts over λ grid {counts:?} (J = {j})"),
    )
}

// 6 ------------------------------------------------------------------------

fn planted_dataset(seed: u64) -> (mtlrisk::dataset::MultiTaskDataset, Vec<usize>) {
    let mut r = rng(seed);
    let (w, labels) = planted_cluster_weights(&mut r, 8, 2, 10, 5.0, 0.3);
    (linear_tasks(&mut r, &w, &[50; 8], 0.1), labels)
}

fn cmtl_params() -> CmtlParams {
    CmtlParams::new(0.1, 0.1, 2).unwrap()
}

fn criterion_6() -> Outcome {
    let (ds, _) = planted_dataset(6_000);
    let params = cmtl_params();
    let (mut calls, mut worst_trace, mut worst_lo, mut worst_hi, mut worst_idem) =
        (0usize, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut failure = None;
    {
        let mut observe = |c: &RelaxedClusterMatrix| {
            calls += 1;
            match c.feasibility(params.k) {
                Ok(f) => {
                    worst_trace = worst_trace.max(f.trace_error);
                    worst_lo = worst_lo.min(f.min_eigenvalue);
                    worst_hi = worst_hi.max(f.max_eigenvalue);
                }
                Err(e) => failure = Some(e.to_string()),
            }
            match project_spectral(&c.0, params.k) {
                Ok(again) => worst_idem = worst_idem.max((&again.0 - &c.0).amax()),
                Err(e) => failure = Some(e.to_string()),
            }
        };
        if let Err(e) = fit_cmtl_with(&ds, &params, &tight(2_000), 0, Some(&mut observe)) {
            failure = Some(e.to_string());
        }
    }
    let pass = failure.is_none()
        && calls > 0
        && worst_trace <= 1e-8
        && worst_lo >= -1e-8
        && worst_hi <= 1.0 + 1e-8
        && worst_idem <= 1e-10;
    Outcome::new(
        pass,
        format!(
            "{calls} projections, max |tr C − K| {worst_trace:.2e}, eigenvalues in [{worst_lo:.2e}, 1{:+.2e}] (tol 1e-8), idempotence {worst_idem:.2e} (tol 1e-10){}",
            worst_hi - 1.0,
            failure.map(|f| format!(", error: {f}")).unwrap_or_default()
        ),
    )
}

// 7 ------------------------------------------------------------------------

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    mtlrisk::cmtl::canonical_labels(a) == mtlrisk::cmtl::canonical_labels(b)
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let params = cmtl_params();
    let mut recovered = 0;
    for seed in 0..10 {
        let (ds, planted) = planted_dataset(7_000 + seed);
        let model = fit_cmtl_with(&ds, &params, &tight(2_000), seed, None).unwrap();
        if same_partition(&model.assignments, &planted) {
            recovered += 1;
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        recovered >= 9 && elapsed < Duration::from_secs(60),
        format!("exact recovery on {recovered}/10 seeds (need 9), {elapsed:.2?} (limit 60s)"),
    )
}

// 8 ------------------------------------------------------------------------

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let cfg = SolverConfig::default().with_max_iters(5_000).with_rel_tol(1e-8);
    let (mut mtl, mut ind, mut glob) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..20u64 {
        let mut r = rng(8_000 + seed);
        let w = shared_support_weights(&mut r, 6, 30, 5);
        let ds = linear_tasks(&mut r, &w, &[25; 6], 0.5);
        let (train, test) = mtlrisk::dataset::stratified_split(&ds, 0.6, seed).unwrap();
        let grid = lambda_grid(lambda_max(&train), 12, 1e-3).unwrap();

        let best = tune_lambda(&train, &grid, 0.7, seed, |d, l| fit_mtl(d, l, &cfg)).unwrap().best;
        mtl.push(evaluate(&fit_mtl(&train, best, &cfg).unwrap(), &test).unwrap().total);

        for (setting, out) in [(Setting::Individual, &mut ind), (Setting::Global, &mut glob)] {
            let fit = |d: &mtlrisk::dataset::MultiTaskDataset, l: f64| {
                fit_stl(d, &StlSpec::new(setting, Penalty::Lasso, l)?, &cfg)
            };
            let best = tune_lambda(&train, &grid, 0.7, seed, fit).unwrap().best;
            out.push(evaluate(&fit(&train, best).unwrap(), &test).unwrap().total);
        }
    }
    let (m, i, g) = (median(&mut mtl), median(&mut ind), median(&mut glob));
    let elapsed = start.elapsed();
    Outcome::new(
        m < i && m < g && elapsed < Duration::from_secs(300),
        format!("median test MAE over 20 seeds: MTL {m:.4}, individual lasso {i:.4}, global lasso {g:.4}, {elapsed:.2?} (limit 300s)"),
    )
}

// 9 ------------------------------------------------------------------------

fn run_pipeline(dir: &Path, data: &Path) -> mtlrisk::Result<()> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let call = |args: Vec<String>| -> mtlrisk::Result<()> {
        let argv = std::iter::once("mtlrisk".to_string()).chain(args);
        mtlrisk::cli::run(argv).map_err(|e| match e {
            mtlrisk::cli::CliError::Run(e) => e,
            mtlrisk::cli::CliError::Usage(u) => mtlrisk::Error::Schema(u.to_string()),
        })
    };
    let split = dir.join("split");
    call(vec!["split".into(), "--data".into(), s(data), "--out-dir".into(), s(&split), "--seed".into(), "11".into()])?;
    call(vec![
        "train".into(), "--train".into(), s(&split.join("train.csv")), "--model".into(), "cmtl".into(),
        "--rho1".into(), "0.1".into(), "--rho2".into(), "0.1".into(), "--k".into(), "2".into(),
        "--out".into(), s(&dir.join("model.json")), "--trace-out".into(), s(&dir.join("trace.csv")),
    ])?;
    call(vec![
        "riskfactors".into(), "--model".into(), s(&dir.join("model.json")), "--top".into(), "5".into(),
        "--levels".into(), "task,cluster,population".into(),
        "--out-json".into(), s(&dir.join("report.json")), "--out-csv".into(), s(&dir.join("report.csv")),
    ])
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, _) = planted_dataset(9_000);
    let data = tmp.path().join("data.csv");
    std::fs::write(&data, dataset_csv(&ds)).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        if let Err(e) = run_pipeline(dir, &data) {
            return Outcome::new(false, format!("pipeline failed: {e}"));
        }
    }
    let files = [
        "split/train.csv",
        "split/test.csv",
        "split/split.json",
        "model.json",
        "trace.csv",
        "report.json",
        "report.csv",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap())
        .collect();
    Outcome::new(
        differing.is_empty(),
        format!("{} output files compared across two runs, differing: {differing:?}", files.len()),
    )
}

// 10 -----------------------------------------------------------------------

/// Grid search over `θ ∈ θ_lo + 1e-6·i` for the clipped sum closest to `K`.
/// The sum is monotone in `θ`, so the grid is searched by bisection on the
/// index and the neighbours of the crossing are compared.
fn theta_grid_oracle(sigma: &DVector<f64>, k: usize) -> DVector<f64> {
    const RES: f64 = 1e-6;
    let sum = |theta: f64| sigma.iter().map(|&s| (s - theta).clamp(0.0, 1.0)).sum::<f64>();
    let lo = sigma.min() - 1.0;
    let steps = ((sigma.max() - lo) / RES).ceil() as i64;
    let at = |i: i64| lo + RES * i as f64;
    let target = k as f64;
    let (mut a, mut b) = (0i64, steps);
    while b - a > 1 {
        let mid = (a + b) / 2;
        if sum(at(mid)) >= target {
            a = mid;
        } else {
            b = mid;
        }
    }
    let best = (a - 2..=b + 2)
        .filter(|i| (0..=steps).contains(i))
        .min_by(|&i, &j| (sum(at(i)) - target).abs().total_cmp(&(sum(at(j)) - target).abs()))
        .unwrap();
    sigma.map(|s| (s - at(best)).clamp(0.0, 1.0))
}

fn criterion_10() -> Outcome {
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let mut r = rng(10_000 + case);
        let t = r.random_range(2..=12);
        let k = r.random_range(1..t);
        let scale = r.random_range(0.1..3.0);
        let sigma = DVector::from_fn(t, |_, _| scale * normal(&mut r) + 0.5);
        let exact = capped_simplex_project(&sigma, k).unwrap();
        worst = worst.max((exact - theta_grid_oracle(&sigma, k)).amax());
    }
    Outcome::new(
        worst <= 1e-4,
        format!("1000 cases, max coordinate gap {worst:.2e} (tol 1e-4)"),
    )
}

// 11 -----------------------------------------------------------------------

fn criterion_11() -> Outcome {
    let mut worst = 0.0f64;
    for case in 0..100 {
        let mut r = rng(11_000 + case);
        let t = r.random_range(2..=12);
        let j = r.random_range(1..=8);
        let k = r.random_range(1..=t);
        let phi = normal_matrix(&mut r, t, j) * r.random_range(0.1..5.0);
        let mut assignments: Vec<usize> = (0..t).map(|i| if i < k { i } else { r.random_range(0..k) }).collect();
        for i in (1..t).rev() {
            assignments.swap(i, r.random_range(0..=i));
        }

        let o = cluster_indicator(&assignments, k).unwrap();
        let gram = &phi * phi.transpose();
        let rhs = gram.trace() - (o.transpose() * &gram * &o).trace();
        let mut lhs = 0.0;
        for c in 0..k {
            let members: Vec<usize> = (0..t).filter(|&i| assignments[i] == c).collect();
            let mut mean = nalgebra::RowDVector::zeros(j);
            for &i in &members {
                mean += phi.row(i);
            }
            mean /= members.len() as f64;
            lhs += members.iter().map(|&i| (phi.row(i) - &mean).norm_squared()).sum::<f64>();
        }
        let sse = partition_sse(&WeightMatrix(phi.clone()), &assignments, k).unwrap();
        worst = worst.max((lhs - rhs).abs()).max((sse - rhs).abs());
    }
    Outcome::new(
        worst <= 1e-10,
        format!("100 cases, max |SSE − (tr ΦΦᵀ − tr OᵀΦΦᵀO)| {worst:.2e} (tol 1e-10)"),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 11] = [
        (1, "L2,1 prox vs iterative oracle", criterion_1),
        (2, "gradients vs finite differences", criterion_2),
        (3, "OLS equivalence", criterion_3),
        (4, "FISTA vs ISTA", criterion_4),
        (5, "sparsity monotone in λ", criterion_5),
        (6, "CMTL projection feasibility", criterion_6),
        (7, "planted cluster recovery", criterion_7),
        (8, "MTL beats STL lasso", criterion_8),
        (9, "pipeline byte determinism", criterion_9),
        (10, "capped simplex vs θ-grid", criterion_10),
        (11, "SSE trace identity", criterion_11),
    ];
    let filter: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!(
            "{verdict} criterion {id:>2} [{name}]: {} ({:.2?})",
            outcome.detail,
            start.elapsed()
        );
        if !outcome.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
