//! Accelerated proximal gradient (FISTA) with backtracking on the step size.
//!
//! Minimizes `F(x) = f(x) + g(x)` over dense matrices, where `f` is smooth
//! (value and gradient supplied by a [`ProximalProblem`]) and `g` enters only
//! through its proximal map. Each iteration:
//!
//! 1. forms the search point `S = Φ_l + α_l (Φ_l − Φ_{l−1})` from the
//!    momentum sequence `d_l = (1 + sqrt(1 + 4 d_{l−1}²)) / 2`;
//! 2. tries `γ = 2^j γ_{l−1}` for `j = 0, 1, …` until the prox-gradient
//!    point `Φ⁺ = prox(S − ∇f(S)/γ, 1/γ)` satisfies `f(Φ⁺) ≤ Q_γ(S, Φ⁺)`;
//! 3. stops when the relative change of `F` drops below `rel_tol`.
//!
//! The method is not monotone, so [`solve`] returns the best iterate seen.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::frob_dot;
use crate::{Error, Result};

/// Relative slack on the sufficient-descent test, absorbing rounding in `f`.
pub const DESCENT_RTOL: f64 = 1e-12;

/// A composite problem `f + g` handed to [`solve`].
pub trait ProximalProblem {
    /// `f(x)`.
    fn smooth_value(&self, x: &DMatrix<f64>) -> f64;

    /// `∇f(x)`, same shape as `x`.
    fn smooth_grad(&self, x: &DMatrix<f64>) -> DMatrix<f64>;

    /// `argmin_z ½‖z − h‖² + step·g(z)`. Must return `h` when `step == 0`.
    fn prox(&self, h: &DMatrix<f64>, step: f64) -> Result<DMatrix<f64>>;

    /// `g(x)`; zero for constraint-only or unpenalized problems.
    fn nonsmooth_value(&self, _x: &DMatrix<f64>) -> f64 {
        0.0
    }

    fn full_objective(&self, x: &DMatrix<f64>) -> f64 {
        self.smooth_value(x) + self.nonsmooth_value(x)
    }

    /// Whether `f` can be evaluated at an extrapolated search point. When
    /// this returns false the solver drops momentum for that iteration.
    fn admissible_search_point(&self, _s: &DMatrix<f64>) -> bool {
        true
    }
}

/// How the extrapolation weight `α_l` is derived from the `d` sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Momentum {
    /// `α_l = (d_{l−2} − 1) / d_{l−1}` with `d_{−1} = 0`, `d_0 = 1`.
    #[default]
    Lagged,
    /// `α_l = (d_{l−1} − 1) / d_l`, one step ahead of [`Momentum::Lagged`].
    Lookahead,
    /// `α_l = 0`: plain proximal gradient (ISTA).
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Initial step-size denominator `γ_0`.
    pub gamma0: f64,
    pub backtrack_factor: f64,
    /// Hard cap on step-size increases within one iteration.
    pub max_backtracks: usize,
    pub momentum: Momentum,
    /// Reset momentum whenever the objective increases. Off by default.
    pub restart: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            rel_tol: 1e-6,
            gamma0: 1.0,
            backtrack_factor: 2.0,
            max_backtracks: 100,
            momentum: Momentum::Lagged,
            restart: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::param("rel_tol", format!("{} is negative", self.rel_tol)));
        }
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return Err(Error::param("gamma0", format!("{} is not positive", self.gamma0)));
        }
        if !(self.backtrack_factor > 1.0 && self.backtrack_factor.is_finite()) {
            return Err(Error::param(
                "backtrack_factor",
                format!("{} must exceed 1", self.backtrack_factor),
            ));
        }
        Ok(())
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_momentum(mut self, momentum: Momentum) -> Self {
        self.momentum = momentum;
        self
    }
}

/// Per-iteration diagnostics of a [`solve`] run. All vectors have one entry
/// per iteration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveTrace {
    /// `F(x₀)`.
    pub initial_objective: f64,
    /// `F(Φ_{l+1})`.
    pub objective_per_iter: Vec<f64>,
    /// Accepted `γ_l`.
    pub gamma_per_iter: Vec<f64>,
    /// Extrapolation weight actually used.
    pub alpha_per_iter: Vec<f64>,
    /// `d_l` after the iteration.
    pub momentum_per_iter: Vec<f64>,
    /// `f(Φ_{l+1})` at the accepted step.
    pub smooth_per_iter: Vec<f64>,
    /// `Q_γ(S_l, Φ_{l+1})` at the accepted step.
    pub surrogate_per_iter: Vec<f64>,
    /// Number of step-size increases taken in the iteration.
    pub backtracks_per_iter: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Iteration that produced the returned point (0 means the start point).
    pub best_iteration: usize,
}

impl SolveTrace {
    pub fn best_objective(&self) -> f64 {
        match self.best_iteration {
            0 => self.initial_objective,
            l => self.objective_per_iter[l - 1],
        }
    }

    pub fn summary(&self) -> TraceSummary {
        TraceSummary {
            iterations: self.iterations,
            converged: self.converged,
            best_iteration: self.best_iteration,
            initial_objective: self.initial_objective,
            best_objective: self.best_objective(),
            final_gamma: self.gamma_per_iter.last().copied().unwrap_or(f64::NAN),
        }
    }

    /// `iteration,objective,gamma,alpha` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,objective,gamma,alpha\n");
        for l in 0..self.iterations {
            out.push_str(&format!(
                "{},{},{},{}\n",
                l + 1,
                self.objective_per_iter[l],
                self.gamma_per_iter[l],
                self.alpha_per_iter[l]
            ));
        }
        out
    }
}

/// Compact trace record stored alongside fitted models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub iterations: usize,
    pub converged: bool,
    pub best_iteration: usize,
    pub initial_objective: f64,
    pub best_objective: f64,
    pub final_gamma: f64,
}

/// Iterates and momentum scalars carried between iterations.
#[derive(Debug, Clone)]
pub struct SearchState {
    pub current: DMatrix<f64>,
    pub previous: DMatrix<f64>,
    /// `d_{l−1}`.
    pub d_current: f64,
    /// `d_{l−2}`.
    pub d_previous: f64,
}

impl SearchState {
    pub fn new(start: DMatrix<f64>) -> Self {
        Self {
            previous: start.clone(),
            current: start,
            d_current: 1.0,
            d_previous: 0.0,
        }
    }

    pub fn next_d(d: f64) -> f64 {
        (1.0 + (1.0 + 4.0 * d * d).sqrt()) / 2.0
    }

    /// Extrapolation weight for the coming iteration. The lagged rule gives
    /// `α = −1` on the very first iteration, where it multiplies a zero
    /// difference; it is reported as 0.
    pub fn alpha(&self, momentum: Momentum) -> f64 {
        let a = match momentum {
            Momentum::Lagged => (self.d_previous - 1.0) / self.d_current,
            Momentum::Lookahead => (self.d_current - 1.0) / Self::next_d(self.d_current),
            Momentum::None => 0.0,
        };
        a.max(0.0)
    }

    pub fn search_point(&self, alpha: f64) -> DMatrix<f64> {
        if alpha == 0.0 {
            return self.current.clone();
        }
        &self.current + (&self.current - &self.previous) * alpha
    }

    fn advance(&mut self, next: DMatrix<f64>) {
        self.previous = std::mem::replace(&mut self.current, next);
        self.d_previous = self.d_current;
        self.d_current = Self::next_d(self.d_current);
    }

    fn reset_momentum(&mut self) {
        self.d_current = 1.0;
        self.d_previous = 0.0;
    }
}

fn check_shape(context: &'static str, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dims(
            context,
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(())
}

/// `Q_γ(S, Φ) = f(S) + (γ/2)‖Φ − S‖² + ⟨Φ − S, ∇f(S)⟩`.
pub fn surrogate_q<P: ProximalProblem + ?Sized>(
    problem: &P,
    s: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    gamma: f64,
) -> Result<f64> {
    check_shape("surrogate", s, phi)?;
    if !(gamma > 0.0) {
        return Err(Error::param("gamma", format!("{gamma} is not positive")));
    }
    let grad = problem.smooth_grad(s);
    check_shape("smooth gradient", s, &grad)?;
    Ok(surrogate_from_parts(problem.smooth_value(s), &grad, s, phi, gamma))
}

fn surrogate_from_parts(
    f_s: f64,
    grad_s: &DMatrix<f64>,
    s: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    gamma: f64,
) -> f64 {
    let diff = phi - s;
    f_s + 0.5 * gamma * diff.norm_squared() + frob_dot(&diff, grad_s)
}

/// An accepted backtracking step.
#[derive(Debug, Clone)]
pub struct AcceptedStep {
    pub next: DMatrix<f64>,
    pub gamma: f64,
    pub smooth_next: f64,
    pub surrogate: f64,
    pub backtracks: usize,
}

/// Smallest `γ = factor^j · gamma_prev` whose prox-gradient point from `s`
/// passes the sufficient-descent test.
pub fn backtracking_step<P: ProximalProblem + ?Sized>(
    problem: &P,
    s: &DMatrix<f64>,
    gamma_prev: f64,
    cfg: &SolverConfig,
) -> Result<AcceptedStep> {
    cfg.validate()?;
    if !(gamma_prev > 0.0) {
        return Err(Error::param("gamma_prev", format!("{gamma_prev} is not positive")));
    }
    let grad = problem.smooth_grad(s);
    check_shape("smooth gradient", s, &grad)?;
    backtrack(problem, s, problem.smooth_value(s), &grad, gamma_prev, cfg, 0)
}

fn backtrack<P: ProximalProblem + ?Sized>(
    problem: &P,
    s: &DMatrix<f64>,
    f_s: f64,
    grad_s: &DMatrix<f64>,
    gamma_prev: f64,
    cfg: &SolverConfig,
    iteration: usize,
) -> Result<AcceptedStep> {
    let mut gamma = gamma_prev;
    for j in 0..=cfg.max_backtracks {
        let step = 1.0 / gamma;
        let next = problem.prox(&(s - grad_s * step), step)?;
        let smooth_next = problem.smooth_value(&next);
        let q = surrogate_from_parts(f_s, grad_s, s, &next, gamma);
        let slack = DESCENT_RTOL * f_s.abs().max(q.abs());
        if smooth_next <= q + slack {
            return Ok(AcceptedStep {
                next,
                gamma,
                smooth_next,
                surrogate: q,
                backtracks: j,
            });
        }
        gamma *= cfg.backtrack_factor;
    }
    Err(Error::LineSearch {
        iteration,
        doublings: cfg.max_backtracks,
        gamma,
        recent: Vec::new(),
    })
}

const TAIL_LEN: usize = 5;

fn trace_tail(trace: &SolveTrace) -> Vec<f64> {
    let v = &trace.objective_per_iter;
    v[v.len().saturating_sub(TAIL_LEN)..].to_vec()
}

/// Runs FISTA from `x0` and returns the best iterate together with its trace.
pub fn solve<P: ProximalProblem + ?Sized>(
    problem: &P,
    x0: &DMatrix<f64>,
    cfg: &SolverConfig,
) -> Result<(DMatrix<f64>, SolveTrace)> {
    cfg.validate()?;
    let f0 = problem.full_objective(x0);
    if !f0.is_finite() {
        return Err(Error::Divergence {
            iteration: 0,
            value: f0,
            recent: Vec::new(),
        });
    }
    let mut trace = SolveTrace {
        initial_objective: f0,
        ..SolveTrace::default()
    };
    let mut state = SearchState::new(x0.clone());
    let mut best = x0.clone();
    let mut best_f = f0;
    let mut prev_f = f0;
    let mut gamma = cfg.gamma0;

    for l in 1..=cfg.max_iters {
        let mut alpha = state.alpha(cfg.momentum);
        let mut s = state.search_point(alpha);
        if alpha != 0.0 && !problem.admissible_search_point(&s) {
            alpha = 0.0;
            s = state.current.clone();
        }
        let f_s = problem.smooth_value(&s);
        let grad = problem.smooth_grad(&s);
        check_shape("smooth gradient", &s, &grad)?;
        let accepted = backtrack(problem, &s, f_s, &grad, gamma, cfg, l).map_err(|e| match e {
            Error::LineSearch {
                iteration,
                doublings,
                gamma,
                ..
            } => Error::LineSearch {
                iteration,
                doublings,
                gamma,
                recent: trace_tail(&trace),
            },
            other => other,
        })?;
        gamma = accepted.gamma;

        let f = problem.full_objective(&accepted.next);
        if !f.is_finite() {
            return Err(Error::Divergence {
                iteration: l,
                value: f,
                recent: trace_tail(&trace),
            });
        }
        if f < best_f {
            best_f = f;
            best.copy_from(&accepted.next);
            trace.best_iteration = l;
        }
        state.advance(accepted.next);

        trace.objective_per_iter.push(f);
        trace.gamma_per_iter.push(gamma);
        trace.alpha_per_iter.push(alpha);
        trace.momentum_per_iter.push(state.d_current);
        trace.smooth_per_iter.push(accepted.smooth_next);
        trace.surrogate_per_iter.push(accepted.surrogate);
        trace.backtracks_per_iter.push(accepted.backtracks);
        trace.iterations = l;

        let rel = (f - prev_f).abs() / prev_f.abs().max(1.0);
        if rel < cfg.rel_tol || rel == 0.0 {
            trace.converged = true;
            break;
        }
        if cfg.restart && f > prev_f {
            state.reset_momentum();
        }
        prev_f = f;
    }
    Ok((best, trace))
}
