//! Primal-dual optimization of `min_x max_y f(x, y)` for concave-side
//! problems: the primal variable moves along a moving-average estimate of
//! `∇_x f` (optionally with an adaptive scaler — "PDAda"; unit scaling is
//! "PDSM"), while the dual variable takes plain projected stochastic ascent
//! steps. The scaler, when present, is fed the raw `∇_x` samples, and the
//! dual side is never scaled adaptively.
//!
//! `make_minmax_schedule` instantiates the convergence theorem's parameter
//! choices with equality at the bounds; at its prescribed horizon the
//! averaged primal gradient norm and the tracking/dual-gap composite are
//! both `O(ε²)`.
//!
//! With the primal frozen (`η_x = 0`) the dual iterate contracts onto the
//! inner maximizer (this example also appears in the guide's min-max
//! chapter):
//!
//! ```
//! use sema_opt::minmax::{pd_run, DualSet, MinMaxConfig};
//! use sema_opt::problems::make_saddle_quadratic;
//! use sema_opt::rng::Stream;
//!
//! let problem = make_saddle_quadratic(3, 3, 1.0, 2).unwrap().min_max_problem(0.0);
//! let cfg = MinMaxConfig {
//!     gamma: 1.0,
//!     eta_x: 0.0, // frozen primal
//!     eta_y: 0.3,
//!     t: 100,
//!     dual_set: DualSet::Unconstrained,
//!     scaler: None,
//!     g0: 0.0,
//! };
//! let run = pd_run(&problem, &cfg, &mut Stream::new(3, 0)).unwrap();
//! let gap = run.trajectory.points.last().unwrap().delta_y;
//! assert!(gap < 1e-12);
//! ```

use crate::oracle::MinMaxOracle;
use crate::rng::Stream;
use crate::scalers::{scaler_update, ScalerKind, ScalerState};
use crate::vecmat::{all_finite, norm_sq, Vector};
use crate::{Error, Result};

/// Dual feasible set for the projected ascent step.
#[derive(Debug, Clone, PartialEq)]
pub enum DualSet {
    Unconstrained,
    /// Euclidean ball of the given radius about the origin.
    Ball(f64),
    /// Per-coordinate interval `[lo, hi]`.
    Box { lo: f64, hi: f64 },
}

impl DualSet {
    fn project(&self, y: &mut Vector) {
        match self {
            DualSet::Unconstrained => {}
            DualSet::Ball(r) => {
                let n = norm_sq(y).sqrt();
                if n > *r {
                    let s = r / n;
                    for yi in y.iter_mut() {
                        *yi *= s;
                    }
                }
            }
            DualSet::Box { lo, hi } => {
                for yi in y.iter_mut() {
                    *yi = yi.clamp(*lo, *hi);
                }
            }
        }
    }
}

/// Parameters of one primal-dual run. `scaler = None` selects unit primal
/// scaling (PDSM); `Some(kind)` selects adaptive scaling (PDAda).
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxConfig {
    pub gamma: f64,
    pub eta_x: f64,
    pub eta_y: f64,
    /// Theorem iteration count; the run executes `t + 1` steps.
    pub t: usize,
    pub dual_set: DualSet,
    pub scaler: Option<ScalerKind>,
    pub g0: f64,
}

impl MinMaxConfig {
    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        // η_x = 0 is allowed (frozen primal, used by the dual-recursion
        // verification); η_y must be positive.
        if !(self.eta_x >= 0.0 && self.eta_x.is_finite()) {
            return Err(Error::config("eta_x must be nonnegative"));
        }
        if !(self.eta_y > 0.0 && self.eta_y.is_finite()) {
            return Err(Error::config("eta_y must be positive"));
        }
        if let DualSet::Ball(r) = self.dual_set {
            if !(r > 0.0) {
                return Err(Error::config("dual ball radius must be positive"));
            }
        }
        Ok(())
    }
}

/// Declared constants consumed by the schedule builder.
#[derive(Debug, Clone, Copy)]
pub struct MinMaxMeta {
    /// Dual-side curvature: strong-concavity constant, or the dual PL
    /// constant for PL-but-not-strongly-concave problems.
    pub lambda: f64,
    /// Smoothness `L_f` of `∇f` in `(x, y)`.
    pub l_f: f64,
    /// Smoothness `L_F` of the primal envelope `F(x) = max_y f(x, y)`.
    pub l_primal: f64,
    /// Condition number `κ = L_f/λ`.
    pub kappa: f64,
    /// Total-variance bound `σ²` of both oracle components.
    pub sigma_sq: f64,
    /// `Δ_F = F(x₀) − F*`.
    pub delta_f: f64,
    /// Initial primal tracking error `Δ_{x,0}`.
    pub delta_x0: f64,
}

/// A min-max problem bundle with closed-form verification handles.
pub struct MinMaxProblem {
    pub name: String,
    pub oracle: MinMaxOracle,
    pub x0: Vector,
    pub y0: Vector,
    /// `f(x, y)`.
    pub f_value: Box<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>,
    /// Designated maximizer selection `y*(x)` (minimum-norm for problems
    /// whose argmax is a set).
    pub y_star: Box<dyn Fn(&[f64]) -> Vector + Send + Sync>,
    /// Envelope `F(x) = max_y f(x, y)`.
    pub primal_value: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    /// `∇F(x)`, which also equals `∇_x f(x, y*(x))`.
    pub primal_grad: Box<dyn Fn(&[f64]) -> Vector + Send + Sync>,
    pub meta: MinMaxMeta,
    /// Minimum of the envelope (for `Δ_F` bookkeeping).
    pub f_star: f64,
    /// Declared `‖O_x‖_∞` bound for Adam-family scale bounds.
    pub grad_inf_bound: Option<f64>,
    /// Declared `‖v‖` bound for the norm-based scaler.
    pub grad_norm_bound: Option<f64>,
}

impl MinMaxProblem {
    /// `(c_l, c_u)` scale bounds of a primal scaler kind on this problem.
    pub fn scaler_bounds(&self, kind: &ScalerKind, g0: f64) -> Result<(f64, f64)> {
        let g = match kind {
            ScalerKind::AdamPlus => self.grad_norm_bound,
            _ => self.grad_inf_bound,
        };
        crate::scalers::effective_bounds(kind, g.unwrap_or(0.0), g0)
    }
}

/// One recorded point of a primal-dual run. `delta_x` is the tracking error
/// `‖v_{t+1} − ∇_x f(x_t, y*(x_t))‖²`; `delta_y` is `‖y_t − y*(x_t)‖²`.
#[derive(Debug, Clone, Copy)]
pub struct SaddlePoint {
    pub t: usize,
    pub grad_norm_sq: f64,
    pub delta_x: f64,
    pub delta_y: f64,
    pub f_value: f64,
    pub eta_x: f64,
    pub gamma: f64,
}

/// Per-run metric record with exact running sums (points are thinned on
/// long runs).
#[derive(Debug, Clone, Default)]
pub struct SaddleTrajectory {
    pub points: Vec<SaddlePoint>,
    pub steps: usize,
    pub sum_grad_norm_sq: f64,
    pub sum_delta_x: f64,
    pub sum_delta_y: f64,
}

impl SaddleTrajectory {
    pub fn avg_grad_norm_sq(&self) -> f64 {
        self.sum_grad_norm_sq / self.steps.max(1) as f64
    }

    pub fn avg_delta_x(&self) -> f64 {
        self.sum_delta_x / self.steps.max(1) as f64
    }

    pub fn avg_delta_y(&self) -> f64 {
        self.sum_delta_y / self.steps.max(1) as f64
    }

    /// `(1/(T+1))Σ(Δ_{x,t} + L_f²·δ_{y,t})` — the theorem's composite.
    pub fn avg_combined(&self, l_f: f64) -> f64 {
        (self.sum_delta_x + l_f * l_f * self.sum_delta_y) / self.steps.max(1) as f64
    }
}

/// Result of one primal-dual run.
pub struct MinMaxRunResult {
    pub trajectory: SaddleTrajectory,
    pub x_out: Vector,
    pub y_out: Vector,
    pub tau: usize,
    pub x_final: Vector,
    pub y_final: Vector,
    pub v_final: Vector,
}

/// Execute the primal-dual loop: simultaneous updates from one joint
/// sample per step; `(x_τ, y_τ)` drawn uniformly over iterations.
pub fn pd_run(
    problem: &MinMaxProblem,
    cfg: &MinMaxConfig,
    stream: &mut Stream,
) -> Result<MinMaxRunResult> {
    cfg.validate()?;
    let total = cfg.t + 1;
    let tau = stream.index(total);
    let mut traj = SaddleTrajectory::default();
    let mut thinner = crate::minimize::Thinner::new(total);

    let mut x = problem.x0.clone();
    let mut y = problem.y0.clone();
    let (v0, _) = (problem.oracle.sample)(&x, &y, stream);
    let mut v = v0;
    let mut scaler = match &cfg.scaler {
        Some(kind) => {
            let mut s = ScalerState::new(kind, problem.oracle.dim_x, cfg.g0)?;
            if matches!(kind, ScalerKind::AdamPlus) {
                s.adamplus_bound = problem.grad_norm_bound;
            }
            Some(s)
        }
        None => None,
    };
    let mut x_out = x.clone();
    let mut y_out = y.clone();

    for t in 0..total {
        let (gx, gy) = (problem.oracle.sample)(&x, &y, stream);
        for (vi, &gi) in v.iter_mut().zip(&gx) {
            *vi = (1.0 - cfg.gamma) * *vi + cfg.gamma * gi;
        }
        if let (Some(state), Some(kind)) = (scaler.as_mut(), cfg.scaler.as_ref()) {
            scaler_update(state, kind, &gx, &v)?;
        }

        if t == tau {
            x_out.copy_from_slice(&x);
            y_out.copy_from_slice(&y);
        }

        let grad_f = (problem.primal_grad)(&x);
        let ys = (problem.y_star)(&x);
        let delta_y = crate::vecmat::dist_sq(&y, &ys);
        let delta_x = crate::vecmat::dist_sq(&v, &grad_f);
        let gsq = norm_sq(&grad_f);
        traj.sum_grad_norm_sq += gsq;
        traj.sum_delta_x += delta_x;
        traj.sum_delta_y += delta_y;
        traj.steps += 1;
        if thinner.record(t) {
            traj.points.push(SaddlePoint {
                t,
                grad_norm_sq: gsq,
                delta_x,
                delta_y,
                f_value: (problem.f_value)(&x, &y),
                eta_x: cfg.eta_x,
                gamma: cfg.gamma,
            });
        }

        match scaler.as_ref() {
            Some(state) => {
                let g0c = state.g0;
                for ((xi, vi), ui) in x.iter_mut().zip(&v).zip(&state.u) {
                    *xi -= cfg.eta_x * vi / (ui.sqrt() + g0c);
                }
            }
            None => {
                for (xi, vi) in x.iter_mut().zip(&v) {
                    *xi -= cfg.eta_x * vi;
                }
            }
        }
        for (yi, gi) in y.iter_mut().zip(&gy) {
            *yi += cfg.eta_y * gi;
        }
        cfg.dual_set.project(&mut y);

        let guard = crate::minimize::DIVERGENCE_GUARD;
        if !all_finite(&x)
            || !all_finite(&y)
            || norm_sq(&x) > guard * guard
            || norm_sq(&y) > guard * guard
        {
            return Err(Error::Diverged {
                step: t,
                detail: format!("iterate norm exceeded guard on {}", problem.name),
            });
        }
    }

    Ok(MinMaxRunResult {
        trajectory: traj,
        x_out,
        y_out,
        tau,
        x_final: x,
        y_final: y,
        v_final: v,
    })
}

/// Noiseless ceiling on the dual step: the conservative intersection of the
/// dual-recursion lemma's statement (`η_y ≤ λ`) and its proof's requirement
/// (`η_y ≤ λ/L_f²`).
pub fn eta_y_ceiling(lambda: f64, l_f: f64) -> f64 {
    (lambda / (l_f * l_f)).min(lambda)
}

/// Theorem schedule with equalities at the bounds:
/// `γ = c_lε²/(40c_uσ²)`, `η_y = c_lλε²/(400c_uL_f²σ²)`,
/// `η_x = √(c_l/c_u³)·min{η_yλ/(48L_fκ), γ/(8L_F)}`,
/// `T = max{10Δ_F/(η_xc_lε²), 10c_uΔ_{x,0}/(γc_l), 200c_uL_f²/(c_lη_yλε²)}`.
/// At `σ = 0`, `γ = 1` and `η_y` takes the documented noiseless ceiling.
pub fn make_minmax_schedule(
    eps: f64,
    meta: &MinMaxMeta,
    (c_l, c_u): (f64, f64),
) -> Result<MinMaxConfig> {
    if !(meta.lambda > 0.0) {
        return Err(Error::config("dual curvature lambda must be positive"));
    }
    if !(eps > 0.0 && meta.l_f > 0.0 && meta.l_primal > 0.0) {
        return Err(Error::config("schedule needs positive eps, L_f, L_F"));
    }
    if !(c_l > 0.0 && c_u >= c_l) {
        return Err(Error::config("scale bounds must satisfy 0 < c_l <= c_u"));
    }
    let (lambda, l_f, l_primal) = (meta.lambda, meta.l_f, meta.l_primal);
    let eps2 = eps * eps;
    let ceiling = eta_y_ceiling(lambda, l_f);
    let (gamma, eta_y) = if meta.sigma_sq == 0.0 {
        (1.0, ceiling)
    } else {
        (
            (c_l * eps2 / (40.0 * c_u * meta.sigma_sq)).min(1.0),
            (c_l * lambda * eps2 / (400.0 * c_u * l_f * l_f * meta.sigma_sq)).min(ceiling),
        )
    };
    let eta_x = (c_l / c_u.powi(3)).sqrt()
        * (eta_y * lambda / (48.0 * l_f * meta.kappa)).min(gamma / (8.0 * l_primal));
    let t1 = 10.0 * meta.delta_f / (eta_x * c_l * eps2);
    let t2 = 10.0 * c_u * meta.delta_x0 / (gamma * c_l);
    let t3 = 200.0 * c_u * l_f * l_f / (c_l * eta_y * lambda * eps2);
    let t = t1.max(t2).max(t3).max(1.0).ceil() as usize;
    Ok(MinMaxConfig {
        gamma,
        eta_x,
        eta_y,
        t,
        dual_set: DualSet::Unconstrained,
        scaler: None,
        g0: 0.0,
    })
}

/// Distance-squared to the problem's designated maximizer selection.
pub fn dual_gap_probe(problem: &MinMaxProblem, x: &[f64], y: &[f64]) -> f64 {
    crate::vecmat::dist_sq(y, &(problem.y_star)(x))
}

/// Run the unit-scaled and the trivial-scaler variants on a shared sample
/// stream and return the largest final-iterate deviation (they are the
/// same algorithm; this is the structural identity check).
pub fn pdsm_pdada_equivalence(
    problem: &MinMaxProblem,
    cfg: &MinMaxConfig,
    stream: &Stream,
) -> Result<f64> {
    let mut plain = cfg.clone();
    plain.scaler = None;
    plain.g0 = 0.0;
    let mut unit = cfg.clone();
    unit.scaler = Some(ScalerKind::Shb);
    unit.g0 = 0.0;
    let a = pd_run(problem, &plain, &mut stream.clone())?;
    let b = pd_run(problem, &unit, &mut stream.clone())?;
    let dev = a
        .x_final
        .iter()
        .zip(&b.x_final)
        .chain(a.y_final.iter().zip(&b.y_final))
        .map(|(p, q)| (p - q).abs())
        .fold(0.0f64, f64::max);
    Ok(dev)
}
