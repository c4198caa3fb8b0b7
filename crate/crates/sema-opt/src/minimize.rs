//! Smooth minimization with the moving-average estimator and an adaptive
//! step scaler (the "ASA" loop):
//!
//! ```text
//! v_{t+1} = (1−γ_t)v_t + γ_t·O_F(x_t)
//! u_{t+1} = scaler update fed the fresh sample (and v_{t+1})
//! x_{t+1} = x_t − η_t·v_{t+1}/(√u_{t+1} + G0)
//! return (x_τ, v_τ), τ uniform in {0..T}
//! ```
//!
//! Three parameter regimes are provided, each instantiated exactly at its
//! convergence theorem's bounds from problem metadata: a constant schedule
//! (`avg‖∇F‖² ≤ ε²` and `avg Δ_t ≤ 2ε²` at the prescribed T), a decreasing
//! schedule (`Õ(1/√T)` anytime rate), and a stagewise schedule for
//! gradient-dominated (PL) objectives that halves the suboptimality target
//! every stage while warm-starting `(x, v)`.

use crate::oracle::GradOracle;
use crate::rng::Stream;
use crate::scalers::{scaler_update, ScalerKind, ScalerState};
use crate::sema::{sema_step, SemaState};
use crate::vecmat::{all_finite, norm_sq, Vector};
use crate::{Error, Result};

/// Iterate-norm guard: beyond this the run is declared divergent.
pub const DIVERGENCE_GUARD: f64 = 1e12;
/// Trajectories longer than this are geometrically thinned when recorded.
pub const FULL_RECORD_LIMIT: usize = 100_000;

/// A minimization problem bundle: oracle, closed-form objective, start
/// point, and the declared constants the theorem schedules consume.
pub struct MinProblem {
    pub name: String,
    pub oracle: GradOracle,
    pub objective: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub x0: Vector,
    /// Minimum value `F*` (0 for all bundled synthetic problems).
    pub f_star: f64,
    /// Smoothness constant `L_F` of the objective gradient.
    pub l_smooth: f64,
    /// PL (gradient-dominance) constant, when the problem certifies one.
    pub mu: Option<f64>,
    /// Declared `‖O_F‖_∞` bound `G` used by the Adam-family scale bounds
    /// (metadata for schedules; a high-probability bound for Gaussian noise).
    pub grad_inf_bound: Option<f64>,
    /// Declared `‖v‖` bound used by the Adam+ scale bounds.
    pub grad_norm_bound: Option<f64>,
}

impl MinProblem {
    /// Initial suboptimality `F(x₀) − F*`.
    pub fn delta_f(&self) -> f64 {
        (self.objective)(&self.x0) - self.f_star
    }

    /// Schedule metadata, with `Δ₀` estimated as the mean of
    /// `‖O(x₀) − ∇F(x₀)‖²` over 100 fresh draws.
    pub fn schedule_meta(&self, stream: &mut Stream) -> Result<ScheduleMeta> {
        let g0 = self.oracle.grad(&self.x0)?;
        let n = 100;
        let mut delta0 = 0.0;
        for _ in 0..n {
            let d = self.oracle.draw(&self.x0, stream);
            delta0 += crate::vecmat::dist_sq(&d, &g0);
        }
        Ok(ScheduleMeta {
            sigma_sq: self.oracle.variance.sigma_sq,
            rel_c: self.oracle.variance.rel_c,
            l_smooth: self.l_smooth,
            delta_f: self.delta_f(),
            delta0: delta0 / n as f64,
        })
    }

    /// The `(c_l, c_u)` scale bounds for a scaler kind on this problem.
    pub fn scaler_bounds(&self, kind: &ScalerKind, g0: f64) -> Result<(f64, f64)> {
        let g = match kind {
            ScalerKind::AdamPlus => self.grad_norm_bound,
            _ => self.grad_inf_bound,
        };
        crate::scalers::effective_bounds(kind, g.unwrap_or(0.0), g0)
    }
}

/// Constants consumed by the schedule builders.
#[derive(Debug, Clone, Copy)]
pub struct ScheduleMeta {
    /// Total-variance bound `σ²`.
    pub sigma_sq: f64,
    /// Relative-variance constant `c`.
    pub rel_c: f64,
    /// Smoothness `L_F`.
    pub l_smooth: f64,
    /// `Δ_F = F(x₀) − F*`.
    pub delta_f: f64,
    /// `Δ₀`: initial tracking error of the estimator.
    pub delta0: f64,
}

/// One stage of a stagewise schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub gamma: f64,
    pub eta: f64,
    /// Theorem iteration count for the stage (the stage runs `t + 1` steps).
    pub t: usize,
    /// Suboptimality level `ε_k` entering the stage.
    pub eps: f64,
}

/// Parameter schedule for a run.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// Fixed `(γ, η)` for `t + 1` iterations.
    Constant { gamma: f64, eta: f64, t: usize },
    /// `γ_t = min(1, gamma_scale/√(t+1))`,
    /// `η_t = min(eta_slope·γ_t, eta_cap)`.
    Decreasing { gamma_scale: f64, eta_slope: f64, eta_cap: f64, t: usize },
    /// Per-stage constants with halving `ε_k`; `(x, v)` warm-start between
    /// stages. The scaler accumulator is reset each stage by default;
    /// `carry_scaler` keeps it instead (documented config alternative).
    Stagewise { stages: Vec<Stage>, carry_scaler: bool },
}

impl Schedule {
    /// Convenience constructor for an explicit constant schedule.
    pub fn constant(gamma: f64, eta: f64, t: usize) -> Schedule {
        Schedule::Constant { gamma, eta, t }
    }

    /// Total number of iterations the schedule executes.
    pub fn total_steps(&self) -> usize {
        match self {
            Schedule::Constant { t, .. } | Schedule::Decreasing { t, .. } => t + 1,
            Schedule::Stagewise { stages, .. } => stages.iter().map(|s| s.t + 1).sum(),
        }
    }

    /// `(γ_t, η_t)` at a flat iteration index.
    pub fn params_at(&self, t: usize) -> (f64, f64) {
        match self {
            Schedule::Constant { gamma, eta, .. } => (*gamma, *eta),
            Schedule::Decreasing { gamma_scale, eta_slope, eta_cap, .. } => {
                let gamma = (gamma_scale / ((t + 1) as f64).sqrt()).min(1.0);
                (gamma, (eta_slope * gamma).min(*eta_cap))
            }
            Schedule::Stagewise { stages, .. } => {
                let mut rem = t;
                for s in stages {
                    if rem <= s.t {
                        return (s.gamma, s.eta);
                    }
                    rem -= s.t + 1;
                }
                let last = stages.last().expect("empty stagewise schedule");
                (last.gamma, last.eta)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let check = |gamma: f64, eta: f64| -> Result<()> {
            if !(gamma > 0.0 && gamma <= 1.0) {
                return Err(Error::config(format!("gamma {gamma} outside (0, 1]")));
            }
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::config(format!("eta {eta} not positive")));
            }
            Ok(())
        };
        match self {
            Schedule::Constant { gamma, eta, .. } => check(*gamma, *eta),
            Schedule::Decreasing { gamma_scale, eta_slope, eta_cap, .. } => {
                if *gamma_scale <= 0.0 || *eta_slope <= 0.0 || *eta_cap <= 0.0 {
                    return Err(Error::config("decreasing schedule needs positive rates"));
                }
                Ok(())
            }
            Schedule::Stagewise { stages, .. } => {
                if stages.is_empty() {
                    return Err(Error::config("stagewise schedule has no stages"));
                }
                for s in stages {
                    check(s.gamma, s.eta)?;
                }
                Ok(())
            }
        }
    }
}

/// Constant schedule at the theorem's bounds:
/// `γ = ε²c_l/(12σ²c_u)` (capped at 1; 1 when `σ = 0`),
/// `η = min(γ√c_l/(2L√c_u³), 1/(√2·L·c_u))`,
/// `T = max(6Δ₀c_u/(γε²c_l), 12Δ_F/(ηε²c_l))`.
pub fn make_schedule_constant(
    eps: f64,
    meta: &ScheduleMeta,
    (c_l, c_u): (f64, f64),
) -> Result<Schedule> {
    check_schedule_inputs(eps, meta, c_l, c_u)?;
    let l = meta.l_smooth;
    let gamma = if meta.sigma_sq == 0.0 {
        1.0
    } else {
        (eps * eps * c_l / (12.0 * meta.sigma_sq * c_u)).min(1.0)
    };
    let eta = (gamma * c_l.sqrt() / (2.0 * l * c_u.powi(3).sqrt()))
        .min(1.0 / (2.0f64.sqrt() * l * c_u));
    let t1 = 6.0 * meta.delta0 * c_u / (gamma * eps * eps * c_l);
    let t2 = 12.0 * meta.delta_f / (eta * eps * eps * c_l);
    let t = t1.max(t2).max(1.0).ceil() as usize;
    Ok(Schedule::Constant { gamma, eta, t })
}

/// Decreasing schedule at the theorem's rates:
/// `γ_t = c_l/(8σ²c·c_u·√(t+1))`, `η_t = min(γ_t√c_l/(2L√c_u³), 1/(2Lc_u))`,
/// run for `t_total + 1` iterations (the rate is anytime; the caller picks
/// the horizon). When the problem declares `c = 0`, `c = 1` is substituted.
pub fn make_schedule_decreasing(
    meta: &ScheduleMeta,
    (c_l, c_u): (f64, f64),
    t_total: usize,
) -> Result<Schedule> {
    check_schedule_inputs(1.0, meta, c_l, c_u)?;
    if meta.sigma_sq == 0.0 {
        return Err(Error::config(
            "decreasing schedule targets noisy oracles; use the constant schedule at σ=0",
        ));
    }
    let c = if meta.rel_c > 0.0 { meta.rel_c } else { 1.0 };
    let l = meta.l_smooth;
    Ok(Schedule::Decreasing {
        gamma_scale: c_l / (8.0 * meta.sigma_sq * c * c_u),
        eta_slope: c_l.sqrt() / (2.0 * l * c_u.powi(3).sqrt()),
        eta_cap: 1.0 / (2.0 * l * c_u),
        t: t_total,
    })
}

/// Stagewise schedule for `μ`-PL objectives: `K = ⌈log₂(ε₀/ε)⌉` stages with
/// `ε₀ = max(Δ_F, Δ₀)`, `ε_{k+1} = ε_k/2`,
/// `γ_k = μc_lε_k/(24c_uσ²)`, `η_k = min(γ_k√c_l/(2L√c_u³), 1/(√2·L·c_u))`,
/// `T_k = max(48c_u/(μγ_kc_l), 1/(6μη_kc_l))`.
pub fn make_schedule_stagewise(
    mu: f64,
    eps: f64,
    meta: &ScheduleMeta,
    (c_l, c_u): (f64, f64),
) -> Result<Schedule> {
    check_schedule_inputs(eps, meta, c_l, c_u)?;
    if !(mu > 0.0) {
        return Err(Error::config(format!("PL constant mu {mu} must be positive")));
    }
    let eps0 = meta.delta_f.max(meta.delta0);
    let k = if eps >= eps0 { 0 } else { (eps0 / eps).log2().ceil() as usize };
    let l = meta.l_smooth;
    let mut stages = Vec::with_capacity(k);
    let mut eps_k = eps0;
    for _ in 0..k {
        let gamma = if meta.sigma_sq == 0.0 {
            1.0
        } else {
            (mu * c_l * eps_k / (24.0 * c_u * meta.sigma_sq)).min(1.0)
        };
        let eta = (gamma * c_l.sqrt() / (2.0 * l * c_u.powi(3).sqrt()))
            .min(1.0 / (2.0f64.sqrt() * l * c_u));
        let t = (48.0 * c_u / (mu * gamma * c_l))
            .max(1.0 / (6.0 * mu * eta * c_l))
            .ceil() as usize;
        stages.push(Stage { gamma, eta, t, eps: eps_k });
        eps_k /= 2.0;
    }
    if stages.is_empty() {
        // ε target already met by the initializer: a single no-op-length
        // stage keeps the run well-formed.
        return Ok(Schedule::Stagewise { stages: vec![], carry_scaler: false });
    }
    Ok(Schedule::Stagewise { stages, carry_scaler: false })
}

fn check_schedule_inputs(eps: f64, meta: &ScheduleMeta, c_l: f64, c_u: f64) -> Result<()> {
    let mut missing = Vec::new();
    if !(eps > 0.0) {
        return Err(Error::config("target eps must be positive"));
    }
    if !(meta.l_smooth > 0.0) {
        missing.push("L_F");
    }
    if meta.sigma_sq < 0.0 || !meta.sigma_sq.is_finite() {
        missing.push("sigma_sq");
    }
    if meta.delta_f < 0.0 || !meta.delta_f.is_finite() {
        missing.push("Delta_F");
    }
    if meta.delta0 < 0.0 || !meta.delta0.is_finite() {
        missing.push("Delta_0");
    }
    if !missing.is_empty() {
        return Err(Error::config(format!(
            "schedule metadata missing or invalid: {}",
            missing.join(", ")
        )));
    }
    if !(c_l > 0.0 && c_u >= c_l) {
        return Err(Error::config("scale bounds must satisfy 0 < c_l <= c_u"));
    }
    Ok(())
}

/// One recorded trajectory point (indices are iteration numbers; `delta` is
/// the tracking error `‖v_{t+1} − ∇F(x_t)‖²`).
#[derive(Debug, Clone, Copy)]
pub struct TrajPoint {
    pub t: usize,
    pub grad_norm_sq: f64,
    /// Running mean of `‖∇F‖²` over iterations `0..=t` (maintained exactly).
    pub avg_grad_norm_sq: f64,
    pub delta: f64,
    pub v_norm_sq: f64,
    pub objective: f64,
    pub eta: f64,
    pub gamma: f64,
}

/// Per-run metric record: thinned points plus exact running sums.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub points: Vec<TrajPoint>,
    pub steps: usize,
    pub sum_grad_norm_sq: f64,
    pub sum_delta: f64,
}

impl Trajectory {
    /// `(1/(T+1))Σ‖∇F(x_t)‖²`.
    pub fn avg_grad_norm_sq(&self) -> f64 {
        self.sum_grad_norm_sq / self.steps.max(1) as f64
    }

    /// `(1/(T+1))ΣΔ_t`.
    pub fn avg_delta(&self) -> f64 {
        self.sum_delta / self.steps.max(1) as f64
    }
}

/// Geometric thinning helper: records every step up to the limit, then at
/// indices growing by factors of 1.1 (the final step is always recorded).
pub(crate) struct Thinner {
    total: usize,
    next: usize,
}

impl Thinner {
    pub fn new(total: usize) -> Self {
        Thinner { total, next: 0 }
    }

    pub fn record(&mut self, t: usize) -> bool {
        if self.total <= FULL_RECORD_LIMIT || t + 1 == self.total {
            return true;
        }
        if t >= self.next {
            self.next = ((self.next.max(99) as f64 * 1.1).ceil() as usize).max(t + 1);
            return true;
        }
        false
    }
}

/// Result of one optimizer run.
pub struct RunResult {
    pub trajectory: Trajectory,
    /// Uniformly sampled output iterate `x_τ` and its estimate `v_τ`.
    pub x_out: Vector,
    pub v_out: Vector,
    pub tau: usize,
    /// Final iterate and estimate.
    pub x_final: Vector,
    pub v_final: Vector,
    /// Objective value at the end of each stage (stagewise schedules only).
    pub stage_finals: Vec<f64>,
}

/// Execute the ASA loop for a schedule. `g0_offset` is the scale offset
/// `G0`; the estimator starts at one oracle draw `v₀ = O_F(x₀)`.
pub fn asa_run(
    problem: &MinProblem,
    kind: &ScalerKind,
    g0_offset: f64,
    schedule: &Schedule,
    stream: &mut Stream,
) -> Result<RunResult> {
    schedule.validate()?;
    let total = schedule.total_steps();
    let tau = stream.index(total.max(1));
    let mut traj = Trajectory::default();
    let mut thinner = Thinner::new(total);

    let mut x = problem.x0.clone();
    let v0 = problem.oracle.draw(&x, stream);
    let mut sema = SemaState::new(v0, schedule.params_at(0).0.min(1.0))?;
    let mut scaler = ScalerState::new(kind, problem.oracle.dim, g0_offset)?;
    if matches!(kind, ScalerKind::AdamPlus) {
        scaler.adamplus_bound = problem.grad_norm_bound;
    }
    let mut x_out = x.clone();
    let mut v_out = sema.v.clone();
    let mut stage_finals = Vec::new();

    let stage_spans: Vec<(usize, usize)> = match schedule {
        Schedule::Stagewise { stages, .. } => {
            let mut spans = Vec::new();
            let mut start = 0;
            for s in stages {
                spans.push((start, start + s.t));
                start += s.t + 1;
            }
            spans
        }
        _ => Vec::new(),
    };
    let carry_scaler = matches!(schedule, Schedule::Stagewise { carry_scaler: true, .. });

    for t in 0..total {
        let (gamma, eta) = schedule.params_at(t);
        sema.gamma = gamma;
        let g = problem.oracle.draw(&x, stream);
        sema_step(&mut sema, &g);
        scaler_update(&mut scaler, kind, &g, &sema.v)?;

        if t == tau {
            x_out.copy_from_slice(&x);
            v_out.copy_from_slice(&sema.v);
        }

        let truth = problem.oracle.grad(&x)?;
        let gsq = norm_sq(&truth);
        let delta = crate::vecmat::dist_sq(&sema.v, &truth);
        traj.sum_grad_norm_sq += gsq;
        traj.sum_delta += delta;
        traj.steps += 1;
        if thinner.record(t) {
            traj.points.push(TrajPoint {
                t,
                grad_norm_sq: gsq,
                avg_grad_norm_sq: traj.sum_grad_norm_sq / traj.steps as f64,
                delta,
                v_norm_sq: norm_sq(&sema.v),
                objective: (problem.objective)(&x),
                eta,
                gamma,
            });
        }

        let g0c = scaler.g0;
        for ((xi, vi), ui) in x.iter_mut().zip(&sema.v).zip(&scaler.u) {
            *xi -= eta * vi / (ui.sqrt() + g0c);
        }
        if !all_finite(&x) || norm_sq(&x) > DIVERGENCE_GUARD * DIVERGENCE_GUARD {
            return Err(Error::Diverged {
                step: t,
                detail: format!("iterate norm {:.3e} on {}", norm_sq(&x).sqrt(), problem.name),
            });
        }

        if stage_spans.iter().any(|&(_, end)| end == t) {
            stage_finals.push((problem.objective)(&x));
            if !carry_scaler {
                scaler = ScalerState::new(kind, problem.oracle.dim, g0_offset)?;
                if matches!(kind, ScalerKind::AdamPlus) {
                    scaler.adamplus_bound = problem.grad_norm_bound;
                }
            }
        }
    }

    Ok(RunResult {
        x_final: x,
        v_final: sema.v.clone(),
        x_out,
        v_out,
        tau,
        trajectory: traj,
        stage_finals,
    })
}

/// Report of the heavy-ball two-form equivalence replay.
#[derive(Debug, Clone, Copy)]
pub struct EquivalenceReport {
    /// Largest iterate deviation over the run.
    pub max_deviation: f64,
    /// First step where the deviation exceeded the tolerance, if any.
    pub first_divergent_step: Option<usize>,
    pub tolerance: f64,
}

/// Replay the two algebraically equivalent heavy-ball forms on a shared
/// sample stream and compare iterates:
///
/// - averaged form: `v ← βv + (1−β)g`, `x ← x − η·v`, `v₀ = g₀`;
/// - momentum form: `w ← βw − η(1−β)·g`, `x ← x + w`, `w₀ = −η·g₀`.
pub fn shb_equivalence_check(
    eta: f64,
    beta: f64,
    problem: &MinProblem,
    t_total: usize,
    stream: &Stream,
) -> Result<EquivalenceReport> {
    if !(0.0..1.0).contains(&beta) || eta <= 0.0 {
        return Err(Error::config("equivalence check needs beta in [0,1), eta > 0"));
    }
    let tol = 1e-10;
    let mut sa = stream.clone();
    let mut sb = stream.clone();

    let mut xa = problem.x0.clone();
    let mut va = problem.oracle.draw(&xa, &mut sa);
    let mut xb = problem.x0.clone();
    let wb0 = problem.oracle.draw(&xb, &mut sb);
    let mut wb: Vector = wb0.iter().map(|g| -eta * g).collect();

    let mut max_dev: f64 = 0.0;
    let mut first_bad = None;
    for t in 0..t_total {
        let ga = problem.oracle.draw(&xa, &mut sa);
        for (v, &g) in va.iter_mut().zip(&ga) {
            *v = beta * *v + (1.0 - beta) * g;
        }
        for (x, &v) in xa.iter_mut().zip(&va) {
            *x -= eta * v;
        }

        let gb = problem.oracle.draw(&xb, &mut sb);
        for (w, &g) in wb.iter_mut().zip(&gb) {
            *w = beta * *w - eta * (1.0 - beta) * g;
        }
        for (x, &w) in xb.iter_mut().zip(&wb) {
            *x += w;
        }

        let dev = xa.iter().zip(&xb).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        max_dev = max_dev.max(dev);
        if dev > tol && first_bad.is_none() {
            first_bad = Some(t);
        }
    }
    Ok(EquivalenceReport { max_deviation: max_dev, first_divergent_step: first_bad, tolerance: tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::gaussian_oracle;

    fn quadratic_problem(d: usize, sigma: f64) -> MinProblem {
        // F(x) = ½‖x‖², L = 1.
        MinProblem {
            name: "unit-quadratic".into(),
            oracle: gaussian_oracle(|x: &[f64]| x.to_vec(), sigma, d),
            objective: Box::new(|x: &[f64]| 0.5 * norm_sq(x)),
            x0: vec![1.0; d],
            f_star: 0.0,
            l_smooth: 1.0,
            mu: Some(1.0),
            grad_inf_bound: Some(1.0 + 5.0 * sigma),
            grad_norm_bound: Some((d as f64).sqrt() * (1.0 + 5.0 * sigma)),
        }
    }

    #[test]
    fn gamma_one_shb_is_exact_gradient_descent() {
        let p = quadratic_problem(3, 0.0);
        let eta = 0.3;
        let sched = Schedule::constant(1.0, eta, 50);
        let run = asa_run(&p, &ScalerKind::Shb, 0.0, &sched, &mut Stream::new(1, 0)).unwrap();
        // x_{t+1} = (1−η)x_t exactly.
        let want = (1.0f64 - eta).powi(51);
        for &xi in &run.x_final {
            assert!((xi - want).abs() < 1e-12, "{xi} vs {want}");
        }
    }

    #[test]
    fn one_step_solve_on_identity_quadratic() {
        // F(x)=½‖x‖², γ=1, η=1, σ=0, x₀=(1,0) → x₁=(0,0).
        let mut p = quadratic_problem(2, 0.0);
        p.x0 = vec![1.0, 0.0];
        let sched = Schedule::constant(1.0, 1.0, 0);
        let run = asa_run(&p, &ScalerKind::Shb, 0.0, &sched, &mut Stream::new(2, 0)).unwrap();
        assert_eq!(run.x_final, vec![0.0, 0.0]);
    }

    #[test]
    fn constant_schedule_matches_theorem_formulas() {
        // SHB bounds, σ=1 (declared total), ε=0.1 ⇒ γ = ε²/12.
        let meta = ScheduleMeta {
            sigma_sq: 1.0,
            rel_c: 0.0,
            l_smooth: 1.0,
            delta_f: 1.0,
            delta0: 1.0,
        };
        match make_schedule_constant(0.1, &meta, (1.0, 1.0)).unwrap() {
            Schedule::Constant { gamma, eta, t } => {
                assert!((gamma - 0.01 / 12.0).abs() < 1e-15);
                assert!((eta - gamma / 2.0).abs() < 1e-15);
                let t1 = 6.0 / (gamma * 0.01);
                let t2 = 12.0 / (eta * 0.01);
                assert_eq!(t, t1.max(t2).ceil() as usize);
            }
            other => panic!("unexpected schedule {other:?}"),
        }
    }

    #[test]
    fn constant_schedule_noiseless_degenerates_to_gd() {
        let meta = ScheduleMeta {
            sigma_sq: 0.0,
            rel_c: 0.0,
            l_smooth: 2.0,
            delta_f: 1.0,
            delta0: 0.0,
        };
        match make_schedule_constant(0.1, &meta, (1.0, 1.0)).unwrap() {
            Schedule::Constant { gamma, .. } => assert_eq!(gamma, 1.0),
            other => panic!("unexpected schedule {other:?}"),
        }
    }

    #[test]
    fn constant_schedule_monotone_in_sigma() {
        let mk = |s: f64| ScheduleMeta {
            sigma_sq: s,
            rel_c: 0.0,
            l_smooth: 1.0,
            delta_f: 1.0,
            delta0: 1.0,
        };
        let (g1, t1) = match make_schedule_constant(0.1, &mk(1.0), (1.0, 1.0)).unwrap() {
            Schedule::Constant { gamma, t, .. } => (gamma, t),
            _ => unreachable!(),
        };
        // Doubling σ (σ² ×4) quarters γ, hence η, and raises T by ≥4×.
        let (g2, t2) = match make_schedule_constant(0.1, &mk(4.0), (1.0, 1.0)).unwrap() {
            Schedule::Constant { gamma, t, .. } => (gamma, t),
            _ => unreachable!(),
        };
        assert!((g2 - g1 / 4.0).abs() < 1e-15);
        assert!(t2 as f64 >= 4.0 * t1 as f64 * 0.999, "{t2} vs {t1}");
    }

    #[test]
    fn decreasing_schedule_rates() {
        let meta = ScheduleMeta {
            sigma_sq: 1.0,
            rel_c: 1.0,
            l_smooth: 1.0,
            delta_f: 1.0,
            delta0: 1.0,
        };
        let sched = make_schedule_decreasing(&meta, (1.0, 1.0), 1_000).unwrap();
        let (g0, _) = sched.params_at(0);
        assert!((g0 - 1.0 / 8.0).abs() < 1e-15);
        // γ_t·√(t+1) constant by construction.
        for t in [0usize, 3, 15, 99] {
            let (g, e) = sched.params_at(t);
            assert!((g * ((t + 1) as f64).sqrt() - 1.0 / 8.0).abs() < 1e-12);
            assert!(e <= 0.5 + 1e-15); // η_t ≤ 1/(2L·c_u)
        }
    }

    #[test]
    fn stagewise_schedule_shape() {
        let meta = ScheduleMeta {
            sigma_sq: 1.0,
            rel_c: 0.0,
            l_smooth: 1.0,
            delta_f: 1.0,
            delta0: 0.5,
        };
        // ε₀ = 1, ε = 1/8 ⇒ K = 3; γ halves, T doubles per stage.
        match make_schedule_stagewise(1.0, 0.125, &meta, (1.0, 1.0)).unwrap() {
            Schedule::Stagewise { stages, .. } => {
                assert_eq!(stages.len(), 3);
                for w in stages.windows(2) {
                    assert!((w[1].gamma - w[0].gamma / 2.0).abs() < 1e-15);
                    let ratio = w[1].t as f64 / w[0].t as f64;
                    assert!((ratio - 2.0).abs() < 0.01, "ratio {ratio}");
                    assert_eq!(w[1].eps, w[0].eps / 2.0);
                }
            }
            other => panic!("unexpected schedule {other:?}"),
        }
        // ε already met: zero stages.
        match make_schedule_stagewise(1.0, 2.0, &meta, (1.0, 1.0)).unwrap() {
            Schedule::Stagewise { stages, .. } => assert!(stages.is_empty()),
            other => panic!("unexpected schedule {other:?}"),
        }
        assert!(make_schedule_stagewise(0.0, 0.125, &meta, (1.0, 1.0)).is_err());
    }

    #[test]
    fn divergence_guard_reports_step() {
        let p = quadratic_problem(2, 0.0);
        // Gradient ascent at a huge step diverges on a quadratic.
        let sched = Schedule::constant(1.0, -10.0, 1_000);
        // negative eta is rejected as config...
        assert!(asa_run(&p, &ScalerKind::Shb, 0.0, &sched, &mut Stream::new(1, 0)).is_err());
        // ...so drive divergence with an overshooting positive step instead.
        let sched = Schedule::constant(1.0, 3.0, 1_000);
        match asa_run(&p, &ScalerKind::Shb, 0.0, &sched, &mut Stream::new(1, 0)) {
            Err(Error::Diverged { step, .. }) => assert!(step > 0),
            other => panic!("expected divergence, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn shb_two_forms_agree() {
        // β = 0: both are SGD; exact equality.
        let p = quadratic_problem(3, 0.5);
        let rep = shb_equivalence_check(0.1, 0.0, &p, 200, &Stream::new(5, 0)).unwrap();
        assert_eq!(rep.max_deviation, 0.0);
        // β = 0.9 noiseless, T = 100.
        let p = quadratic_problem(3, 0.0);
        let rep = shb_equivalence_check(0.1, 0.9, &p, 100, &Stream::new(5, 0)).unwrap();
        assert!(rep.max_deviation <= 1e-10, "{}", rep.max_deviation);
        // β = 0.5 with a shared noisy stream, T = 1000.
        let p = quadratic_problem(3, 1.0);
        let rep = shb_equivalence_check(0.05, 0.5, &p, 1_000, &Stream::new(6, 0)).unwrap();
        assert!(rep.max_deviation <= 1e-10, "{}", rep.max_deviation);
        assert!(rep.first_divergent_step.is_none());
    }

    #[test]
    fn tau_is_within_range_and_deterministic() {
        let p = quadratic_problem(2, 0.1);
        let sched = Schedule::constant(0.5, 0.1, 99);
        let a = asa_run(&p, &ScalerKind::Shb, 0.0, &sched, &mut Stream::new(9, 1)).unwrap();
        let b = asa_run(&p, &ScalerKind::Shb, 0.0, &sched, &mut Stream::new(9, 1)).unwrap();
        assert!(a.tau < 100);
        assert_eq!(a.tau, b.tau);
        assert_eq!(a.x_final, b.x_final);
        assert_eq!(a.x_out, b.x_out);
    }

    #[test]
    fn trajectory_sums_match_points_on_full_record() {
        let p = quadratic_problem(2, 0.3);
        let sched = Schedule::constant(0.5, 0.1, 500);
        let run = asa_run(&p, &ScalerKind::Shb, 0.0, &sched, &mut Stream::new(3, 0)).unwrap();
        assert_eq!(run.trajectory.points.len(), 501);
        let s: f64 = run.trajectory.points.iter().map(|p| p.grad_norm_sq).sum();
        assert!((s - run.trajectory.sum_grad_norm_sq).abs() < 1e-9);
    }
}
