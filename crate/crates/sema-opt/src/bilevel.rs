//! Stochastic bilevel optimization: `min_x F(x) = f(x, y*(x))` with
//! `y*(x) = argmin_y g(x, y)` and `g(x, ·)` strongly convex.
//!
//! The hypergradient is
//! `∇F(x) = ∇_x f − ∇²_{xy}g·[∇²_{yy}g]⁻¹·∇_y f`, all evaluated at
//! `(x, y*(x))`. Two solvers are provided:
//!
//! - **SMB**: one moving-average estimate `z` of the composite
//!   `O_fx − O_gxy·h·O_fy`, where `h` is the randomized truncated-series
//!   estimate of the inverse Hessian; the lower-level `y` runs plain
//!   stochastic gradient descent on `g`.
//! - **SBMA**: separate moving averages for every component
//!   (`u ≈ ∇_x f`, `v ≈ ∇_y f`, `V ≈ ∇²_{xy}g`, `H ≈ [∇²_{yy}g]⁻¹`), each
//!   projected onto its norm bound after every step; the descent direction
//!   is `u − V·H·v`. Projection keeps each state bounded under arbitrary
//!   oracle noise, removing the need for a spectral floor on the Hessian
//!   oracle draws.
//!
//! Schedule builders instantiate the convergence theorems' parameter bounds
//! mechanically from the problem's declared constants.

use crate::oracle::{BilevelConstants, BilevelOracle};
use crate::rng::Stream;
use crate::scalers::{scaler_update, ScalerKind, ScalerState};
use crate::sema::{neumann_inverse_sample, project_ball, NeumannConfig};
use crate::vecmat::{all_finite, norm_sq, spectral_clip, sym_inverse, Mat, Vector};
use crate::{Error, Result};

/// Closure of `x` alone.
pub type XVecFn = Box<dyn Fn(&[f64]) -> Vector + Send + Sync>;
/// Closure of `(x, y)` returning a vector.
pub type XYVecFn = Box<dyn Fn(&[f64], &[f64]) -> Vector + Send + Sync>;
/// Closure of `(x, y)` returning a matrix.
pub type XYMatFn = Box<dyn Fn(&[f64], &[f64]) -> Mat + Send + Sync>;

/// A bilevel problem bundle: component oracles plus closed-form
/// verification handles.
pub struct BilevelProblem {
    pub name: String,
    pub oracle: BilevelOracle,
    pub x0: Vector,
    pub y0: Vector,
    /// Exact lower-level solution `y*(x)`.
    pub y_star: XVecFn,
    /// Exact hypergradient `∇F(x)` (fast closed form).
    pub hypergrad: XVecFn,
    /// Envelope `F(x) = f(x, y*(x))`.
    pub envelope: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub f_star: f64,
    /// Exact components for the generic hypergradient formula and the
    /// exact-inverse debug mode.
    pub grad_fx: XYVecFn,
    pub grad_fy: XYVecFn,
    pub grad_gy: XYVecFn,
    /// Exact `∇²_{xy} g(x, y)` (`dim_x × dim_y`).
    pub gxy: XYMatFn,
    /// Exact `∇²_{yy} g(x, y)` (SPD, `dim_y × dim_y`).
    pub gyy: XYMatFn,
    /// Certified Lipschitz constant of `x ↦ y*(x)`.
    pub l_y: f64,
}

/// Exact hypergradient by the displayed formula with exact `y*(x)`:
/// `∇_x f − ∇²_{xy}g·[∇²_{yy}g]⁻¹·∇_y f` at `(x, y*(x))`.
pub fn hypergradient_exact(problem: &BilevelProblem, x: &[f64]) -> Result<Vector> {
    let ys = (problem.y_star)(x);
    let gfx = (problem.grad_fx)(x, &ys);
    let gfy = (problem.grad_fy)(x, &ys);
    let hinv = sym_inverse(&(problem.gyy)(x, &ys))?;
    let correction = (problem.gxy)(x, &ys).matvec(&hinv.matvec(&gfy));
    Ok(gfx.iter().zip(&correction).map(|(a, b)| a - b).collect())
}

/// Parameters of one bilevel run.
#[derive(Debug, Clone, PartialEq)]
pub struct BilevelConfig {
    pub gamma: f64,
    pub eta_x: f64,
    pub eta_y: f64,
    /// Truncation depth of the randomized inverse-Hessian series.
    pub k_neumann: usize,
    /// Theorem iteration count; the run executes `t + 1` steps.
    pub t: usize,
    /// Debug mode: substitute the exact `[∇²_{yy}g]⁻¹` for the randomized
    /// series draw, isolating estimator error sources in tests.
    pub exact_inverse: bool,
    /// Optional primal scaler hook (extension beyond the stated theorem);
    /// fed the composite direction samples.
    pub scaler: Option<ScalerKind>,
    pub g0: f64,
}

impl BilevelConfig {
    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if !(self.eta_x >= 0.0 && self.eta_y > 0.0) {
            return Err(Error::config("step sizes must be positive (eta_x may be 0)"));
        }
        if self.k_neumann == 0 {
            return Err(Error::config("k_neumann must be at least 1"));
        }
        Ok(())
    }
}

/// Declared constants consumed by the schedule builders.
#[derive(Debug, Clone, Copy)]
pub struct BilevelMeta {
    pub constants: BilevelConstants,
    /// Lipschitz constant of `y*`.
    pub l_y: f64,
    /// `Δ_F = F(x₀) − F*`.
    pub delta_f: f64,
    /// Initial tracking error of the composite estimate `z₀`.
    pub delta_z0: f64,
    /// `δ_{y,0} = ‖y₀ − y*(x₀)‖²`.
    pub delta_y0: f64,
}

/// Derived constants of the single-estimator analysis at truncation `k`:
/// `c0` (tracking-to-dual-gap factor), `c1` (per-step variance factor), and
/// the smoothness-type constant `l_f = c0·(1 + L_y²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmbConstants {
    pub c0: f64,
    pub c1: f64,
    pub l_f: f64,
}

/// Mechanical evaluation of the analysis constants:
/// `C₀ = 2L_fx² + 6C_fy²L_gxy²/λ² + 6C_fy²C_gxy²L_gyy²/λ⁴ + 6L_fy²C_gxy²/λ²`,
/// `C₁ = 2σ² + (k²/C_gyy²)·(6σ²(C_fy²+σ²) + 24C_gxy²(C_fy²+σ²) + 6C_gxy²σ²)`,
/// `L_F = C₀(1 + L_y²)`.
pub fn smb_constants(c: &BilevelConstants, k: usize, l_y: f64) -> SmbConstants {
    let l2 = c.lambda * c.lambda;
    let l4 = l2 * l2;
    let c0 = 2.0 * c.l_fx * c.l_fx
        + 6.0 * c.c_fy * c.c_fy * c.l_gxy * c.l_gxy / l2
        + 6.0 * c.c_fy * c.c_fy * c.c_gxy * c.c_gxy * c.l_gyy * c.l_gyy / l4
        + 6.0 * c.l_fy * c.l_fy * c.c_gxy * c.c_gxy / l2;
    let kk = (k * k) as f64 / (c.c_gyy * c.c_gyy);
    let s2 = c.sigma_sq;
    let c1 = 2.0 * s2
        + 6.0 * s2 * kk * (c.c_fy * c.c_fy + s2)
        + 24.0 * c.c_gxy * c.c_gxy * kk * (c.c_fy * c.c_fy + s2)
        + 6.0 * c.c_gxy * c.c_gxy * kk * s2;
    SmbConstants { c0, c1, l_f: c0 * (1.0 + l_y * l_y) }
}

/// Stability cap on the lower-level step: the dual-recursion lemma's
/// `η_y ≤ λ`, intersected with `1/C_gyy` (one-step stability of descent on
/// a quadratic whose Hessian reaches `C_gyy`).
fn eta_y_cap(c: &BilevelConstants) -> f64 {
    c.lambda.min(1.0 / c.c_gyy)
}

/// Truncation depth at the theorem bound:
/// `k = ⌈(C_gyy/2λ)·ln(64C_gxy²/(λ²ε²))⌉`, at least 1.
pub fn smb_k_neumann(c: &BilevelConstants, eps: f64) -> usize {
    let arg = 64.0 * c.c_gxy * c.c_gxy / (c.lambda * c.lambda * eps * eps);
    let k = (c.c_gyy / (2.0 * c.lambda)) * arg.max(1.0).ln();
    (k.ceil() as usize).max(1)
}

/// Theorem schedule for SMB with equalities at the bounds:
/// `γ = ε²/(20C₁)`, `η_y = λε²/(640C₀σ²)` (capped for stability),
/// `η_x = min{η_yλ/(32√C₀·L_y), γ/(8L_F)}`,
/// `T = max{20Δ_F/(η_xε²), 20Δ_{z,0}/(γε²), 320C₀/(η_yλε²)}`.
pub fn make_smb_schedule(eps: f64, meta: &BilevelMeta) -> Result<BilevelConfig> {
    let c = &meta.constants;
    validate_bilevel_meta(eps, meta)?;
    let k = smb_k_neumann(c, eps);
    let sc = smb_constants(c, k, meta.l_y);
    if !(sc.c0 > 0.0) {
        return Err(Error::config("analysis constant C0 vanished; check L_fx/C_gxy"));
    }
    let eps2 = eps * eps;
    let gamma = if sc.c1 == 0.0 { 1.0 } else { (eps2 / (20.0 * sc.c1)).min(1.0) };
    let cap = eta_y_cap(c);
    let eta_y = if c.sigma_sq == 0.0 {
        cap
    } else {
        (c.lambda * eps2 / (640.0 * sc.c0 * c.sigma_sq)).min(cap)
    };
    let term_kappa = if meta.l_y > 0.0 {
        eta_y * c.lambda / (32.0 * sc.c0.sqrt() * meta.l_y)
    } else {
        f64::INFINITY
    };
    let eta_x = term_kappa.min(gamma / (8.0 * sc.l_f));
    let t1 = 20.0 * meta.delta_f / (eta_x * eps2);
    let t2 = 20.0 * meta.delta_z0 / (gamma * eps2);
    let t3 = 320.0 * sc.c0 / (eta_y * c.lambda * eps2);
    Ok(BilevelConfig {
        gamma,
        eta_x,
        eta_y,
        k_neumann: k,
        t: t1.max(t2).max(t3).max(1.0).ceil() as usize,
        exact_inverse: false,
        scaler: None,
        g0: 0.0,
    })
}

/// Theorem schedule for SBMA, computed mechanically from the appendix
/// formulas with `C₁ = 2`, `C₂ = 6C_fy²/λ²`, `C₃ = 6C_fy²C_gxy²`,
/// `C₄ = 6C_gxy²/λ²`, `C₅ = 2γ²(k²/C_gyy² + 1/λ²)`. Since `γ` bounds depend
/// on `C₅(γ, k)` and `k` depends on `γ`, the pair is resolved by a short
/// conservative fixed-point iteration.
pub fn make_sbma_schedule(eps: f64, meta: &BilevelMeta) -> Result<BilevelConfig> {
    let c = &meta.constants;
    validate_bilevel_meta(eps, meta)?;
    let l2 = c.lambda * c.lambda;
    let l4 = l2 * l2;
    let sc = smb_constants(c, 1, meta.l_y);
    let (c1, c2, c3, c4) = (
        2.0,
        6.0 * c.c_fy * c.c_fy / l2,
        6.0 * c.c_fy * c.c_fy * c.c_gxy * c.c_gxy,
        6.0 * c.c_gxy * c.c_gxy / l2,
    );
    let eps2 = eps * eps;
    let s_sigma = (c1 + c2 + c3) * c.sigma_sq;
    let mut gamma: f64 = 1.0;
    let mut k: usize = 1;
    for _ in 0..64 {
        let c5 = 2.0 * gamma * gamma * ((k * k) as f64 / (c.c_gyy * c.c_gyy) + 1.0 / l2);
        let gamma_next = (eps2 / (80.0 * (s_sigma + c4 * c5))).min(1.0).min(gamma);
        let arg = (4.0 / gamma_next) * (4.0 / c.lambda + 4.0 * gamma_next * gamma_next / c.lambda)
            / (c.lambda * eps2);
        let k_next = (((c.c_gyy / c.lambda) * arg.max(1.0).ln()).ceil() as usize).max(k);
        if gamma_next == gamma && k_next == k {
            break;
        }
        gamma = gamma_next;
        k = k_next;
    }
    // Final clamp against C₅ at the settled k (lowering γ only loosens the
    // bound, so this preserves feasibility).
    let c5 = 2.0 * gamma * gamma * ((k * k) as f64 / (c.c_gyy * c.c_gyy) + 1.0 / l2);
    gamma = gamma.min(eps2 / (80.0 * (s_sigma + c4 * c5)));
    let d = c1 * c.l_fx * c.l_fx
        + c2 * c.l_fy * c.l_fy
        + c3 * c.l_gxy * c.l_gxy
        + c4 * c.l_gyy * c.l_gyy / l4;
    let cap = eta_y_cap(c);
    let eta_y = if c.sigma_sq == 0.0 {
        cap
    } else {
        (c.lambda * eps2 / ((80.0 * sc.c0 + 1600.0 * d) * c.sigma_sq)).min(cap)
    };
    let root = (sc.c0 + c1 + c2 + c3 + c4 * c.l_gyy * c.l_gyy / l4).sqrt();
    let term_kappa = if meta.l_y > 0.0 {
        eta_y * c.lambda / (56.0 * root * meta.l_y)
    } else {
        f64::INFINITY
    };
    let d2 = c1 * c.l_fx * c.l_fx
        + c2 * c.l_fy * c.l_fy
        + c3 * c.l_gxy * c.l_gxy
        + 2.0 * c4 * c.l_gyy * c.l_gyy / l4;
    let eta_x = term_kappa.min(gamma / (8.0 * (1.0 + meta.l_y) * d2.max(f64::MIN_POSITIVE)));
    let t1 = 20.0 * meta.delta_f / (eta_x * eps2);
    let t2 = 800.0 * (sc.c0 + d) * meta.delta_y0 / (eta_y * c.lambda * eps2);
    // Initial tracking errors of the four component estimators are each
    // bounded by the shared per-component variance σ².
    let t3 = 40.0 / eps2 * ((c1 + c2 + c3 + c4) * c.sigma_sq.max(meta.delta_z0)) / gamma;
    Ok(BilevelConfig {
        gamma,
        eta_x,
        eta_y,
        k_neumann: k,
        t: t1.max(t2).max(t3).max(1.0).ceil() as usize,
        exact_inverse: false,
        scaler: None,
        g0: 0.0,
    })
}

fn validate_bilevel_meta(eps: f64, meta: &BilevelMeta) -> Result<()> {
    let c = &meta.constants;
    if !(eps > 0.0) {
        return Err(Error::config("target eps must be positive"));
    }
    let mut missing = Vec::new();
    if !(c.lambda > 0.0) {
        missing.push("lambda");
    }
    if !(c.c_gyy >= c.lambda) {
        missing.push("c_gyy (must be >= lambda)");
    }
    if c.sigma_sq < 0.0 || !c.sigma_sq.is_finite() {
        missing.push("sigma_sq");
    }
    if meta.delta_f < 0.0 || meta.delta_z0 < 0.0 || meta.delta_y0 < 0.0 {
        missing.push("initial error terms");
    }
    if !missing.is_empty() {
        return Err(Error::config(format!("bilevel metadata invalid: {}", missing.join(", "))));
    }
    Ok(())
}

/// One recorded point: `delta_z = ‖z_{t+1} − ∇F(x_t)‖²`,
/// `delta_y = ‖y_t − y*(x_t)‖²`.
#[derive(Debug, Clone, Copy)]
pub struct BilevelPoint {
    pub t: usize,
    pub grad_norm_sq: f64,
    pub delta_z: f64,
    pub delta_y: f64,
}

/// Per-run metric record with exact running sums.
#[derive(Debug, Clone, Default)]
pub struct BilevelTrajectory {
    pub points: Vec<BilevelPoint>,
    pub steps: usize,
    pub sum_grad_norm_sq: f64,
    pub sum_delta_z: f64,
    pub sum_delta_y: f64,
}

impl BilevelTrajectory {
    pub fn avg_grad_norm_sq(&self) -> f64 {
        self.sum_grad_norm_sq / self.steps.max(1) as f64
    }

    pub fn avg_delta_z(&self) -> f64 {
        self.sum_delta_z / self.steps.max(1) as f64
    }

    pub fn avg_delta_y(&self) -> f64 {
        self.sum_delta_y / self.steps.max(1) as f64
    }

    /// `(1/(T+1))Σ(Δ_{z,t} + C₀δ_{y,t})`.
    pub fn avg_composite(&self, c0: f64) -> f64 {
        (self.sum_delta_z + c0 * self.sum_delta_y) / self.steps.max(1) as f64
    }
}

/// Result of one bilevel run.
pub struct BilevelRunResult {
    pub trajectory: BilevelTrajectory,
    pub x_final: Vector,
    pub y_final: Vector,
    pub z_final: Vector,
    pub x_out: Vector,
    pub tau: usize,
}

fn inverse_hessian_draw(
    problem: &BilevelProblem,
    cfg: &BilevelConfig,
    x: &[f64],
    y: &[f64],
    stream: &mut Stream,
) -> Result<Mat> {
    if cfg.exact_inverse {
        return sym_inverse(&(problem.gyy)(x, y));
    }
    let ncfg = NeumannConfig {
        k_t: cfg.k_neumann,
        c_gyy: problem.oracle.constants.c_gyy,
        lambda: problem.oracle.constants.lambda,
    };
    let mut sampler = |s: &mut Stream| (problem.oracle.o_gyy)(x, y, s);
    neumann_inverse_sample(&mut sampler, &ncfg, stream)
}

/// Draw the composite direction sample
/// `O_fx − O_gxy·h·O_fy` at `(x, y)` with a fresh inverse-Hessian draw.
fn composite_draw(
    problem: &BilevelProblem,
    cfg: &BilevelConfig,
    x: &[f64],
    y: &[f64],
    stream: &mut Stream,
) -> Result<Vector> {
    let h = inverse_hessian_draw(problem, cfg, x, y, stream)?;
    let gfx = (problem.oracle.o_fx)(x, y, stream);
    let gfy = (problem.oracle.o_fy)(x, y, stream);
    let gxy = (problem.oracle.o_gxy)(x, y, stream);
    let corr = gxy.matvec(&h.matvec(&gfy));
    Ok(gfx.iter().zip(&corr).map(|(a, b)| a - b).collect())
}

fn guard(x: &[f64], y: &[f64], t: usize, name: &str) -> Result<()> {
    let g = crate::minimize::DIVERGENCE_GUARD;
    if !all_finite(x) || !all_finite(y) || norm_sq(x) > g * g || norm_sq(y) > g * g {
        return Err(Error::Diverged { step: t, detail: format!("iterate norm exceeded guard on {name}") });
    }
    Ok(())
}

/// Execute the single-estimator solver: initialization draws `h₀` and the
/// composite `z₀` at `(x₀, y₀)`; each step draws all components at the
/// current pair, updates `z` by the moving average, steps `x` along `z`
/// (optionally scaled) and `y` by lower-level stochastic descent.
pub fn smb_run(
    problem: &BilevelProblem,
    cfg: &BilevelConfig,
    stream: &mut Stream,
) -> Result<BilevelRunResult> {
    cfg.validate()?;
    let total = cfg.t + 1;
    let tau = stream.index(total);
    let mut x = problem.x0.clone();
    let mut y = problem.y0.clone();
    let mut z = composite_draw(problem, cfg, &x, &y, stream)?;
    let mut scaler = match &cfg.scaler {
        Some(kind) => Some(ScalerState::new(kind, problem.oracle.dim_x, cfg.g0)?),
        None => None,
    };
    let mut traj = BilevelTrajectory::default();
    let mut thinner = crate::minimize::Thinner::new(total);
    let mut x_out = x.clone();

    for t in 0..total {
        let inc = composite_draw(problem, cfg, &x, &y, stream)?;
        for (zi, &gi) in z.iter_mut().zip(&inc) {
            *zi = (1.0 - cfg.gamma) * *zi + cfg.gamma * gi;
        }
        if let (Some(state), Some(kind)) = (scaler.as_mut(), cfg.scaler.as_ref()) {
            scaler_update(state, kind, &inc, &z)?;
        }
        let gy = (problem.oracle.o_gy)(&x, &y, stream);

        if t == tau {
            x_out.copy_from_slice(&x);
        }
        record_point(problem, &mut traj, &mut thinner, t, &x, &y, &z);

        match scaler.as_ref() {
            Some(state) => {
                let g0c = state.g0;
                for ((xi, zi), ui) in x.iter_mut().zip(&z).zip(&state.u) {
                    *xi -= cfg.eta_x * zi / (ui.sqrt() + g0c);
                }
            }
            None => {
                for (xi, zi) in x.iter_mut().zip(&z) {
                    *xi -= cfg.eta_x * zi;
                }
            }
        }
        for (yi, gi) in y.iter_mut().zip(&gy) {
            *yi -= cfg.eta_y * gi;
        }
        guard(&x, &y, t, &problem.name)?;
    }

    Ok(BilevelRunResult { trajectory: traj, x_final: x, y_final: y, z_final: z, x_out, tau })
}

fn record_point(
    problem: &BilevelProblem,
    traj: &mut BilevelTrajectory,
    thinner: &mut crate::minimize::Thinner,
    t: usize,
    x: &[f64],
    y: &[f64],
    z: &[f64],
) {
    let grad = (problem.hypergrad)(x);
    let ys = (problem.y_star)(x);
    let gsq = norm_sq(&grad);
    let delta_z = crate::vecmat::dist_sq(z, &grad);
    let delta_y = crate::vecmat::dist_sq(y, &ys);
    traj.sum_grad_norm_sq += gsq;
    traj.sum_delta_z += delta_z;
    traj.sum_delta_y += delta_y;
    traj.steps += 1;
    if thinner.record(t) {
        traj.points.push(BilevelPoint { t, grad_norm_sq: gsq, delta_z, delta_y });
    }
}

/// Tolerance for the per-step projected-state invariant assertions.
const PROJECTION_TOL: f64 = 1e-9;

/// Execute the per-component solver: moving averages `u, v, V, H` with
/// `v, V, H` projected onto their declared bounds after every step; the
/// direction is `z = u − V·H·v`. The projected-norm invariants are asserted
/// every iteration (a violation indicates an implementation bug and is
/// reported as a verification error).
pub fn sbma_run(
    problem: &BilevelProblem,
    cfg: &BilevelConfig,
    stream: &mut Stream,
) -> Result<BilevelRunResult> {
    cfg.validate()?;
    let c = &problem.oracle.constants;
    let total = cfg.t + 1;
    let tau = stream.index(total);
    let mut x = problem.x0.clone();
    let mut y = problem.y0.clone();

    let mut u = (problem.oracle.o_fx)(&x, &y, stream);
    let mut v = project_ball(&(problem.oracle.o_fy)(&x, &y, stream), c.c_fy);
    let mut big_v = spectral_clip(&(problem.oracle.o_gxy)(&x, &y, stream), c.l_gxy)?;
    let mut big_h =
        spectral_clip(&inverse_hessian_draw(problem, cfg, &x, &y, stream)?, 1.0 / c.lambda)?;

    let mut traj = BilevelTrajectory::default();
    let mut thinner = crate::minimize::Thinner::new(total);
    let mut x_out = x.clone();
    let mut z = vec![0.0; problem.oracle.dim_x];

    for t in 0..total {
        let ofx = (problem.oracle.o_fx)(&x, &y, stream);
        let ofy = (problem.oracle.o_fy)(&x, &y, stream);
        let ogxy = (problem.oracle.o_gxy)(&x, &y, stream);
        let h_draw = inverse_hessian_draw(problem, cfg, &x, &y, stream)?;
        let ogy = (problem.oracle.o_gy)(&x, &y, stream);
        let gamma = cfg.gamma;

        for (ui, &gi) in u.iter_mut().zip(&ofx) {
            *ui = (1.0 - gamma) * *ui + gamma * gi;
        }
        let blended: Vector =
            v.iter().zip(&ofy).map(|(a, b)| (1.0 - gamma) * a + gamma * b).collect();
        v = project_ball(&blended, c.c_fy);
        big_v = spectral_clip(&big_v.mat_scale(1.0 - gamma).mat_add(&ogxy.mat_scale(gamma)), c.l_gxy)?;
        big_h = spectral_clip(
            &big_h.mat_scale(1.0 - gamma).mat_add(&h_draw.mat_scale(gamma)),
            1.0 / c.lambda,
        )?;

        let tol = 1.0 + PROJECTION_TOL;
        if norm_sq(&v).sqrt() > c.c_fy * tol
            || big_v.spectral_norm() > c.l_gxy * tol
            || big_h.spectral_norm() > tol / c.lambda
        {
            return Err(Error::Verification(format!(
                "projected state escaped its bound at step {t} (internal bug)"
            )));
        }

        let corr = big_v.matvec(&big_h.matvec(&v));
        for ((zi, &ui), &ci) in z.iter_mut().zip(&u).zip(&corr) {
            *zi = ui - ci;
        }

        if t == tau {
            x_out.copy_from_slice(&x);
        }
        record_point(problem, &mut traj, &mut thinner, t, &x, &y, &z);

        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi -= cfg.eta_x * zi;
        }
        for (yi, gi) in y.iter_mut().zip(&ogy) {
            *yi -= cfg.eta_y * gi;
        }
        guard(&x, &y, t, &problem.name)?;
    }

    Ok(BilevelRunResult { trajectory: traj, x_final: x, y_final: y, z_final: z, x_out, tau })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::BilevelOracle;
    use crate::vecmat::Mat;

    /// Scalar benchmark: g(x,y) = ½(y − x)², f(x,y) = ½y².
    /// y*(x) = x, ∇F(x) = x, F(x) = x²/2. Optional Gaussian noise on the
    /// vector oracles; the Hessian oracles are exact.
    fn scalar_problem(sigma: f64) -> BilevelProblem {
        BilevelProblem {
            name: "scalar-bilevel".into(),
            oracle: BilevelOracle {
                dim_x: 1,
                dim_y: 1,
                o_fx: Box::new(move |_x, _y, s| vec![0.0 + sigma * s.normal()]),
                o_fy: Box::new(move |_x, y, s| vec![y[0] + sigma * s.normal()]),
                o_gy: Box::new(move |x, y, s| vec![y[0] - x[0] + sigma * s.normal()]),
                o_gxy: Box::new(|_x, _y, _s| Mat::from_diag(&[-1.0])),
                o_gyy: Box::new(|_x, _y, _s| Mat::from_diag(&[1.0])),
                constants: BilevelConstants {
                    lambda: 1.0,
                    c_fy: 10.0,
                    c_gxy: 1.0,
                    c_gyy: 1.0,
                    l_fx: 0.0,
                    l_fy: 1.0,
                    l_gy: 1.0,
                    l_gxy: 1.0,
                    l_gyy: 0.0,
                    sigma_sq: sigma * sigma,
                },
            },
            x0: vec![1.0],
            y0: vec![0.0],
            y_star: Box::new(|x| x.to_vec()),
            hypergrad: Box::new(|x| x.to_vec()),
            envelope: Box::new(|x| 0.5 * x[0] * x[0]),
            f_star: 0.0,
            grad_fx: Box::new(|_x, _y| vec![0.0]),
            grad_fy: Box::new(|_x, y| y.to_vec()),
            grad_gy: Box::new(|x, y| vec![y[0] - x[0]]),
            gxy: Box::new(|_x, _y| Mat::from_diag(&[-1.0])),
            gyy: Box::new(|_x, _y| Mat::from_diag(&[1.0])),
            l_y: 1.0,
        }
    }

    #[test]
    fn scalar_hypergradient_is_x() {
        let p = scalar_problem(0.0);
        for xv in [-2.0, 0.5, 3.0] {
            let g = hypergradient_exact(&p, &[xv]).unwrap();
            assert!((g[0] - xv).abs() < 1e-12);
            // Fast closure agrees with the generic formula.
            assert!(((p.hypergrad)(&[xv])[0] - g[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn y_independent_upper_objective_drops_correction() {
        // f(x,y) = ½x²: ∇_y f ≡ 0 ⇒ ∇F = ∇_x f = x.
        let mut p = scalar_problem(0.0);
        p.grad_fx = Box::new(|x, _y| x.to_vec());
        p.grad_fy = Box::new(|_x, _y| vec![0.0]);
        let g = hypergradient_exact(&p, &[1.5]).unwrap();
        assert!((g[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn exact_mode_matches_hypergradient_descent() {
        // σ=0, γ=1, exact inverse, y tracked exactly by fast inner steps is
        // not needed here: with y₀ = y*(x₀) and η_y large the inner problem
        // stays solved, so x follows x ← x − η_x·∇F(x) = (1−η_x)x.
        let mut p = scalar_problem(0.0);
        p.y0 = vec![1.0]; // = y*(x₀)
        let cfg = BilevelConfig {
            gamma: 1.0,
            eta_x: 0.1,
            eta_y: 1.0, // exact inner solve each step: y ← y − (y − x) = x
            k_neumann: 1,
            t: 20,
            exact_inverse: true,
            scaler: None,
            g0: 0.0,
        };
        let run = smb_run(&p, &cfg, &mut Stream::new(1, 0)).unwrap();
        // Hand recursion: z_{t+1} = 0 − (−1)(1)(y_t) = y_t, so
        // x_{t+1} = x_t − 0.1·y_t and y_{t+1} = x_t (inner solve at the
        // pre-update x_t). y lags x by exactly one step.
        let (mut xh, mut yh) = (1.0f64, 1.0f64);
        for _ in 0..21 {
            let z = yh;
            let x_pre = xh;
            xh -= 0.1 * z;
            yh = x_pre;
        }
        assert!((run.x_final[0] - xh).abs() < 1e-10, "{} vs {xh}", run.x_final[0]);
    }

    #[test]
    fn noiseless_smb_converges_on_scalar_problem() {
        let p = scalar_problem(0.0);
        let cfg = BilevelConfig {
            gamma: 1.0,
            eta_x: 0.1,
            eta_y: 0.5,
            k_neumann: 1,
            t: 500,
            exact_inverse: true,
            scaler: None,
            g0: 0.0,
        };
        let run = smb_run(&p, &cfg, &mut Stream::new(2, 0)).unwrap();
        assert!(run.x_final[0].abs() < 1e-6, "{}", run.x_final[0]);
        assert!(run.trajectory.avg_grad_norm_sq() < 0.1);
    }

    #[test]
    fn k_truncation_grows_additively_when_eps_halves() {
        let c = scalar_problem(1.0).oracle.constants;
        // k(ε/2) − k(ε) = (C_gyy/λ)·ln 2, up to ceiling.
        let mut c2 = c;
        c2.c_gyy = 4.0;
        let k1 = smb_k_neumann(&c2, 0.05) as f64;
        let k2 = smb_k_neumann(&c2, 0.025) as f64;
        let add = 4.0 * 2.0f64.ln();
        assert!((k2 - k1 - add).abs() <= 1.0 + 1e-12, "{k1} {k2}");
        // Perfectly conditioned (λ = C_gyy = 1): k = ⌈½ln(64C_gxy²/(λ²ε²))⌉.
        let k = smb_k_neumann(&c, 0.1);
        let want = (0.5 * (64.0 / 0.01f64).ln()).ceil() as usize;
        assert_eq!(k, want);
    }

    #[test]
    fn smb_constants_match_exact_rationals() {
        // Integer constants: λ=1, C_fy=2, C_gxy=3, C_gyy=4, L_fx=1, L_fy=2,
        // L_gxy=1, L_gyy=1, σ²=1, k=2, L_y=3. Independent hand evaluation:
        // C₀ = 2·1 + 6·4·1 + 6·4·9·1 + 6·4·9 = 2+24+216+216 = 458.
        // k²/C_gyy² = 4/16 = 1/4.
        // C₁ = 2 + 6·(1/4)·5 + 24·9·(1/4)·5 + 6·9·(1/4) = 2 + 7.5 + 270 + 13.5 = 293.
        // L_F = 458·(1+9) = 4580.
        let c = BilevelConstants {
            lambda: 1.0,
            c_fy: 2.0,
            c_gxy: 3.0,
            c_gyy: 4.0,
            l_fx: 1.0,
            l_fy: 2.0,
            l_gy: 1.0,
            l_gxy: 1.0,
            l_gyy: 1.0,
            sigma_sq: 1.0,
        };
        let sc = smb_constants(&c, 2, 3.0);
        assert_eq!(sc.c0, 458.0);
        assert_eq!(sc.c1, 293.0);
        assert_eq!(sc.l_f, 4580.0);
    }

    #[test]
    fn smb_schedule_formulas() {
        let p = scalar_problem(1.0);
        let meta = BilevelMeta {
            constants: p.oracle.constants,
            l_y: p.l_y,
            delta_f: 0.5,
            delta_z0: 1.0,
            delta_y0: 1.0,
        };
        let cfg = make_smb_schedule(0.2, &meta).unwrap();
        let k = smb_k_neumann(&meta.constants, 0.2);
        assert_eq!(cfg.k_neumann, k);
        let sc = smb_constants(&meta.constants, k, 1.0);
        assert!((cfg.gamma - 0.04 / (20.0 * sc.c1)).abs() < 1e-15);
        assert!(cfg.eta_y <= 1.0); // capped by min(λ, 1/C_gyy)
        assert!(cfg.t >= (320.0 * sc.c0 / (cfg.eta_y * 0.04)) as usize);
    }

    #[test]
    fn sbma_projections_hold_under_heavy_noise() {
        let mut p = scalar_problem(3.0);
        // Noisy matrix oracles too (still within the PSD band for o_gyy).
        p.oracle.o_gxy = Box::new(|_x, _y, s| Mat::from_diag(&[-1.0 + 0.5 * s.normal()]));
        p.oracle.o_gyy = Box::new(|_x, _y, s| Mat::from_diag(&[0.5 + 0.4 * s.uniform()]));
        let cfg = BilevelConfig {
            gamma: 0.3,
            eta_x: 0.01,
            eta_y: 0.05,
            k_neumann: 3,
            t: 2_000,
            exact_inverse: false,
            scaler: None,
            g0: 0.0,
        };
        // lambda=0.5 band for the noisy Hessian draws.
        p.oracle.constants.lambda = 0.5;
        let run = sbma_run(&p, &cfg, &mut Stream::new(9, 0)).unwrap();
        assert_eq!(run.trajectory.steps, 2_001);
    }

    #[test]
    fn sbma_noiseless_direction_matches_hypergradient() {
        // σ=0, γ=1, y pinned at y*(x) by an exact inner step, exact inverse:
        // z = u − V·H·v = 0 − (−1)(1)(x) = x = ∇F(x).
        let mut p = scalar_problem(0.0);
        p.y0 = vec![1.0];
        let cfg = BilevelConfig {
            gamma: 1.0,
            eta_x: 0.05,
            eta_y: 1.0,
            k_neumann: 1,
            t: 100,
            exact_inverse: true,
            scaler: None,
            g0: 0.0,
        };
        let run = sbma_run(&p, &cfg, &mut Stream::new(3, 0)).unwrap();
        assert!(run.x_final[0].abs() < 0.1);
        // Tracking error shrinks to the one-step-lag floor.
        let last = run.trajectory.points.last().unwrap();
        assert!(last.delta_z < 1e-4, "{}", last.delta_z);
    }

    #[test]
    fn sbma_schedule_resolves_fixed_point() {
        let p = scalar_problem(1.0);
        let meta = BilevelMeta {
            constants: p.oracle.constants,
            l_y: p.l_y,
            delta_f: 0.5,
            delta_z0: 1.0,
            delta_y0: 1.0,
        };
        let cfg = make_sbma_schedule(0.3, &meta).unwrap();
        assert!(cfg.gamma > 0.0 && cfg.gamma <= 1.0);
        assert!(cfg.k_neumann >= 1);
        // γ respects its own C₅(γ, k) bound after the fixed point. For this
        // problem (λ=1, C_fy=10, C_gxy=1, C_gyy=1, σ²=1): C₁=2, C₂=600,
        // C₃=600, C₄=6.
        let c5 = 2.0 * cfg.gamma * cfg.gamma
            * ((cfg.k_neumann * cfg.k_neumann) as f64 + 1.0);
        let bound = 0.09 / (80.0 * ((2.0 + 600.0 + 600.0) + 6.0 * c5));
        assert!(cfg.gamma <= bound * (1.0 + 1e-9), "{} vs {bound}", cfg.gamma);
    }

    #[test]
    fn run_is_deterministic() {
        let p = scalar_problem(0.5);
        let cfg = BilevelConfig {
            gamma: 0.2,
            eta_x: 0.02,
            eta_y: 0.1,
            k_neumann: 2,
            t: 200,
            exact_inverse: false,
            scaler: None,
            g0: 0.0,
        };
        let a = smb_run(&p, &cfg, &mut Stream::new(4, 1)).unwrap();
        let b = smb_run(&p, &cfg, &mut Stream::new(4, 1)).unwrap();
        assert_eq!(a.x_final, b.x_final);
        assert_eq!(a.tau, b.tau);
    }
}
