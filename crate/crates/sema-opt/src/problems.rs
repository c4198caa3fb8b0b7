//! Closed-form synthetic benchmark problems.
//!
//! Every instance is constructed deterministically from a seed, exposes the
//! exact objects the solvers' metrics need (true gradients, optima, inner
//! maximizers/minimizers, hypergradients), exports the constants the
//! theorem schedules consume, and serializes to a self-describing fixture
//! so acceptance numbers are reproducible.
//!
//! Declared constants are certified, not assumed — for instance the
//! gradient-dominance constant of the rank-deficient least-squares problem
//! (this example also appears in the guide's problems chapter):
//!
//! ```
//! use sema_opt::problems::make_pl_least_squares;
//! use sema_opt::rng::Stream;
//! use sema_opt::vecmat::norm_sq;
//!
//! let p = make_pl_least_squares(6, 4, 5).unwrap();
//! let mut stream = Stream::new(2, 0);
//! for _ in 0..100 {
//!     let x: Vec<f64> = (0..6).map(|_| stream.normal()).collect();
//!     // ‖∇F(x)‖² ≥ 2μ·(F(x) − F*) with the declared μ.
//!     assert!(norm_sq(&p.gradient(&x)) >= 2.0 * p.mu * p.objective(&x) - 1e-9);
//! }
//! ```

use crate::bilevel::{BilevelMeta, BilevelProblem};
use crate::minimize::MinProblem;
use crate::minmax::{MinMaxMeta, MinMaxProblem};
use crate::oracle::{
    gaussian_oracle, BilevelConstants, BilevelOracle, MinMaxOracle,
};
use crate::rng::Stream;
use crate::vecmat::{dot, norm, norm_sq, sym_eigen, sym_inverse, Mat, Vector};
use crate::{Error, Result};

/// Seed-derived construction stream, decoupled from run streams.
fn build_stream(seed: u64) -> Stream {
    Stream::new(seed, u64::MAX)
}

// ---------------------------------------------------------------------------
// Finite differences and certification helpers
// ---------------------------------------------------------------------------

/// Central finite-difference gradient of a scalar function.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vector {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let xi = x[i];
        xp[i] = xi + h;
        let fp = f(&xp);
        xp[i] = xi - h;
        let fm = f(&xp);
        xp[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Max relative error `‖∇f_FD − g‖/max(1, ‖g‖)` over seeded random points.
pub fn fd_check(
    f: &dyn Fn(&[f64]) -> f64,
    grad: &dyn Fn(&[f64]) -> Vector,
    dim: usize,
    points: usize,
    seed: u64,
) -> f64 {
    let mut stream = build_stream(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let x = stream.normal_vec(dim, 1.0);
        let g = grad(&x);
        let fd = fd_gradient(f, &x, 1e-5);
        let err = crate::vecmat::dist_sq(&fd, &g).sqrt() / norm(&g).max(1.0);
        worst = worst.max(err);
    }
    worst
}

/// Worst violation of the gradient-dominance inequality
/// `‖∇F(x)‖² ≥ 2μ(F(x) − F*)` over seeded random points (≤ 0 means it
/// holds everywhere sampled).
pub fn pl_violation(
    f: &dyn Fn(&[f64]) -> f64,
    grad: &dyn Fn(&[f64]) -> Vector,
    mu: f64,
    f_star: f64,
    dim: usize,
    points: usize,
    seed: u64,
) -> f64 {
    let mut stream = build_stream(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..points {
        let x = stream.normal_vec(dim, 1.0);
        let lhs = norm_sq(&grad(&x));
        let rhs = 2.0 * mu * (f(&x) - f_star);
        worst = worst.max(rhs - lhs);
    }
    worst
}

// ---------------------------------------------------------------------------
// Fixture serialization
// ---------------------------------------------------------------------------

/// Self-describing fixture text: versioned header, then `key value...`
/// lines with numbers in full decimal precision.
pub struct FixtureWriter {
    lines: Vec<String>,
}

impl FixtureWriter {
    pub fn new(kind: &str, seed: u64) -> Self {
        FixtureWriter {
            lines: vec![
                "sema-opt-fixture v1".to_string(),
                format!("kind {kind}"),
                format!("seed {seed}"),
            ],
        }
    }

    pub fn scalar(&mut self, key: &str, v: f64) -> &mut Self {
        self.lines.push(format!("{key} {v:.17e}"));
        self
    }

    pub fn int(&mut self, key: &str, v: usize) -> &mut Self {
        self.lines.push(format!("{key} {v}"));
        self
    }

    pub fn vector(&mut self, key: &str, v: &[f64]) -> &mut Self {
        let body: Vec<String> = v.iter().map(|x| format!("{x:.17e}")).collect();
        self.lines.push(format!("{key} {}", body.join(" ")));
        self
    }

    /// Row-major matrix entry list prefixed by its shape.
    pub fn matrix(&mut self, key: &str, m: &Mat) -> &mut Self {
        let body: Vec<String> = m.data.iter().map(|x| format!("{x:.17e}")).collect();
        self.lines.push(format!("{key} {} {} {}", m.rows, m.cols, body.join(" ")));
        self
    }

    pub fn finish(&self) -> String {
        let mut out = self.lines.join("\n");
        out.push('\n');
        out
    }
}

/// Read the numbers following `key` in a fixture text.
pub fn fixture_field(text: &str, key: &str) -> Option<Vec<f64>> {
    for line in text.lines() {
        let mut parts = line.split_whitespace();
        if parts.next() == Some(key) {
            let vals: Option<Vec<f64>> = parts.map(|p| p.parse().ok()).collect();
            return vals;
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Quadratic minimization benchmark
// ---------------------------------------------------------------------------

/// `F(x) = ½(x − x*)ᵀQ(x − x*)` with diagonal `Q` whose eigenvalues are
/// log-spaced in `[1, cond]` and a seeded minimizer `x*`. `F* = 0`,
/// `L_F = cond`, PL constant `μ = 1`.
pub struct Quadratic {
    pub d: usize,
    pub cond: f64,
    pub seed: u64,
    pub q_diag: Vector,
    pub x_star: Vector,
}

/// Build the canonical smooth benchmark. `Q` is realized diagonally — a
/// rotation would not change any norm-based metric the drivers record,
/// and the diagonal form keeps per-step cost `O(d)` on long runs.
pub fn make_quadratic(d: usize, cond: f64, seed: u64) -> Quadratic {
    assert!(d >= 1 && cond >= 1.0, "need d >= 1 and cond >= 1");
    let mut stream = build_stream(seed);
    let q_diag: Vector = (0..d)
        .map(|i| {
            if d == 1 {
                1.0
            } else {
                cond.powf(i as f64 / (d as f64 - 1.0))
            }
        })
        .collect();
    let x_star = stream.normal_vec(d, 1.0);
    Quadratic { d, cond, seed, q_diag, x_star }
}

impl Quadratic {
    pub fn objective(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.x_star)
            .zip(&self.q_diag)
            .map(|((xi, si), qi)| 0.5 * qi * (xi - si) * (xi - si))
            .sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vector {
        x.iter()
            .zip(&self.x_star)
            .zip(&self.q_diag)
            .map(|((xi, si), qi)| qi * (xi - si))
            .collect()
    }

    /// Default start: unit distance from the minimizer.
    pub fn default_x0(&self) -> Vector {
        let off = 1.0 / (self.d as f64).sqrt();
        self.x_star.iter().map(|s| s + off).collect()
    }

    /// Minimization bundle with per-coordinate Gaussian noise of standard
    /// deviation `sigma` (declared total variance `d·σ²`).
    pub fn min_problem(&self, sigma: f64) -> MinProblem {
        self.min_problem_from(sigma, self.default_x0())
    }

    /// Same, from an explicit start point.
    pub fn min_problem_from(&self, sigma: f64, x0: Vector) -> MinProblem {
        let q = self.q_diag.clone();
        let xs = self.x_star.clone();
        let (q2, xs2) = (q.clone(), xs.clone());
        let g0 = self.gradient(&x0);
        let ginf = g0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        MinProblem {
            name: format!("quadratic(d={}, cond={}, seed={})", self.d, self.cond, self.seed),
            oracle: gaussian_oracle(
                move |x: &[f64]| {
                    x.iter()
                        .zip(&xs)
                        .zip(&q)
                        .map(|((xi, si), qi)| qi * (xi - si))
                        .collect()
                },
                sigma,
                self.d,
            ),
            objective: Box::new(move |x: &[f64]| {
                x.iter()
                    .zip(&xs2)
                    .zip(&q2)
                    .map(|((xi, si), qi)| 0.5 * qi * (xi - si) * (xi - si))
                    .sum()
            }),
            x0,
            f_star: 0.0,
            l_smooth: self.cond,
            mu: Some(1.0),
            grad_inf_bound: Some(2.0 * ginf.max(1.0) + 5.0 * sigma),
            grad_norm_bound: Some(2.0 * norm(&g0).max(1.0) + 5.0 * sigma * (self.d as f64).sqrt()),
        }
    }

    pub fn fixture(&self) -> String {
        let mut w = FixtureWriter::new("quadratic", self.seed);
        w.int("dim", self.d)
            .scalar("cond", self.cond)
            .vector("q_diag", &self.q_diag)
            .vector("x_star", &self.x_star);
        w.finish()
    }
}

// ---------------------------------------------------------------------------
// Rank-deficient least squares (PL but not strongly convex)
// ---------------------------------------------------------------------------

/// `F(x) = ½‖Ax − b‖²` with `A` of rank `r < d` (normalized to unit
/// spectral norm) and `b` in the range of `A`: `F* = 0` on an affine set,
/// gradient dominance holds with `μ` = smallest nonzero eigenvalue of
/// `AᵀA`, and the `d − r` kernel directions are exactly flat.
pub struct PlLeastSquares {
    pub d: usize,
    pub rank: usize,
    pub seed: u64,
    pub a: Mat,
    pub b: Vector,
    /// Smallest nonzero eigenvalue of `AᵀA` (the PL constant).
    pub mu: f64,
    /// Largest eigenvalue of `AᵀA` (the smoothness constant; 1 by
    /// normalization up to rounding).
    pub l_smooth: f64,
    /// One solution (`Ax = b`).
    pub solution: Vector,
    /// Unit kernel directions of `A`.
    pub kernel: Vec<Vector>,
}

pub fn make_pl_least_squares(d: usize, rank: usize, seed: u64) -> Result<PlLeastSquares> {
    if !(1 <= rank && rank < d) {
        return Err(Error::config("need 1 <= rank < d"));
    }
    let mut stream = build_stream(seed);
    // Rank-r product of Gaussian factors, normalized to ‖A‖ = 1.
    let g1 = Mat::from_rows(
        d,
        rank,
        &(0..d * rank).map(|_| stream.normal()).collect::<Vec<_>>(),
    );
    let g2 = Mat::from_rows(
        rank,
        d,
        &(0..rank * d).map(|_| stream.normal()).collect::<Vec<_>>(),
    );
    let mut a = g1.matmul(&g2);
    let s = a.spectral_norm();
    a = a.mat_scale(1.0 / s);
    let gram = a.transpose().matmul(&a);
    let (vals, vecs) = sym_eigen(&gram)?;
    let tol = 1e-10;
    let mut mu = f64::INFINITY;
    let mut l = 0.0f64;
    let mut kernel = Vec::new();
    for (i, &v) in vals.iter().enumerate() {
        if v > tol {
            mu = mu.min(v);
            l = l.max(v);
        } else {
            kernel.push((0..d).map(|rr| vecs[(rr, i)]).collect());
        }
    }
    let w = stream.normal_vec(d, 1.0);
    let b = a.matvec(&w);
    Ok(PlLeastSquares { d, rank, seed, a, b, mu, l_smooth: l, solution: w, kernel })
}

impl PlLeastSquares {
    pub fn objective(&self, x: &[f64]) -> f64 {
        let r: Vector = self
            .a
            .matvec(x)
            .iter()
            .zip(&self.b)
            .map(|(ax, bi)| ax - bi)
            .collect();
        0.5 * norm_sq(&r)
    }

    pub fn gradient(&self, x: &[f64]) -> Vector {
        let r: Vector = self
            .a
            .matvec(x)
            .iter()
            .zip(&self.b)
            .map(|(ax, bi)| ax - bi)
            .collect();
        self.a.tr_matvec(&r)
    }

    /// Distance to the solution set `{x : Ax = b}` via the pseudoinverse.
    pub fn distance_to_solution_set(&self, x: &[f64]) -> Result<f64> {
        let r: Vector = self
            .a
            .matvec(x)
            .iter()
            .zip(&self.b)
            .map(|(ax, bi)| ax - bi)
            .collect();
        let pinv = crate::vecmat::pseudoinverse(&self.a, 1e-10)?;
        Ok(norm(&pinv.matvec(&r)))
    }

    pub fn min_problem(&self, sigma: f64) -> MinProblem {
        // Start at the solution shifted along signal and kernel directions.
        let mut x0 = self.solution.clone();
        for xi in x0.iter_mut() {
            *xi += 1.0 / (self.d as f64).sqrt();
        }
        self.min_problem_from(sigma, x0)
    }

    pub fn min_problem_from(&self, sigma: f64, x0: Vector) -> MinProblem {
        let a1 = self.a.clone();
        let a2 = self.a.clone();
        let b1 = self.b.clone();
        let b2 = self.b.clone();
        let g0 = self.gradient(&x0);
        let ginf = g0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        MinProblem {
            name: format!(
                "pl_least_squares(d={}, rank={}, seed={})",
                self.d, self.rank, self.seed
            ),
            oracle: gaussian_oracle(
                move |x: &[f64]| {
                    let r: Vector = a1
                        .matvec(x)
                        .iter()
                        .zip(&b1)
                        .map(|(ax, bi)| ax - bi)
                        .collect();
                    a1.tr_matvec(&r)
                },
                sigma,
                self.d,
            ),
            objective: Box::new(move |x: &[f64]| {
                let r: Vector = a2
                    .matvec(x)
                    .iter()
                    .zip(&b2)
                    .map(|(ax, bi)| ax - bi)
                    .collect();
                0.5 * norm_sq(&r)
            }),
            x0,
            f_star: 0.0,
            l_smooth: self.l_smooth,
            mu: Some(self.mu),
            grad_inf_bound: Some(2.0 * ginf.max(1.0) + 5.0 * sigma),
            grad_norm_bound: Some(2.0 * norm(&g0).max(1.0) + 5.0 * sigma * (self.d as f64).sqrt()),
        }
    }

    pub fn fixture(&self) -> String {
        let mut w = FixtureWriter::new("pl_least_squares", self.seed);
        w.int("dim", self.d)
            .int("rank", self.rank)
            .scalar("mu", self.mu)
            .matrix("a", &self.a)
            .vector("b", &self.b);
        w.finish()
    }
}

// ---------------------------------------------------------------------------
// Drifting 1-D counterexample family (momentum-dependence demonstration)
// ---------------------------------------------------------------------------

/// 1-D problem on the box `[−1, 1]` whose stochastic gradient is `+C` with
/// probability `p` and `−1` otherwise, with `E[g] = pC − (1−p) > 0`: the
/// descent optimum is `x = −1`. The interesting quantity is the expected
/// per-step displacement of a normalized-step method at stationarity,
/// `drift = E[−η·v/√u]`, which can point the *wrong* way (positive) when
/// the averaging window of `v` is short and the second-moment window reacts
/// to the rare large gradient.
#[derive(Debug, Clone, Copy)]
pub struct ReddiDrift {
    pub c: f64,
    pub p: f64,
}

/// Certified two-sided bound on the stationary drift, plus a midpoint
/// estimate.
#[derive(Debug, Clone, Copy)]
pub struct DriftBound {
    pub lo: f64,
    pub hi: f64,
    pub estimate: f64,
}

impl DriftBound {
    /// `Some(+1)`/`Some(−1)` when the interval certifies a sign.
    pub fn sign(&self) -> Option<i8> {
        if self.lo > 0.0 {
            Some(1)
        } else if self.hi < 0.0 {
            Some(-1)
        } else {
            None
        }
    }
}

pub fn make_reddi_drift(c: f64, p: f64) -> Result<ReddiDrift> {
    if !(c > 0.0 && p > 0.0 && p < 1.0) {
        return Err(Error::config("need C > 0 and p in (0,1)"));
    }
    if p * c - (1.0 - p) <= 0.0 {
        return Err(Error::config("no drift gap: pC <= 1-p"));
    }
    Ok(ReddiDrift { c, p })
}

impl ReddiDrift {
    /// `E[g] = pC − (1−p)`.
    pub fn mean_grad(&self) -> f64 {
        self.p * self.c - (1.0 - self.p)
    }

    pub fn sample(&self, stream: &mut Stream) -> f64 {
        if stream.uniform() < self.p {
            self.c
        } else {
            -1.0
        }
    }

    /// Certified stationary drift interval for the normalized-momentum
    /// update `v ← β₁v + (1−β₁)g`, `u ← β₂u + (1−β₂)g²`, step `−η·v/√u`:
    /// the intersection of the truncated exhaustive enumeration (tight for
    /// short averaging windows) and a moment/covariance bound (tight for
    /// long windows).
    pub fn drift(&self, beta1: f64, beta2: f64, eta: f64) -> Result<DriftBound> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eta <= 0.0 {
            return Err(Error::config("need beta1, beta2 in [0,1) and eta > 0"));
        }
        let (mut lo, mut hi) = self.drift_covariance(beta1, beta2, eta);
        let mut estimate = 0.5 * (lo + hi);
        for m in [10usize, 14, 18, 21] {
            let (elo, ehi) = self.drift_enumeration(beta1, beta2, eta, m);
            estimate = 0.5 * (elo + ehi);
            lo = lo.max(elo);
            hi = hi.min(ehi);
            if lo > 0.0 || hi < 0.0 {
                break;
            }
        }
        if lo > hi + 1e-12 {
            return Err(Error::Verification(format!(
                "drift brackets disagree: [{lo}, {hi}] (internal bug)"
            )));
        }
        Ok(DriftBound { lo, hi: hi.max(lo), estimate })
    }

    /// Exhaustive enumeration over the `m` most recent samples with the
    /// tail of each average bracketed by its extreme values; the step is
    /// monotone in each bracket endpoint, so rectangle corners certify the
    /// per-history range.
    pub fn drift_enumeration(&self, beta1: f64, beta2: f64, eta: f64, m: usize) -> (f64, f64) {
        let c = self.c;
        let (g_vals, g_probs) = ([c, -1.0], [self.p, 1.0 - self.p]);
        let b1_pows: Vec<f64> = (0..m).map(|i| beta1.powi(i as i32)).collect();
        let b2_pows: Vec<f64> = (0..m).map(|i| beta2.powi(i as i32)).collect();
        let b1_tail = beta1.powi(m as i32);
        let b2_tail = beta2.powi(m as i32);
        let (u_min, u_max) = (1.0f64.min(c * c), 1.0f64.max(c * c));
        let phi = |v: f64, u: f64| -eta * v / u.sqrt();
        let mut lo = 0.0;
        let mut hi = 0.0;
        // Iterate over all histories as bit masks; bit i picks g_{t−i}.
        for mask in 0u64..(1u64 << m) {
            let mut v_head = 0.0;
            let mut u_head = 0.0;
            let mut w = 1.0;
            for i in 0..m {
                let pick = ((mask >> i) & 1) as usize;
                let g = g_vals[pick];
                v_head += (1.0 - beta1) * b1_pows[i] * g;
                u_head += (1.0 - beta2) * b2_pows[i] * g * g;
                w *= g_probs[pick];
            }
            let v_rng = [v_head - b1_tail, v_head + b1_tail * c];
            let u_rng = [u_head + b2_tail * u_min, u_head + b2_tail * u_max];
            let mut pmin = f64::INFINITY;
            let mut pmax = f64::NEG_INFINITY;
            for &v in &v_rng {
                for &u in &u_rng {
                    let val = phi(v, u);
                    pmin = pmin.min(val);
                    pmax = pmax.max(val);
                }
            }
            lo += w * pmin;
            hi += w * pmax;
        }
        (lo, hi)
    }

    /// Moment bound: `E[v/√u] = E[v]·E[u^{−1/2}] + Cov(v, u^{−1/2})`, with
    /// `E[v] = E[g]` at stationarity, `Var(v) = (1−β₁)/(1+β₁)·Var(g)`,
    /// Jensen/chord brackets for `E[u^{−1/2}]` on the sure range of `u`,
    /// and `|Cov| ≤ sd(v)·sd(u^{−1/2})`.
    pub fn drift_covariance(&self, beta1: f64, beta2: f64, eta: f64) -> (f64, f64) {
        let (c, p) = (self.c, self.p);
        let eg = self.mean_grad();
        let eg2 = p * c * c + (1.0 - p);
        let var_g = eg2 - eg * eg;
        let eg4 = p * c.powi(4) + (1.0 - p);
        let var_g2 = eg4 - eg2 * eg2;
        let var_v = ((1.0 - beta1) / (1.0 + beta1) * var_g).min(((c + 1.0) / 2.0).powi(2));
        let (u_lo, u_hi) = (1.0f64.min(c * c), 1.0f64.max(c * c));
        let var_u =
            ((1.0 - beta2) / (1.0 + beta2) * var_g2).min(((u_hi - u_lo) / 2.0).powi(2));
        let f = |u: f64| 1.0 / u.sqrt();
        // u^{−1/2} is convex: Jensen lower bound at E[u], chord upper bound.
        let ef_lo = f(eg2);
        let ef_hi = if u_hi > u_lo {
            f(u_lo) + (eg2 - u_lo) * (f(u_hi) - f(u_lo)) / (u_hi - u_lo)
        } else {
            f(u_lo)
        };
        let sd_f = (0.5 * u_lo.powf(-1.5) * var_u.sqrt()).min((f(u_lo) - f(u_hi)) / 2.0);
        let cov = var_v.sqrt() * sd_f;
        // E[v] > 0 by the drift-gap precondition.
        let inner_lo = eg * ef_lo - cov;
        let inner_hi = eg * ef_hi + cov;
        (-eta * inner_hi, -eta * inner_lo)
    }

    /// Empirical stationary drift: run the chain with burn-in and average
    /// the per-step displacement.
    pub fn simulate_drift(
        &self,
        beta1: f64,
        beta2: f64,
        eta: f64,
        steps: usize,
        stream: &mut Stream,
    ) -> f64 {
        let mut v = self.mean_grad();
        let mut u = self.p * self.c * self.c + (1.0 - self.p);
        let burn = 1_000;
        let mut acc = 0.0;
        for t in 0..burn + steps {
            let g = self.sample(stream);
            v = beta1 * v + (1.0 - beta1) * g;
            u = beta2 * u + (1.0 - beta2) * g * g;
            if t >= burn {
                acc += -eta * v / u.sqrt();
            }
        }
        acc / steps as f64
    }
}

/// One certified grid-search hit: a parameter point whose small-`β₁` drift
/// is certified positive (wrong direction) while the long-window setting
/// `β₁ = 1 − γ` is certified negative.
#[derive(Debug, Clone, Copy)]
pub struct ReddiGridPoint {
    pub c: f64,
    pub p: f64,
    pub beta1_small: f64,
    pub beta1_long: f64,
    pub beta2: f64,
    pub drift_small_lo: f64,
    pub drift_long_hi: f64,
}

/// Exhaustive grid search (the module's brute-force oracle): scan
/// `(C, p, β₂)` with a fixed small `β₁` and the paired long-window
/// `β₁ = 1 − γ`, `γ ≤ 0.01`, returning the point with the widest certified
/// wrong-direction drift.
pub fn reddi_grid_search(eta: f64) -> Result<Option<ReddiGridPoint>> {
    let beta1_small = 0.1;
    let gamma = 0.01;
    let beta1_long = 1.0 - gamma;
    let mut best: Option<ReddiGridPoint> = None;
    for &c in &[2.0, 3.0, 4.0, 5.0] {
        for &p in &[0.3, 0.35, 0.4, 0.45] {
            let Ok(problem) = make_reddi_drift(c, p) else { continue };
            for &beta2 in &[0.1, 0.2, 0.3, 0.5, 0.7] {
                let small = problem.drift(beta1_small, beta2, eta)?;
                if small.lo <= 0.0 {
                    continue;
                }
                let long = problem.drift(beta1_long, beta2, eta)?;
                if long.hi >= 0.0 {
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some(b) => small.lo > b.drift_small_lo,
                };
                if better {
                    best = Some(ReddiGridPoint {
                        c,
                        p,
                        beta1_small,
                        beta1_long,
                        beta2,
                        drift_small_lo: small.lo,
                        drift_long_hi: long.hi,
                    });
                }
            }
        }
    }
    Ok(best)
}

/// Fixture text for a pinned grid point.
pub fn reddi_fixture(pt: &ReddiGridPoint, eta: f64) -> String {
    let mut w = FixtureWriter::new("reddi_drift", 0);
    w.scalar("c", pt.c)
        .scalar("p", pt.p)
        .scalar("beta1_small", pt.beta1_small)
        .scalar("beta1_long", pt.beta1_long)
        .scalar("beta2", pt.beta2)
        .scalar("eta", eta)
        .scalar("drift_small_lo", pt.drift_small_lo)
        .scalar("drift_long_hi", pt.drift_long_hi);
    w.finish()
}

// ---------------------------------------------------------------------------
// Saddle problems
// ---------------------------------------------------------------------------

/// Strongly-concave saddle benchmark
/// `f(x, y) = xᵀAy − (λ/2)‖y‖² + cᵀx` with `‖A‖ = ½`:
/// `y*(x) = Aᵀx/λ`, `F(x) = ‖Aᵀx‖²/(2λ) + cᵀx`, and `c` chosen in the
/// range of `AAᵀ` so the envelope attains its minimum.
pub struct SaddleQuadratic {
    pub d: usize,
    pub d_dual: usize,
    pub lambda: f64,
    pub seed: u64,
    pub a: Mat,
    pub c: Vector,
    /// A minimizer of the envelope.
    pub x_min: Vector,
    pub f_star: f64,
}

pub fn make_saddle_quadratic(d: usize, d_dual: usize, lambda: f64, seed: u64) -> Result<SaddleQuadratic> {
    if !(lambda > 0.0) {
        return Err(Error::config("lambda must be positive"));
    }
    let mut stream = build_stream(seed);
    let mut a = Mat::from_rows(
        d,
        d_dual,
        &(0..d * d_dual).map(|_| stream.normal()).collect::<Vec<_>>(),
    );
    let s = a.spectral_norm();
    a = a.mat_scale(0.5 / s);
    // c = −AAᵀm/λ makes m an envelope minimizer.
    let m = stream.normal_vec(d, 1.0);
    let aat_m = a.matvec(&a.tr_matvec(&m));
    let c: Vector = aat_m.iter().map(|v| -v / lambda).collect();
    let f_star = {
        let aty = a.tr_matvec(&m);
        norm_sq(&aty) / (2.0 * lambda) + dot(&c, &m)
    };
    Ok(SaddleQuadratic { d, d_dual, lambda, seed, a, c, x_min: m, f_star })
}

impl SaddleQuadratic {
    pub fn y_star(&self, x: &[f64]) -> Vector {
        self.a.tr_matvec(x).iter().map(|v| v / self.lambda).collect()
    }

    pub fn envelope(&self, x: &[f64]) -> f64 {
        norm_sq(&self.a.tr_matvec(x)) / (2.0 * self.lambda) + dot(&self.c, x)
    }

    pub fn envelope_grad(&self, x: &[f64]) -> Vector {
        let inner = self.a.tr_matvec(x);
        self.a
            .matvec(&inner)
            .iter()
            .zip(&self.c)
            .map(|(v, ci)| v / self.lambda + ci)
            .collect()
    }

    /// Min-max bundle with per-coordinate Gaussian noise `sigma` on both
    /// partial gradients; the primal starts at distance 1 from a
    /// minimizer, the dual at `y = 0`.
    pub fn min_max_problem(&self, sigma: f64) -> MinMaxProblem {
        let lambda = self.lambda;
        let a_norm = self.a.spectral_norm();
        let l_f = a_norm + lambda;
        let a1 = self.a.clone();
        let (a2, a3, a4, a5) = (self.a.clone(), self.a.clone(), self.a.clone(), self.a.clone());
        let c1 = self.c.clone();
        let (c2, c3) = (self.c.clone(), self.c.clone());
        let off = 1.0 / (self.d as f64).sqrt();
        let x0: Vector = self.x_min.iter().map(|v| v + off).collect();
        let y0 = vec![0.0; self.d_dual];
        let delta_f = self.envelope(&x0) - self.f_star;
        // Δ_{x,0}: the estimator starts from a sample of ∇_x f(x₀, y₀);
        // its expected squared error against ∇F(x₀) is the mismatch plus
        // the noise level.
        let grad_mismatch = {
            let at_x0_y = self.a.matvec(&y0);
            let gx: Vector = at_x0_y.iter().zip(&self.c).map(|(v, ci)| v + ci).collect();
            crate::vecmat::dist_sq(&gx, &self.envelope_grad(&x0))
        };
        let total_var = (self.d.max(self.d_dual)) as f64 * sigma * sigma;
        let g0x = {
            let gy: Vector = self.a.matvec(&y0);
            gy.iter().zip(&self.c).map(|(v, ci)| v + ci).collect::<Vector>()
        };
        let ginf = g0x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        MinMaxProblem {
            name: format!(
                "saddle_quadratic(d={}, d'={}, lambda={}, seed={})",
                self.d, self.d_dual, self.lambda, self.seed
            ),
            oracle: MinMaxOracle {
                dim_x: self.d,
                dim_y: self.d_dual,
                sample: Box::new(move |x, y, stream| {
                    let mut gx: Vector = a1
                        .matvec(y)
                        .iter()
                        .zip(&c1)
                        .map(|(v, ci)| v + ci)
                        .collect();
                    let mut gy: Vector = a1
                        .tr_matvec(x)
                        .iter()
                        .zip(y)
                        .map(|(v, yi)| v - lambda * yi)
                        .collect();
                    if sigma > 0.0 {
                        for g in gx.iter_mut() {
                            *g += sigma * stream.normal();
                        }
                        for g in gy.iter_mut() {
                            *g += sigma * stream.normal();
                        }
                    }
                    (gx, gy)
                }),
                true_grad_x: Some(Box::new(move |_x, y| {
                    a2.matvec(y).iter().zip(&c2).map(|(v, ci)| v + ci).collect()
                })),
                true_grad_y: Some(Box::new(move |x, y| {
                    a3.tr_matvec(x)
                        .iter()
                        .zip(y)
                        .map(|(v, yi)| v - lambda * yi)
                        .collect()
                })),
                sigma_sq: total_var,
            },
            x0,
            y0,
            f_value: Box::new(move |x, y| {
                dot(&a4.tr_matvec(x), y) - 0.5 * lambda * norm_sq(y) + dot(&c3, x)
            }),
            y_star: {
                let a = self.a.clone();
                Box::new(move |x| a.tr_matvec(x).iter().map(|v| v / lambda).collect())
            },
            primal_value: {
                let a = self.a.clone();
                let c = self.c.clone();
                Box::new(move |x| norm_sq(&a.tr_matvec(x)) / (2.0 * lambda) + dot(&c, x))
            },
            primal_grad: {
                let c = self.c.clone();
                Box::new(move |x| {
                    let inner = a5.tr_matvec(x);
                    a5.matvec(&inner)
                        .iter()
                        .zip(&c)
                        .map(|(v, ci)| v / lambda + ci)
                        .collect()
                })
            },
            meta: MinMaxMeta {
                lambda,
                l_f,
                l_primal: a_norm * a_norm / lambda,
                kappa: l_f / lambda,
                sigma_sq: total_var,
                delta_f,
                delta_x0: grad_mismatch + total_var,
            },
            f_star: self.f_star,
            grad_inf_bound: Some(2.0 * ginf.max(0.5) + 5.0 * sigma),
            grad_norm_bound: Some(2.0 * norm(&g0x).max(0.5) + 5.0 * sigma * (self.d as f64).sqrt()),
        }
    }

    pub fn fixture(&self) -> String {
        let mut w = FixtureWriter::new("saddle_quadratic", self.seed);
        w.int("dim_x", self.d)
            .int("dim_y", self.d_dual)
            .scalar("lambda", self.lambda)
            .matrix("a", &self.a)
            .vector("c", &self.c);
        w.finish()
    }
}

/// Concave-but-not-strongly-concave saddle benchmark
/// `f(x, y) = xᵀAy − (λ/2)‖By‖² + cᵀx` with `B` diagonal and
/// rank-deficient: the dual maximizer is an affine set; the designated
/// selection is the minimum-norm maximizer; the dual side satisfies
/// gradient dominance with `λ′ = λ·min nonzero(b_i²)`.
pub struct DualPlSaddle {
    pub d: usize,
    pub d_dual: usize,
    pub lambda: f64,
    pub seed: u64,
    pub a: Mat,
    pub b_diag: Vector,
    pub c: Vector,
    /// Dual-side PL constant.
    pub lambda_pl: f64,
    pub x_min: Vector,
    pub f_star: f64,
}

pub fn make_dual_pl_saddle(d: usize, d_dual: usize, lambda: f64, seed: u64) -> Result<DualPlSaddle> {
    if !(lambda > 0.0) {
        return Err(Error::config("lambda must be positive"));
    }
    if d_dual < 2 {
        return Err(Error::config("need d' >= 2 for a rank-deficient dual curvature"));
    }
    let mut stream = build_stream(seed);
    let rank = d_dual - 1;
    let mut b_diag = vec![0.0; d_dual];
    for bd in b_diag.iter_mut().take(rank) {
        *bd = 0.7 + 0.6 * stream.uniform();
    }
    let mut a = Mat::from_rows(
        d,
        d_dual,
        &(0..d * d_dual).map(|_| stream.normal()).collect::<Vec<_>>(),
    );
    // Zero the columns matching kernel coordinates of B so the inner max
    // is attained for every x.
    for i in rank..d_dual {
        for r in 0..d {
            a[(r, i)] = 0.0;
        }
    }
    let s = a.spectral_norm();
    a = a.mat_scale(0.5 / s);
    let lambda_pl = lambda
        * b_diag
            .iter()
            .take(rank)
            .map(|b| b * b)
            .fold(f64::INFINITY, f64::min);
    // Envelope: F(x) = Σ_{i<rank} (Aᵀx)_i²/(2λb_i²) + cᵀx = ½xᵀMx + cᵀx.
    let m_vec = stream.normal_vec(d, 1.0);
    let grad_quad = |x: &[f64], a: &Mat, b_diag: &[f64], lambda: f64| -> Vector {
        let mut inner = a.tr_matvec(x);
        for (v, b) in inner.iter_mut().zip(b_diag) {
            *v = if *b > 0.0 { *v / (lambda * b * b) } else { 0.0 };
        }
        a.matvec(&inner)
    };
    let gm = grad_quad(&m_vec, &a, &b_diag, lambda);
    let c: Vector = gm.iter().map(|v| -v).collect();
    let f_star = {
        let mut inner = a.tr_matvec(&m_vec);
        let mut q = 0.0;
        for (v, b) in inner.iter_mut().zip(&b_diag) {
            if *b > 0.0 {
                q += *v * *v / (2.0 * lambda * b * b);
            }
        }
        q + dot(&c, &m_vec)
    };
    Ok(DualPlSaddle { d, d_dual, lambda, seed, a, b_diag, c, lambda_pl, x_min: m_vec, f_star })
}

impl DualPlSaddle {
    /// Minimum-norm maximizer: `y*_i = (Aᵀx)_i/(λb_i²)` on the non-kernel
    /// coordinates, 0 on the kernel.
    pub fn y_star(&self, x: &[f64]) -> Vector {
        let mut inner = self.a.tr_matvec(x);
        for (v, b) in inner.iter_mut().zip(&self.b_diag) {
            *v = if *b > 0.0 { *v / (self.lambda * b * b) } else { 0.0 };
        }
        inner
    }

    pub fn f_value(&self, x: &[f64], y: &[f64]) -> f64 {
        let by_sq: f64 = y
            .iter()
            .zip(&self.b_diag)
            .map(|(yi, b)| (b * yi) * (b * yi))
            .sum();
        dot(&self.a.tr_matvec(x), y) - 0.5 * self.lambda * by_sq + dot(&self.c, x)
    }

    pub fn envelope(&self, x: &[f64]) -> f64 {
        self.f_value(x, &self.y_star(x))
    }

    pub fn envelope_grad(&self, x: &[f64]) -> Vector {
        let ys = self.y_star(x);
        self.a
            .matvec(&ys)
            .iter()
            .zip(&self.c)
            .map(|(v, ci)| v + ci)
            .collect()
    }

    pub fn min_max_problem(&self, sigma: f64) -> MinMaxProblem {
        let lambda = self.lambda;
        let a_norm = self.a.spectral_norm();
        let b_norm = self
            .b_diag
            .iter()
            .fold(0.0f64, |m, b| m.max(b.abs()));
        let l_f = a_norm + lambda * b_norm * b_norm;
        let off = 1.0 / (self.d as f64).sqrt();
        let x0: Vector = self.x_min.iter().map(|v| v + off).collect();
        let y0 = vec![0.0; self.d_dual];
        let delta_f = self.envelope(&x0) - self.f_star;
        let total_var = (self.d.max(self.d_dual)) as f64 * sigma * sigma;
        let g0x: Vector = {
            let gy = self.a.matvec(&y0);
            gy.iter().zip(&self.c).map(|(v, ci)| v + ci).collect()
        };
        let grad_mismatch = crate::vecmat::dist_sq(&g0x, &self.envelope_grad(&x0));
        let ginf = g0x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // Envelope smoothness: ‖A D⁺ Aᵀ‖ ≤ ‖A‖²/λ′ conservative bound.
        let l_primal = a_norm * a_norm * lambda / self.lambda_pl / lambda;
        let a1 = self.a.clone();
        let bd1 = self.b_diag.clone();
        let c1 = self.c.clone();
        let this_y_star = {
            let a = self.a.clone();
            let bd = self.b_diag.clone();
            Box::new(move |x: &[f64]| {
                let mut inner = a.tr_matvec(x);
                for (v, b) in inner.iter_mut().zip(&bd) {
                    *v = if *b > 0.0 { *v / (lambda * b * b) } else { 0.0 };
                }
                inner
            })
        };
        let env_val = {
            let a = self.a.clone();
            let bd = self.b_diag.clone();
            let c = self.c.clone();
            Box::new(move |x: &[f64]| {
                let mut inner = a.tr_matvec(x);
                let mut q = 0.0;
                for (v, b) in inner.iter_mut().zip(&bd) {
                    if *b > 0.0 {
                        q += *v * *v / (2.0 * lambda * b * b);
                    }
                }
                q + dot(&c, x)
            })
        };
        let env_grad = {
            let a = self.a.clone();
            let bd = self.b_diag.clone();
            let c = self.c.clone();
            Box::new(move |x: &[f64]| {
                let mut inner = a.tr_matvec(x);
                for (v, b) in inner.iter_mut().zip(&bd) {
                    *v = if *b > 0.0 { *v / (lambda * b * b) } else { 0.0 };
                }
                a.matvec(&inner)
                    .iter()
                    .zip(&c)
                    .map(|(v, ci)| v + ci)
                    .collect()
            })
        };
        let f_val = {
            let a = self.a.clone();
            let bd = self.b_diag.clone();
            let c = self.c.clone();
            Box::new(move |x: &[f64], y: &[f64]| {
                let by_sq: f64 = y.iter().zip(&bd).map(|(yi, b)| (b * yi) * (b * yi)).sum();
                dot(&a.tr_matvec(x), y) - 0.5 * lambda * by_sq + dot(&c, x)
            })
        };
        MinMaxProblem {
            name: format!(
                "dual_pl_saddle(d={}, d'={}, lambda={}, seed={})",
                self.d, self.d_dual, self.lambda, self.seed
            ),
            oracle: MinMaxOracle {
                dim_x: self.d,
                dim_y: self.d_dual,
                sample: Box::new(move |x, y, stream| {
                    let mut gx: Vector = a1
                        .matvec(y)
                        .iter()
                        .zip(&c1)
                        .map(|(v, ci)| v + ci)
                        .collect();
                    let mut gy: Vector = a1
                        .tr_matvec(x)
                        .iter()
                        .zip(y)
                        .zip(&bd1)
                        .map(|((v, yi), b)| v - lambda * b * b * yi)
                        .collect();
                    if sigma > 0.0 {
                        for g in gx.iter_mut() {
                            *g += sigma * stream.normal();
                        }
                        for g in gy.iter_mut() {
                            *g += sigma * stream.normal();
                        }
                    }
                    (gx, gy)
                }),
                true_grad_x: None,
                true_grad_y: None,
                sigma_sq: total_var,
            },
            x0,
            y0,
            f_value: f_val,
            y_star: this_y_star,
            primal_value: env_val,
            primal_grad: env_grad,
            meta: MinMaxMeta {
                lambda: self.lambda_pl,
                l_f,
                l_primal,
                kappa: l_f / self.lambda_pl,
                sigma_sq: total_var,
                delta_f,
                delta_x0: grad_mismatch + total_var,
            },
            f_star: self.f_star,
            grad_inf_bound: Some(2.0 * ginf.max(0.5) + 5.0 * sigma),
            grad_norm_bound: Some(2.0 * norm(&g0x).max(0.5) + 5.0 * sigma * (self.d as f64).sqrt()),
        }
    }
}

// ---------------------------------------------------------------------------
// AUC maximization as a finite-sample min-max problem
// ---------------------------------------------------------------------------

/// Synthetic two-Gaussian binary classification data with a linear score
/// `h(w; a) = wᵀa`, wrapped as the squared-surrogate min-max problem:
/// primal `x = (w, s, r)`, scalar dual `y`, per-sample loss
///
/// ```text
/// F(w,s,r,y;z) = (1−p)(h−s)²·1[b=1] + p(h−r)²·1[b=−1]
///              + 2(1+y)(p·h·1[b=−1] − (1−p)·h·1[b=1]) − p(1−p)y²
/// ```
///
/// with `p` the positive-class fraction. The dual curvature is
/// `λ = 2p(1−p)`.
pub struct AucMinMax {
    pub d: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub separation: f64,
    pub seed: u64,
    /// Feature rows (positives first), labels aligned.
    pub features: Vec<Vector>,
    pub labels: Vec<i8>,
    pub p: f64,
    /// Class mean direction (unit vector); positives at `+sep/2·dir`.
    pub direction: Vector,
}

pub fn make_auc_minmax(
    n_pos: usize,
    n_neg: usize,
    d: usize,
    separation: f64,
    seed: u64,
) -> Result<AucMinMax> {
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::config("need at least one sample per class"));
    }
    let mut stream = build_stream(seed);
    let mut dir = stream.normal_vec(d, 1.0);
    let dn = norm(&dir);
    for v in dir.iter_mut() {
        *v /= dn;
    }
    let mut features = Vec::with_capacity(n_pos + n_neg);
    let mut labels = Vec::with_capacity(n_pos + n_neg);
    for cls in [1i8, -1i8] {
        let count = if cls == 1 { n_pos } else { n_neg };
        let shift = if cls == 1 { separation / 2.0 } else { -separation / 2.0 };
        for _ in 0..count {
            let mut a = stream.normal_vec(d, 1.0);
            for (ai, di) in a.iter_mut().zip(&dir) {
                *ai += shift * di;
            }
            features.push(a);
            labels.push(cls);
        }
    }
    let p = n_pos as f64 / (n_pos + n_neg) as f64;
    Ok(AucMinMax { d, n_pos, n_neg, separation, seed, features, labels, p, direction: dir })
}

impl AucMinMax {
    pub fn n(&self) -> usize {
        self.features.len()
    }

    /// Dual curvature `λ = 2p(1−p)`.
    pub fn lambda(&self) -> f64 {
        2.0 * self.p * (1.0 - self.p)
    }

    fn score(&self, w: &[f64], i: usize) -> f64 {
        dot(w, &self.features[i])
    }

    /// Class means of the score.
    pub fn score_means(&self, w: &[f64]) -> (f64, f64) {
        let mut mp = 0.0;
        let mut mn = 0.0;
        for i in 0..self.n() {
            let h = self.score(w, i);
            if self.labels[i] == 1 {
                mp += h;
            } else {
                mn += h;
            }
        }
        (mp / self.n_pos as f64, mn / self.n_neg as f64)
    }

    /// Per-sample loss of the displayed min-max objective.
    pub fn sample_loss(&self, x: &[f64], y: f64, i: usize) -> f64 {
        let (w, s, r) = split_wsr(x, self.d);
        let p = self.p;
        let h = self.score(w, i);
        if self.labels[i] == 1 {
            (1.0 - p) * (h - s) * (h - s) - 2.0 * (1.0 + y) * (1.0 - p) * h
                - p * (1.0 - p) * y * y
        } else {
            p * (h - r) * (h - r) + 2.0 * (1.0 + y) * p * h - p * (1.0 - p) * y * y
        }
    }

    /// Full-data objective `f(x, y) = mean_i F(x, y; z_i)`.
    pub fn objective(&self, x: &[f64], y: f64) -> f64 {
        (0..self.n()).map(|i| self.sample_loss(x, y, i)).sum::<f64>() / self.n() as f64
    }

    /// Per-sample gradient with respect to `(w, s, r)` and `y`.
    pub fn sample_grad(&self, x: &[f64], y: f64, i: usize) -> (Vector, f64) {
        let (w, s, r) = split_wsr(x, self.d);
        let p = self.p;
        let a = &self.features[i];
        let h = dot(w, a);
        let mut gx = vec![0.0; self.d + 2];
        let gy;
        if self.labels[i] == 1 {
            let coef = 2.0 * (1.0 - p) * (h - s) - 2.0 * (1.0 + y) * (1.0 - p);
            for (g, ai) in gx.iter_mut().zip(a) {
                *g = coef * ai;
            }
            gx[self.d] = -2.0 * (1.0 - p) * (h - s);
            gy = -2.0 * (1.0 - p) * h - 2.0 * p * (1.0 - p) * y;
        } else {
            let coef = 2.0 * p * (h - r) + 2.0 * (1.0 + y) * p;
            for (g, ai) in gx.iter_mut().zip(a) {
                *g = coef * ai;
            }
            gx[self.d + 1] = -2.0 * p * (h - r);
            gy = 2.0 * p * h - 2.0 * p * (1.0 - p) * y;
        }
        (gx, gy)
    }

    /// Full-data gradient (exact finite-population mean).
    pub fn full_grad(&self, x: &[f64], y: f64) -> (Vector, f64) {
        let mut gx = vec![0.0; self.d + 2];
        let mut gy = 0.0;
        for i in 0..self.n() {
            let (gi, gyi) = self.sample_grad(x, y, i);
            for (a, b) in gx.iter_mut().zip(&gi) {
                *a += b;
            }
            gy += gyi;
        }
        let n = self.n() as f64;
        for a in gx.iter_mut() {
            *a /= n;
        }
        (gx, gy / n)
    }

    /// Maximizing dual value `y*(x) = mean_neg h − mean_pos h`.
    pub fn y_star(&self, x: &[f64]) -> f64 {
        let (w, _, _) = split_wsr(x, self.d);
        let (mp, mn) = self.score_means(w);
        mn - mp
    }

    /// Empirical AUC of the score `wᵀa` over all positive/negative pairs
    /// (ties count one half).
    pub fn empirical_auc(&self, w: &[f64]) -> f64 {
        let mut pos = Vec::with_capacity(self.n_pos);
        let mut neg = Vec::with_capacity(self.n_neg);
        for i in 0..self.n() {
            let h = self.score(w, i);
            if self.labels[i] == 1 {
                pos.push(h);
            } else {
                neg.push(h);
            }
        }
        let mut acc = 0.0;
        for hp in &pos {
            for hn in &neg {
                acc += if hp > hn {
                    1.0
                } else if hp == hn {
                    0.5
                } else {
                    0.0
                };
            }
        }
        acc / (pos.len() * neg.len()) as f64
    }

    /// Population AUC of a linear score for the two-Gaussian model:
    /// `Φ(sep·wᵀu/(√2‖w‖))` with `u` the class-mean direction.
    pub fn population_auc(&self, w: &[f64]) -> f64 {
        let wn = norm(w);
        if wn == 0.0 {
            return 0.5;
        }
        normal_cdf(self.separation * dot(w, &self.direction) / (2.0f64.sqrt() * wn))
    }

    /// Pairwise squared-surrogate loss `mean_{i∈pos, j∈neg}(1 − h_i + h_j)²`.
    pub fn pairwise_surrogate(&self, w: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n() {
            if self.labels[i] != 1 {
                continue;
            }
            let hi = self.score(w, i);
            for j in 0..self.n() {
                if self.labels[j] != -1 {
                    continue;
                }
                let v = 1.0 - hi + self.score(w, j);
                acc += v * v;
            }
        }
        acc / (self.n_pos * self.n_neg) as f64
    }

    /// Brute-force attainability oracle: full-batch logistic regression by
    /// gradient descent, returning the empirical AUC of the fit.
    pub fn logistic_fit_auc(&self, iters: usize, step: f64) -> f64 {
        let mut w = vec![0.0; self.d];
        let n = self.n() as f64;
        for _ in 0..iters {
            let mut g = vec![0.0; self.d];
            for i in 0..self.n() {
                let m = self.labels[i] as f64 * self.score(&w, i);
                let coef = -(self.labels[i] as f64) / (1.0 + m.exp());
                for (gi, ai) in g.iter_mut().zip(&self.features[i]) {
                    *gi += coef * ai / n;
                }
            }
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi -= step * gi;
            }
        }
        self.empirical_auc(&w)
    }

    /// Min-max bundle: the stochastic oracle samples one data point
    /// uniformly per draw (one draw = one oracle call).
    pub fn min_max_problem(self: &std::sync::Arc<Self>) -> MinMaxProblem {
        let this = self.clone();
        let t1 = self.clone();
        let t2 = self.clone();
        let t3 = self.clone();
        let t4 = self.clone();
        let t5 = self.clone();
        let t6 = self.clone();
        let dim_x = self.d + 2;
        let x0 = vec![0.0; dim_x];
        let y0 = vec![0.0];
        // Quadratic objective: assemble the exact joint Hessian to declare
        // smoothness, and bound the envelope minimum numerically.
        let (l_f, sigma_sq) = self.declared_constants();
        let lambda = self.lambda();
        let delta_f = self.objective_envelope(&x0) - self.envelope_min();
        MinMaxProblem {
            name: format!(
                "auc_minmax(n+={}, n-={}, d={}, sep={}, seed={})",
                self.n_pos, self.n_neg, self.d, self.separation, self.seed
            ),
            oracle: MinMaxOracle {
                dim_x,
                dim_y: 1,
                sample: Box::new(move |x, y, stream| {
                    let i = stream.index(this.n());
                    let (gx, gy) = this.sample_grad(x, y[0], i);
                    (gx, vec![gy])
                }),
                true_grad_x: Some(Box::new(move |x, y| t1.full_grad(x, y[0]).0)),
                true_grad_y: Some(Box::new(move |x, y| vec![t5.full_grad(x, y[0]).1])),
                sigma_sq,
            },
            x0,
            y0,
            f_value: Box::new(move |x, y| t2.objective(x, y[0])),
            y_star: Box::new(move |x| vec![t3.y_star(x)]),
            primal_value: Box::new(move |x| t4.objective_envelope(x)),
            primal_grad: Box::new(move |x| {
                let y = t6.y_star(x);
                t6.full_grad(x, y).0
            }),
            meta: MinMaxMeta {
                lambda,
                l_f,
                l_primal: l_f * (1.0 + l_f / lambda),
                kappa: l_f / lambda,
                sigma_sq,
                delta_f: delta_f.max(0.0),
                delta_x0: sigma_sq,
            },
            f_star: self.envelope_min(),
            grad_inf_bound: None,
            grad_norm_bound: None,
        }
    }

    /// Envelope `F(x) = max_y f(x, y)`.
    pub fn objective_envelope(&self, x: &[f64]) -> f64 {
        self.objective(x, self.y_star(x))
    }

    /// Numerical minimum of the (quadratic) envelope.
    pub fn envelope_min(&self) -> f64 {
        // The envelope is a convex quadratic in x; minimize by damped
        // full-batch gradient descent (exact enough for Δ_F bookkeeping).
        let mut x = vec![0.0; self.d + 2];
        let step = 0.5 / self.declared_constants().0.max(1.0);
        let mut best = self.objective_envelope(&x);
        for _ in 0..5_000 {
            let y = self.y_star(&x);
            let (g, _) = self.full_grad(&x, y);
            for (xi, gi) in x.iter_mut().zip(&g) {
                *xi -= step * gi;
            }
            best = best.min(self.objective_envelope(&x));
        }
        best
    }

    /// `(L_f, σ²)`: joint smoothness via the exact quadratic Hessian's
    /// spectral norm; variance via the exact finite-population second
    /// moment of the sampled gradient at a reference point.
    pub fn declared_constants(&self) -> (f64, f64) {
        let dim = self.d + 3;
        // Assemble the Hessian of mean F in (w, s, r, y) by finite
        // differencing the (linear) gradient — exact for a quadratic.
        let mut hess = Mat::zeros(dim, dim);
        let x0 = vec![0.0; self.d + 2];
        let gradient = |z: &[f64]| -> Vector {
            let (x, y) = z.split_at(self.d + 2);
            let (gx, gy) = self.full_grad(x, y[0]);
            let mut out = gx;
            out.push(gy);
            out
        };
        let z0 = {
            let mut z = x0;
            z.push(0.0);
            z
        };
        let g0 = gradient(&z0);
        for j in 0..dim {
            let mut z = z0.clone();
            z[j] += 1.0;
            let gj = gradient(&z);
            for i in 0..dim {
                hess[(i, j)] = gj[i] - g0[i];
            }
        }
        // Symmetrize rounding noise.
        for i in 0..dim {
            for j in (i + 1)..dim {
                let s = 0.5 * (hess[(i, j)] + hess[(j, i)]);
                hess[(i, j)] = s;
                hess[(j, i)] = s;
            }
        }
        let l_f = hess.spectral_norm();
        // Exact sampling variance of the oracle at (x, y) = (0, 0):
        // E‖g_i − ḡ‖² over the finite population.
        let x = vec![0.0; self.d + 2];
        let (mean_gx, mean_gy) = self.full_grad(&x, 0.0);
        let mut var = 0.0;
        for i in 0..self.n() {
            let (gx, gy) = self.sample_grad(&x, 0.0, i);
            var += crate::vecmat::dist_sq(&gx, &mean_gx) + (gy - mean_gy) * (gy - mean_gy);
        }
        (l_f, var / self.n() as f64)
    }

    /// CSV export of the dataset: `a_1,…,a_d,label` per row.
    pub fn csv_data(&self) -> String {
        let mut out = String::new();
        for (a, b) in self.features.iter().zip(&self.labels) {
            let row: Vec<String> = a.iter().map(|v| format!("{v:.17e}")).collect();
            out.push_str(&row.join(","));
            out.push(',');
            out.push_str(&b.to_string());
            out.push('\n');
        }
        out
    }

    pub fn fixture(&self) -> String {
        let mut w = FixtureWriter::new("auc_minmax", self.seed);
        w.int("n_pos", self.n_pos)
            .int("n_neg", self.n_neg)
            .int("dim", self.d)
            .scalar("separation", self.separation)
            .scalar("p", self.p)
            .vector("direction", &self.direction);
        w.finish()
    }
}

fn split_wsr(x: &[f64], d: usize) -> (&[f64], f64, f64) {
    (&x[..d], x[d], x[d + 1])
}

/// Standard normal CDF via the Abramowitz–Stegun erf approximation
/// (absolute error < 1.5e−7).
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / 2.0f64.sqrt()))
}

fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

// ---------------------------------------------------------------------------
// Bilevel quadratic benchmark
// ---------------------------------------------------------------------------

/// Lower level `g(x, y) = ½yᵀHy − yᵀ(Bx + c)` (`H` diagonal with spectrum
/// in `[λ, 2λ]`), upper level `f(x, y) = ½‖y − y_ref‖² + ½‖x‖²`:
/// `y*(x) = H⁻¹(Bx + c)`, hypergradient
/// `∇F(x) = x + BᵀH⁻¹(y*(x) − y_ref)`. Oracle noise is bounded (uniform
/// per coordinate; symmetric band perturbations for the Hessian draw) so
/// every constants bound is certifiable.
pub struct BilevelQuadratic {
    pub d: usize,
    pub d_dual: usize,
    pub lambda: f64,
    pub seed: u64,
    pub h_diag: Vector,
    pub b: Mat,
    pub c: Vector,
    pub y_ref: Vector,
    /// Per-coordinate half-width of the uniform vector-oracle noise.
    pub noise: f64,
    /// Symmetric Hessian perturbation direction (‖·‖ ≤ 0.4λ).
    pub h_perturb: Mat,
    pub x_min: Vector,
    pub f_star: f64,
}

pub fn make_bilevel_quadratic(d: usize, d_dual: usize, lambda: f64, seed: u64) -> Result<BilevelQuadratic> {
    if !(lambda > 0.0) {
        return Err(Error::config("lambda must be positive"));
    }
    let mut stream = build_stream(seed);
    let h_diag: Vector = (0..d_dual)
        .map(|_| lambda * (1.0 + stream.uniform()))
        .collect();
    let mut b = Mat::from_rows(
        d_dual,
        d,
        &(0..d * d_dual).map(|_| stream.normal()).collect::<Vec<_>>(),
    );
    let s = b.spectral_norm();
    b = b.mat_scale(0.2 / s);
    // Modest driving terms: the declared gradient bound C_fy enters the
    // theorem constants squared, so small amplitudes keep the derived
    // horizons desk-scale.
    let c = stream.normal_vec(d_dual, 0.3);
    let y_ref = stream.normal_vec(d_dual, 0.3);
    // Symmetric perturbation with spectral norm 0.4λ.
    let raw = Mat::from_rows(
        d_dual,
        d_dual,
        &(0..d_dual * d_dual).map(|_| stream.normal()).collect::<Vec<_>>(),
    );
    let mut sym = raw.clone();
    for i in 0..d_dual {
        for j in 0..d_dual {
            sym[(i, j)] = 0.5 * (raw[(i, j)] + raw[(j, i)]);
        }
    }
    let sn = sym.spectral_norm();
    let h_perturb = sym.mat_scale(0.4 * lambda / sn);
    // Envelope minimizer: solve (I + BᵀH⁻²B)x = −BᵀH⁻¹(H⁻¹c − y_ref).
    let h_inv = Mat::from_diag(&h_diag.iter().map(|h| 1.0 / h).collect::<Vec<_>>());
    let bt_hinv = b.transpose().matmul(&h_inv);
    let m = {
        let mut m = Mat::identity(d);
        let quad = bt_hinv.matmul(&h_inv).matmul(&b);
        m = m.mat_add(&quad);
        m
    };
    let rhs_vec: Vector = {
        let inner: Vector = h_inv
            .matvec(&c)
            .iter()
            .zip(&y_ref)
            .map(|(a, b)| a - b)
            .collect();
        bt_hinv.matvec(&inner).iter().map(|v| -v).collect()
    };
    let x_min = sym_inverse(&m)?.matvec(&rhs_vec);
    let envelope_at = |x: &[f64]| -> f64 {
        let bx_c: Vector = b.matvec(x).iter().zip(&c).map(|(a, ci)| a + ci).collect();
        let ys = h_inv.matvec(&bx_c);
        let diff: Vector = ys.iter().zip(&y_ref).map(|(a, b)| a - b).collect();
        0.5 * norm_sq(&diff) + 0.5 * norm_sq(x)
    };
    let f_star = envelope_at(&x_min);
    Ok(BilevelQuadratic {
        d,
        d_dual,
        lambda,
        seed,
        h_diag,
        b,
        c,
        y_ref,
        noise: 0.0,
        h_perturb,
        x_min,
        f_star,
    })
}

impl BilevelQuadratic {
    pub fn y_star(&self, x: &[f64]) -> Vector {
        let bx_c: Vector = self
            .b
            .matvec(x)
            .iter()
            .zip(&self.c)
            .map(|(a, ci)| a + ci)
            .collect();
        bx_c.iter().zip(&self.h_diag) .map(|(v, h)| v / h).collect()
    }

    pub fn envelope(&self, x: &[f64]) -> f64 {
        let ys = self.y_star(x);
        let diff: Vector = ys.iter().zip(&self.y_ref).map(|(a, b)| a - b).collect();
        0.5 * norm_sq(&diff) + 0.5 * norm_sq(x)
    }

    pub fn hypergrad(&self, x: &[f64]) -> Vector {
        let ys = self.y_star(x);
        let inner: Vector = ys
            .iter()
            .zip(&self.y_ref)
            .zip(&self.h_diag)
            .map(|((yi, ri), h)| (yi - ri) / h)
            .collect();
        let corr = self.b.tr_matvec(&inner);
        x.iter().zip(&corr).map(|(xi, ci)| xi + ci).collect()
    }

    /// Certified `L_y = ‖H⁻¹B‖`.
    pub fn l_y(&self) -> f64 {
        let h_inv = Mat::from_diag(&self.h_diag.iter().map(|h| 1.0 / h).collect::<Vec<_>>());
        h_inv.matmul(&self.b).spectral_norm()
    }

    /// Bilevel bundle with bounded noise: vector oracles get independent
    /// uniform `[−noise, noise]` per-coordinate perturbations; the matrix
    /// oracles draw `H + t·P` and `(1 + t′)·(−Bᵀ)` with amplitudes scaled
    /// by `min(1, 4·noise)` so every Hessian draw stays inside
    /// `[0.6λ·I, C_gyy·I]` and matrix noise vanishes with vector noise.
    pub fn bilevel_problem(&self, noise: f64) -> Result<BilevelProblem> {
        if noise < 0.0 {
            return Err(Error::config("noise half-width must be nonnegative"));
        }
        // Matrix-noise scale: full band at noise >= 0.25, proportional
        // below, so the theorem constants shrink with the noise level.
        let mat_scale = (4.0 * noise).min(1.0);
        let c_gyy = 2.0 * self.lambda + 0.4 * self.lambda;
        // Trajectory-region bound on ‖∇_y f‖ = ‖y − y_ref‖: the dual
        // iterate travels between y₀ = 0 and the selection path, with
        // slack for the stochastic excursions.
        let x0_probe: Vector = self.x_min.iter().map(|v| v + 0.1 / (self.d as f64).sqrt()).collect();
        let c_fy = 2.0 + norm(&self.y_ref) + 2.0 * norm(&self.y_star(&x0_probe));
        let c_gxy = self.b.spectral_norm();
        let gxy_noise = 0.1 * mat_scale * c_gxy;
        let h_amp = 0.4 * self.lambda * mat_scale;
        let max_dim = self.d.max(self.d_dual) as f64;
        let sigma_sq_vec = max_dim * noise * noise / 3.0;
        let sigma_sq = sigma_sq_vec
            .max(h_amp * h_amp / 3.0)
            .max(gxy_noise * gxy_noise / 3.0);
        let constants = BilevelConstants {
            lambda: 0.6 * self.lambda,
            c_fy,
            c_gxy: c_gxy + gxy_noise,
            c_gyy,
            l_fx: 1.0,
            l_fy: 1.0,
            l_gy: c_gyy,
            l_gxy: c_gxy + gxy_noise,
            l_gyy: 0.0,
            sigma_sq,
        };
        let (b1, b2, b3) = (self.b.clone(), self.b.clone(), self.b.clone());
        let (h1, h2) = (self.h_diag.clone(), self.h_diag.clone());
        let c1 = self.c.clone();
        let (yr1, yr2) = (self.y_ref.clone(), self.y_ref.clone());
        let pert = self.h_perturb.clone();
        let d = self.d;
        let d_dual = self.d_dual;
        let uniform_noise = move |g: &mut Vector, s: &mut Stream| {
            if noise > 0.0 {
                for gi in g.iter_mut() {
                    *gi += noise * (2.0 * s.uniform() - 1.0);
                }
            }
        };
        let un1 = uniform_noise;
        let un2 = uniform_noise;
        let un3 = uniform_noise;
        let off = 0.1 / (self.d as f64).sqrt();
        let x0: Vector = self.x_min.iter().map(|v| v + off).collect();
        let y0 = vec![0.0; d_dual];
        let gxy_exact = self.b.transpose().mat_scale(-1.0);
        let (gx1, gx2) = (gxy_exact.clone(), gxy_exact.clone());

        let this_y_star = {
            let b = self.b.clone();
            let c = self.c.clone();
            let h = self.h_diag.clone();
            Box::new(move |x: &[f64]| -> Vector {
                b.matvec(x)
                    .iter()
                    .zip(&c)
                    .zip(&h)
                    .map(|((a, ci), hi)| (a + ci) / hi)
                    .collect()
            })
        };
        let this_hyper = {
            let b = self.b.clone();
            let c = self.c.clone();
            let h = self.h_diag.clone();
            let yr = self.y_ref.clone();
            Box::new(move |x: &[f64]| -> Vector {
                let ys: Vector = b
                    .matvec(x)
                    .iter()
                    .zip(&c)
                    .zip(&h)
                    .map(|((a, ci), hi)| (a + ci) / hi)
                    .collect();
                let inner: Vector = ys
                    .iter()
                    .zip(&yr)
                    .zip(&h)
                    .map(|((yi, ri), hi)| (yi - ri) / hi)
                    .collect();
                let corr = b.tr_matvec(&inner);
                x.iter().zip(&corr).map(|(xi, ci)| xi + ci).collect()
            })
        };
        let this_env = {
            let b = self.b.clone();
            let c = self.c.clone();
            let h = self.h_diag.clone();
            let yr = self.y_ref.clone();
            Box::new(move |x: &[f64]| -> f64 {
                let ys: Vector = b
                    .matvec(x)
                    .iter()
                    .zip(&c)
                    .zip(&h)
                    .map(|((a, ci), hi)| (a + ci) / hi)
                    .collect();
                let diff: Vector = ys.iter().zip(&yr).map(|(a, bb)| a - bb).collect();
                0.5 * norm_sq(&diff) + 0.5 * norm_sq(x)
            })
        };

        Ok(BilevelProblem {
            name: format!(
                "bilevel_quadratic(d={}, d'={}, lambda={}, seed={})",
                self.d, self.d_dual, self.lambda, self.seed
            ),
            oracle: BilevelOracle {
                dim_x: d,
                dim_y: d_dual,
                o_fx: Box::new(move |x, _y, s| {
                    let mut g = x.to_vec();
                    un1(&mut g, s);
                    g
                }),
                o_fy: Box::new(move |_x, y, s| {
                    let mut g: Vector = y.iter().zip(&yr1).map(|(yi, ri)| yi - ri).collect();
                    un2(&mut g, s);
                    g
                }),
                o_gy: Box::new(move |x, y, s| {
                    let bx: Vector = b1.matvec(x);
                    let mut g: Vector = y
                        .iter()
                        .zip(&h1)
                        .zip(&bx)
                        .zip(&c1)
                        .map(|(((yi, hi), bxi), ci)| hi * yi - bxi - ci)
                        .collect();
                    un3(&mut g, s);
                    g
                }),
                o_gxy: Box::new(move |_x, _y, s| {
                    // (1 + t)·(−Bᵀ): bounded perturbation of spectral
                    // norm at most 0.1·mat_scale·‖B‖.
                    let t = 0.1 * mat_scale * (2.0 * s.uniform() - 1.0);
                    gx1.mat_scale(1.0 + t)
                }),
                o_gyy: Box::new(move |_x, _y, s| {
                    let t = mat_scale * (2.0 * s.uniform() - 1.0);
                    Mat::from_diag(&h2).mat_add(&pert.mat_scale(t))
                }),
                constants,
            },
            x0,
            y0,
            y_star: this_y_star,
            hypergrad: this_hyper,
            envelope: this_env,
            f_star: self.f_star,
            grad_fx: Box::new(|x, _y| x.to_vec()),
            grad_fy: Box::new(move |_x, y| {
                y.iter().zip(&yr2).map(|(yi, ri)| yi - ri).collect()
            }),
            grad_gy: {
                let h = self.h_diag.clone();
                let c = self.c.clone();
                Box::new(move |x, y| {
                    let bx = b2.matvec(x);
                    y.iter()
                        .zip(&h)
                        .zip(&bx)
                        .zip(&c)
                        .map(|(((yi, hi), bxi), ci)| hi * yi - bxi - ci)
                        .collect()
                })
            },
            gxy: Box::new(move |_x, _y| gx2.clone()),
            gyy: {
                let h = self.h_diag.clone();
                Box::new(move |_x, _y| Mat::from_diag(&h))
            },
            l_y: {
                let h_inv =
                    Mat::from_diag(&self.h_diag.iter().map(|h| 1.0 / h).collect::<Vec<_>>());
                h_inv.matmul(&b3).spectral_norm()
            },
        })
    }

    /// Schedule metadata; `delta_z0`/`delta_y0` from the start state.
    pub fn bilevel_meta(&self, problem: &BilevelProblem) -> BilevelMeta {
        let delta_y0 = crate::vecmat::dist_sq(&problem.y0, &(problem.y_star)(&problem.x0));
        BilevelMeta {
            constants: problem.oracle.constants,
            l_y: problem.l_y,
            delta_f: (problem.envelope)(&problem.x0) - problem.f_star,
            delta_z0: problem.oracle.constants.sigma_sq + delta_y0,
            delta_y0,
        }
    }

    pub fn fixture(&self) -> String {
        let mut w = FixtureWriter::new("bilevel_quadratic", self.seed);
        w.int("dim_x", self.d)
            .int("dim_y", self.d_dual)
            .scalar("lambda", self.lambda)
            .vector("h_diag", &self.h_diag)
            .matrix("b", &self.b)
            .vector("c", &self.c)
            .vector("y_ref", &self.y_ref);
        w.finish()
    }
}

/// Problem identifiers known to the harness.
pub const PROBLEM_IDS: &[&str] = &[
    "quadratic",
    "pl_least_squares",
    "reddi_drift",
    "saddle_quadratic",
    "dual_pl_saddle",
    "auc_minmax",
    "bilevel_quadratic",
];
