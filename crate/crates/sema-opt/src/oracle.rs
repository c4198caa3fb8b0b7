//! Unbiased stochastic oracle abstractions.
//!
//! Every solver in this crate consumes gradients through an oracle that
//! couples a seeded sampler with declared metadata: a total-variance bound
//! `σ²` and a relative-variance constant `c` such that
//! `E‖O(x) − ∇F(x)‖² ≤ σ²(1 + c‖∇F(x)‖²)`. The synthetic problems are
//! self-describing — they export exactly the constants the theorem-driven
//! schedules need — so schedules can be instantiated without estimation.

use crate::rng::Stream;
use crate::vecmat::{dist_sq, scale, sub, Vector};
use crate::{Error, Result};

/// Closure computing an exact gradient.
pub type GradFn = Box<dyn Fn(&[f64]) -> Vector + Send + Sync>;
/// Closure drawing one stochastic gradient sample.
pub type SampleFn = Box<dyn Fn(&[f64], &mut Stream) -> Vector + Send + Sync>;

/// Declared variance metadata: `E‖O(x) − ∇F(x)‖² ≤ sigma_sq·(1 + rel_c·‖∇F(x)‖²)`.
///
/// `sigma_sq` bounds the *total* (summed over coordinates) squared deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceParams {
    pub sigma_sq: f64,
    pub rel_c: f64,
}

/// An unbiased stochastic gradient oracle.
pub struct GradOracle {
    pub dim: usize,
    pub sample: SampleFn,
    /// Exact gradient, available for every synthetic problem.
    pub true_grad: Option<GradFn>,
    pub variance: VarianceParams,
    /// Number of independent samples averaged per draw. The analyzed methods
    /// use O(1) batches; this is plumbing and defaults to 1.
    pub batch: usize,
}

impl GradOracle {
    /// Draw one (possibly batch-averaged) stochastic gradient.
    pub fn draw(&self, x: &[f64], stream: &mut Stream) -> Vector {
        if self.batch <= 1 {
            return (self.sample)(x, stream);
        }
        let mut acc = (self.sample)(x, stream);
        for _ in 1..self.batch {
            let s = (self.sample)(x, stream);
            for (a, b) in acc.iter_mut().zip(&s) {
                *a += b;
            }
        }
        scale(&acc, 1.0 / self.batch as f64)
    }

    /// Exact gradient; errors when the oracle has no closed form.
    pub fn grad(&self, x: &[f64]) -> Result<Vector> {
        self.true_grad
            .as_ref()
            .map(|f| f(x))
            .ok_or_else(|| Error::config("oracle required: no true gradient available"))
    }
}

/// Gradient oracle with additive isotropic Gaussian noise:
/// `O(x) = ∇F(x) + ξ`, `ξ ~ N(0, σ²I)`.
///
/// The declared total-variance bound is `d·σ²` (the expectation of `‖ξ‖²`),
/// with relative constant `c = 0`.
pub fn gaussian_oracle(
    grad_fn: impl Fn(&[f64]) -> Vector + Send + Sync + Clone + 'static,
    sigma: f64,
    dim: usize,
) -> GradOracle {
    assert!(sigma >= 0.0, "gaussian_oracle: negative sigma");
    let g = grad_fn.clone();
    GradOracle {
        dim,
        sample: Box::new(move |x, stream| {
            let mut v = g(x);
            if sigma > 0.0 {
                for c in v.iter_mut() {
                    *c += sigma * stream.normal();
                }
            }
            v
        }),
        true_grad: Some(Box::new(grad_fn)),
        variance: VarianceParams { sigma_sq: dim as f64 * sigma * sigma, rel_c: 0.0 },
        batch: 1,
    }
}

/// Coordinate-sampling oracle: `O(x) = d·(∇F(x)∘e_i)` with `i` uniform in
/// `{1..d}`. Unbiased, with `E‖O(x) − ∇F(x)‖² = (d−1)‖∇F(x)‖²` exactly, so
/// the declared bound uses `σ² = max(d−1, 1)` and `c = 1` (`c = 0` when
/// `d = 1`, where the oracle is exact).
pub fn coordinate_oracle(
    grad_fn: impl Fn(&[f64]) -> Vector + Send + Sync + Clone + 'static,
    dim: usize,
) -> GradOracle {
    assert!(dim >= 1, "coordinate_oracle: empty dimension");
    let g = grad_fn.clone();
    GradOracle {
        dim,
        sample: Box::new(move |x, stream| {
            let full = g(x);
            let i = stream.index(dim);
            let mut out = vec![0.0; dim];
            out[i] = dim as f64 * full[i];
            out
        }),
        true_grad: Some(Box::new(grad_fn)),
        variance: VarianceParams {
            sigma_sq: ((dim - 1).max(1)) as f64,
            rel_c: if dim >= 2 { 1.0 } else { 0.0 },
        },
        batch: 1,
    }
}

/// Unbiased sample variance of the oracle at `x`:
/// `(1/(n−1)) Σ ‖O_i(x) − mean‖²` over `n` fresh draws.
pub fn estimate_variance(
    oracle: &GradOracle,
    x: &[f64],
    n: usize,
    stream: &mut Stream,
) -> Result<f64> {
    if n < 2 {
        return Err(Error::config("insufficient samples: estimate_variance needs n >= 2"));
    }
    let draws: Vec<Vector> = (0..n).map(|_| oracle.draw(x, stream)).collect();
    let mut mean = vec![0.0; oracle.dim];
    for d in &draws {
        for (m, v) in mean.iter_mut().zip(d) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let ss: f64 = draws.iter().map(|d| dist_sq(d, &mean)).sum();
    Ok(ss / (n - 1) as f64)
}

/// Joint stochastic oracle for min-max problems: one data draw yields both
/// partial gradients `(O_x, O_y)` at `(x, y)`.
pub struct MinMaxOracle {
    pub dim_x: usize,
    pub dim_y: usize,
    #[allow(clippy::type_complexity)]
    pub sample: Box<dyn Fn(&[f64], &[f64], &mut Stream) -> (Vector, Vector) + Send + Sync>,
    #[allow(clippy::type_complexity)]
    pub true_grad_x: Option<Box<dyn Fn(&[f64], &[f64]) -> Vector + Send + Sync>>,
    #[allow(clippy::type_complexity)]
    pub true_grad_y: Option<Box<dyn Fn(&[f64], &[f64]) -> Vector + Send + Sync>>,
    /// Total-variance bound for each partial gradient.
    pub sigma_sq: f64,
}

/// Closure drawing a stochastic matrix sample.
pub type MatSampleFn = Box<dyn Fn(&[f64], &[f64], &mut Stream) -> crate::vecmat::Mat + Send + Sync>;
/// Closure drawing a stochastic vector sample at `(x, y)`.
pub type VecSampleFn = Box<dyn Fn(&[f64], &[f64], &mut Stream) -> Vector + Send + Sync>;

/// Constants bundle for bilevel problems (smoothness/bound constants of the
/// upper objective `f` and lower objective `g`, plus the oracle noise level).
#[derive(Debug, Clone, Copy)]
pub struct BilevelConstants {
    /// Strong-convexity modulus of `g(x, ·)`.
    pub lambda: f64,
    /// Bound on `‖∇_y f‖`.
    pub c_fy: f64,
    /// Bound on `‖∇²_{xy} g‖`.
    pub c_gxy: f64,
    /// Spectral ceiling of `∇²_{yy} g` (and of its oracle draws).
    pub c_gyy: f64,
    pub l_fx: f64,
    pub l_fy: f64,
    pub l_gy: f64,
    pub l_gxy: f64,
    pub l_gyy: f64,
    /// Total-variance bound shared by all component oracles.
    pub sigma_sq: f64,
}

/// Component-wise stochastic oracle for bilevel problems.
pub struct BilevelOracle {
    pub dim_x: usize,
    pub dim_y: usize,
    pub o_fx: VecSampleFn,
    pub o_fy: VecSampleFn,
    pub o_gy: VecSampleFn,
    pub o_gxy: MatSampleFn,
    /// Draws satisfy `0 ⪯ O_gyy ⪯ C_gyy·I` for SMB-mode problems.
    pub o_gyy: MatSampleFn,
    pub constants: BilevelConstants,
}

/// 5·σ√(d/n) statistical tolerance used by the bundled unbiasedness tests.
pub fn mean_test_tolerance(sigma_sq: f64, n: usize) -> f64 {
    5.0 * (sigma_sq / n as f64).sqrt()
}

/// Check `‖mean_n(samples) − true_grad(x)‖ ≤ tol`; returns the deviation.
pub fn unbiasedness_deviation(
    oracle: &GradOracle,
    x: &[f64],
    n: usize,
    stream: &mut Stream,
) -> Result<f64> {
    let truth = oracle.grad(x)?;
    let mut mean = vec![0.0; oracle.dim];
    for _ in 0..n {
        let d = oracle.draw(x, stream);
        for (m, v) in mean.iter_mut().zip(&d) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    Ok(crate::vecmat::norm(&sub(&mean, &truth)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecmat::norm_sq;

    fn identity_grad(x: &[f64]) -> Vector {
        x.to_vec()
    }

    #[test]
    fn zero_noise_gaussian_is_exact() {
        let o = gaussian_oracle(identity_grad, 0.0, 3);
        let x = vec![1.0, -2.0, 0.5];
        let mut s = Stream::new(1, 0);
        assert_eq!(o.draw(&x, &mut s), x);
    }

    #[test]
    fn gaussian_mean_concentrates() {
        let o = gaussian_oracle(identity_grad, 1.0, 2);
        let mut s = Stream::new(5, 0);
        let n = 1_000_000;
        let dev = unbiasedness_deviation(&o, &[0.0, 0.0], n, &mut s).unwrap();
        // 4σ/√n per coordinate.
        assert!(dev < 4.0 * (2.0f64 / n as f64).sqrt() * 2.0, "deviation {dev}");
    }

    #[test]
    fn gaussian_per_coordinate_variance_sigma_two() {
        let o = gaussian_oracle(|_: &[f64]| vec![0.0], 2.0, 1);
        let mut s = Stream::new(9, 0);
        let v = estimate_variance(&o, &[0.0], 1_000_000, &mut s).unwrap();
        assert!((3.9..=4.1).contains(&v), "variance {v}");
    }

    #[test]
    fn coordinate_oracle_d1_is_exact() {
        let o = coordinate_oracle(identity_grad, 1);
        let mut s = Stream::new(2, 0);
        assert_eq!(o.draw(&[3.0], &mut s), vec![3.0]);
        assert_eq!(o.variance.sigma_sq, 1.0);
        assert_eq!(o.variance.rel_c, 0.0);
    }

    #[test]
    fn coordinate_oracle_d2_outcomes_and_mean() {
        let o = coordinate_oracle(|_: &[f64]| vec![1.0, 1.0], 2);
        let mut s = Stream::new(11, 0);
        let n = 100_000;
        let mut mean = [0.0; 2];
        for _ in 0..n {
            let d = o.draw(&[0.0, 0.0], &mut s);
            assert!(d == vec![2.0, 0.0] || d == vec![0.0, 2.0], "unexpected outcome {d:?}");
            mean[0] += d[0];
            mean[1] += d[1];
        }
        mean[0] /= n as f64;
        mean[1] /= n as f64;
        assert!((mean[0] - 1.0).abs() < 0.02 && (mean[1] - 1.0).abs() < 0.02);
    }

    #[test]
    fn coordinate_oracle_variance_is_tight_at_d2() {
        // Both outcomes deviate by ‖(±1, ∓1)‖² = 2 ⇒ E‖O−∇F‖² = 2, and the
        // declared bound (d−1)‖∇F‖² = 2 is met with equality.
        let g = vec![1.0, 1.0];
        let outcomes = [vec![2.0, 0.0], vec![0.0, 2.0]];
        let exact: f64 =
            outcomes.iter().map(|o| dist_sq(o, &g)).sum::<f64>() / outcomes.len() as f64;
        assert_eq!(exact, 2.0);
        assert_eq!(exact, (2.0 - 1.0) * norm_sq(&g));

        let o = coordinate_oracle(move |_: &[f64]| vec![1.0, 1.0], 2);
        let mut s = Stream::new(13, 0);
        let v = estimate_variance(&o, &[0.0, 0.0], 100_000, &mut s).unwrap();
        assert!((v - 2.0).abs() / 2.0 < 0.05, "variance {v}");
    }

    #[test]
    fn estimate_variance_matches_chi_square_expectation() {
        let o = gaussian_oracle(|x: &[f64]| x.to_vec(), 1.0, 3);
        let mut s = Stream::new(17, 0);
        let v = estimate_variance(&o, &[1.0, 2.0, 3.0], 100_000, &mut s).unwrap();
        assert!((v - 3.0).abs() / 3.0 < 0.05, "variance {v}");
    }

    #[test]
    fn estimate_variance_zero_noise_and_small_n() {
        let o = gaussian_oracle(identity_grad, 0.0, 2);
        let mut s = Stream::new(1, 0);
        assert_eq!(estimate_variance(&o, &[1.0, 1.0], 10, &mut s).unwrap(), 0.0);
        assert!(estimate_variance(&o, &[1.0, 1.0], 1, &mut s).is_err());
    }

    #[test]
    fn determinism_across_oracle_draws() {
        let o = gaussian_oracle(identity_grad, 1.5, 4);
        let x = vec![0.1, 0.2, 0.3, 0.4];
        let a: Vec<Vector> = {
            let mut s = Stream::new(99, 3);
            (0..16).map(|_| o.draw(&x, &mut s)).collect()
        };
        let b: Vec<Vector> = {
            let mut s = Stream::new(99, 3);
            (0..16).map(|_| o.draw(&x, &mut s)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn batch_averaging_reduces_variance() {
        let mut o = gaussian_oracle(|_: &[f64]| vec![0.0], 1.0, 1);
        o.batch = 16;
        let mut s = Stream::new(23, 0);
        let v = estimate_variance(&o, &[0.0], 50_000, &mut s).unwrap();
        assert!((v - 1.0 / 16.0).abs() < 0.01, "variance {v}");
    }
}
