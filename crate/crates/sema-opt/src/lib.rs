//! Stochastic optimization built around an exponential moving-average
//! gradient estimator.
//!
//! The library provides:
//!
//! - [`oracle`]: unbiased stochastic gradient oracles with declared variance
//!   metadata, plus deterministic seeded randomness ([`rng`]).
//! - [`scalers`]: six second-moment step-size scalers (SHB, Adam, AMSGrad,
//!   AdaFom, Adam+, AdaBound) sharing the step rule
//!   `x ← x − η·v/(√u + G0)`.
//! - [`sema`]: the moving-average estimator itself, a randomized
//!   Neumann-series Hessian-inverse sampler, vector/spectral projections,
//!   and a replicate-averaged variance-recursion checker.
//! - [`minimize`], [`minmax`], [`bilevel`]: drivers for smooth minimization
//!   (constant, decreasing, and stagewise schedules), primal-dual min-max
//!   (PDSM/PDAda), and bilevel optimization (SMB/SBMA).
//! - [`problems`]: closed-form synthetic benchmarks exposing true gradients,
//!   optima, and every constant the theorem-driven schedules need.
//! - [`harness`]: JSON run specs, CSV trajectory emission, rate fitting, and
//!   named verification suites behind the `sema-opt` CLI.
//!
//! # Example
//!
//! Run a noiseless heavy-ball minimization on a quadratic and check that it
//! behaves like plain gradient descent:
//!
//! ```
//! use sema_opt::minimize::{asa_run, Schedule};
//! use sema_opt::problems::make_quadratic;
//! use sema_opt::rng::Stream;
//! use sema_opt::scalers::ScalerKind;
//!
//! let problem = make_quadratic(4, 2.0, 7).min_problem(0.0); // zero noise
//! let schedule = Schedule::constant(1.0, 0.05, 200); // γ=1: memoryless
//! let result = asa_run(&problem, &ScalerKind::Shb, 0.0, &schedule,
//!                      &mut Stream::new(1, 0)).unwrap();
//! // The final iterate is essentially stationary; the running average of
//! // ‖∇F‖² stays dominated by the start point's gradient.
//! let last = result.trajectory.points.last().unwrap();
//! assert!(last.grad_norm_sq < 1e-8);
//! assert!(result.trajectory.avg_grad_norm_sq() < 0.1);
//! ```

pub mod bilevel;
pub mod error;
pub mod harness;
pub mod minimize;
pub mod minmax;
pub mod oracle;
pub mod problems;
pub mod rng;
pub mod scalers;
pub mod sema;
pub mod vecmat;

pub use error::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
