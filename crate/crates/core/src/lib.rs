//! Weighted least-squares fitting of the log-periodic power law (LPPL)
//!
//! ```text
//! ln p(i) ~ A - B (T - i)^m (1 + C cos(omega ln(T - i) + phi))
//! ```
//!
//! to price series, for detecting endogenous bubbles and estimating their
//! critical time `T`.
//!
//! * [`model`]: the LPPL function, its analytic Jacobian and the parallel
//!   residual/Jacobian kernel.
//! * [`weights`]: uniform, step and quadratic recency weights.
//! * [`solver`]: Levenberg-Marquardt with damping restarts and box projection.
//! * [`linear`]: the linear sub-problem in `(A, B, C)` and its adaptive
//!   interleaving with LM.
//! * [`init`]: exponential pre-fit and peak-triple starting points.
//! * [`synth`]: LPPL plus Brownian motion test traces.
//! * [`ingest`]: CSV loading.
//! * [`driver`]: multi-start runs, reports, verdicts and benchmarks.

// Negated float comparisons are deliberate: NaN must fail the checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod driver;
pub mod error;
pub mod ingest;
pub mod init;
pub mod linear;
pub mod model;
pub mod solver;
pub mod synth;
pub mod weights;

pub use error::{LpplError, Result};
pub use linear::{interleave_fit, solve_linear_subsystem, FitConfig, InterleaveConfig};
pub use model::{evaluate_batch, lppl_jacobian_row, lppl_value, Evaluator, LpplParams, PriceSeries};
pub use solver::{lm_fit, FitResult, LmConfig, Termination};
pub use weights::{build_weights, WeightScheme};
