//! The log-periodic power law, its analytic Jacobian and the data-parallel
//! residual/Jacobian kernel.
//!
//! ```text
//! f(x) = A - B (T - x)^m (1 + C cos(omega ln(T - x) + phi))
//! ```
//!
//! Samples are indexed `x = 1..=n` (trading periods). Residuals are
//! `r_i = f(i) - ln p(i)` and the objective is `E = sum w_i r_i^2`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LpplError, Result};

/// Number of LPPL parameters.
pub const NPARAMS: usize = 7;

/// Smallest admissible `T - x` at any evaluated sample.
pub const MIN_GAP: f64 = 1e-6;

/// Points per reduction block. Partial sums of the error are formed per block
/// and combined in index order, so the reduced error does not depend on how
/// the blocks are distributed over threads.
const BLOCK: usize = 64;

/// The parameter vector `(A, B, T, m, C, omega, phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpplParams {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    /// Critical time, in trading periods.
    #[serde(rename = "T")]
    pub tc: f64,
    pub m: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub omega: f64,
    pub phi: f64,
}

impl LpplParams {
    pub const NAMES: [&'static str; NPARAMS] = ["A", "B", "T", "m", "C", "omega", "phi"];

    pub fn new(a: f64, b: f64, tc: f64, m: f64, c: f64, omega: f64, phi: f64) -> Self {
        Self {
            a,
            b,
            tc,
            m,
            c,
            omega,
            phi,
        }
    }

    pub fn to_array(&self) -> [f64; NPARAMS] {
        [self.a, self.b, self.tc, self.m, self.c, self.omega, self.phi]
    }

    pub fn from_array(p: [f64; NPARAMS]) -> Self {
        Self::new(p[0], p[1], p[2], p[3], p[4], p[5], p[6])
    }

    /// Checks `B > 0`, `0 < m <= 1` and `T - n >= MIN_GAP` for a series of
    /// length `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(LpplError::InvalidParams(format!(
                "non-finite component in {self:?}"
            )));
        }
        if self.b <= 0.0 {
            return Err(LpplError::InvalidParams(format!("B = {} must be > 0", self.b)));
        }
        if !(self.m > 0.0 && self.m <= 1.0) {
            return Err(LpplError::InvalidParams(format!(
                "m = {} must lie in (0, 1]",
                self.m
            )));
        }
        let gap = self.tc - n as f64;
        if !(gap >= MIN_GAP) {
            return Err(LpplError::Domain { index: n, gap });
        }
        Ok(())
    }
}

/// Indexed log prices with per-point weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    log_prices: Vec<f64>,
    weights: Vec<f64>,
}

impl PriceSeries {
    /// Minimum number of positively weighted points (seven parameters plus one
    /// degree of freedom).
    pub const MIN_SUPPORT: usize = NPARAMS + 1;

    pub fn new(log_prices: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if log_prices.len() != weights.len() {
            return Err(LpplError::InvalidSeries(format!(
                "{} log prices but {} weights",
                log_prices.len(),
                weights.len()
            )));
        }
        if let Some(i) = log_prices.iter().position(|v| !v.is_finite()) {
            return Err(LpplError::InvalidSeries(format!(
                "log price at index {} is not finite",
                i + 1
            )));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(LpplError::InvalidSeries(format!(
                "weight at index {} must be finite and >= 0, got {}",
                i + 1,
                weights[i]
            )));
        }
        let support = weights.iter().filter(|w| **w > 0.0).count();
        if support < Self::MIN_SUPPORT {
            return Err(LpplError::InvalidSeries(format!(
                "{support} positively weighted points, need at least {}",
                Self::MIN_SUPPORT
            )));
        }
        Ok(Self { log_prices, weights })
    }

    /// Uniformly weighted series.
    pub fn unweighted(log_prices: Vec<f64>) -> Result<Self> {
        let n = log_prices.len();
        Self::new(log_prices, vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.log_prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_prices.is_empty()
    }

    pub fn log_prices(&self) -> &[f64] {
        &self.log_prices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Degrees of freedom `n - 7`, always over the full length.
    pub fn degrees_of_freedom(&self) -> usize {
        self.len() - NPARAMS
    }

    /// Same prices, different weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.log_prices.clone(), weights)
    }
}

/// Residuals and the weighted error they produce.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub residuals: Vec<f64>,
    /// `E = sum w_i r_i^2`.
    pub error: f64,
    /// `E / (n - 7)`.
    pub average_error: f64,
}

/// Output of one batch evaluation: residuals plus the `n x 7` Jacobian of
/// `f` (equivalently of the residuals) in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: ResidualReport,
    pub jacobian: Vec<[f64; NPARAMS]>,
}

impl Evaluation {
    pub fn error(&self) -> f64 {
        self.report.error
    }

    pub fn residuals(&self) -> &[f64] {
        &self.report.residuals
    }
}

fn check_gap(params: &LpplParams, x: f64, index: usize) -> Result<f64> {
    let gap = params.tc - x;
    if gap >= MIN_GAP {
        Ok(gap)
    } else {
        Err(LpplError::Domain { index, gap })
    }
}

/// `f(x)` for a single (possibly fractional) time.
pub fn lppl_value(params: &LpplParams, x: f64) -> Result<f64> {
    let gap = params.tc - x;
    if !(gap > 0.0) {
        return Err(LpplError::Domain {
            index: x.max(0.0) as usize,
            gap,
        });
    }
    Ok(value_at(params, gap))
}

#[inline]
fn value_at(p: &LpplParams, u: f64) -> f64 {
    let g = u.powf(p.m);
    let theta = p.omega * u.ln() + p.phi;
    p.a - p.b * g * (1.0 + p.c * theta.cos())
}

/// Value and gradient of `f` with respect to `(A, B, T, m, C, omega, phi)`,
/// given `u = T - x > 0`.
#[inline]
fn value_and_gradient(p: &LpplParams, u: f64) -> (f64, [f64; NPARAMS]) {
    let ln_u = u.ln();
    let g = u.powf(p.m);
    let theta = p.omega * ln_u + p.phi;
    let (sin_t, cos_t) = theta.sin_cos();
    let osc = 1.0 + p.c * cos_t;
    let bg = p.b * g;
    let g_over_u = g / u;
    let bgc_sin = bg * p.c * sin_t;

    let f = p.a - bg * osc;
    let grad = [
        1.0,
        -g * osc,
        p.b * g_over_u * (p.c * p.omega * sin_t - p.m * osc),
        -bg * ln_u * osc,
        -bg * cos_t,
        bgc_sin * ln_u,
        bgc_sin,
    ];
    (f, grad)
}

/// Closed-form partial derivatives of `f` at `x`.
pub fn lppl_jacobian_row(params: &LpplParams, x: f64) -> Result<[f64; NPARAMS]> {
    let gap = params.tc - x;
    if !(gap > 0.0) {
        return Err(LpplError::Domain {
            index: x.max(0.0) as usize,
            gap,
        });
    }
    Ok(value_and_gradient(params, gap).1)
}

/// Evaluates residuals and Jacobian over a series with a fixed number of
/// worker threads.
///
/// The index range is split statically into `threads` contiguous chunks made
/// of whole reduction blocks. Per-point outputs never depend on the split and
/// the error is reduced block by block in index order, so results are
/// bitwise identical for every thread count.
pub struct Evaluator {
    threads: usize,
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Evaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Evaluator")
            .field("threads", &self.threads)
            .finish()
    }
}

impl Evaluator {
    pub fn new(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Err(LpplError::InvalidParams("threads must be >= 1".into()));
        }
        let pool = if threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| LpplError::Io(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self { threads, pool })
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn evaluate(&self, params: &LpplParams, series: &PriceSeries) -> Result<Evaluation> {
        let n = series.len();
        if params.to_array().iter().any(|v| !v.is_finite()) {
            return Err(LpplError::InvalidParams(format!(
                "non-finite component in {params:?}"
            )));
        }
        // T - x is smallest at the last sample.
        check_gap(params, n as f64, n)?;

        let mut residuals = vec![0.0; n];
        let mut jacobian = vec![[0.0; NPARAMS]; n];
        let nblocks = n.div_ceil(BLOCK);
        let chunk = nblocks.div_ceil(self.threads).max(1) * BLOCK;
        let y = series.log_prices();
        let w = series.weights();

        let work = |(ci, (res, jac)): (usize, (&mut [f64], &mut [[f64; NPARAMS]]))| {
            let start = ci * chunk;
            let mut partials = Vec::with_capacity(chunk / BLOCK);
            for (bi, (rb, jb)) in res.chunks_mut(BLOCK).zip(jac.chunks_mut(BLOCK)).enumerate() {
                let base = start + bi * BLOCK;
                let mut acc = 0.0;
                for (k, (r, row)) in rb.iter_mut().zip(jb.iter_mut()).enumerate() {
                    let idx = base + k;
                    let u = params.tc - (idx + 1) as f64;
                    let (f, grad) = value_and_gradient(params, u);
                    *r = f - y[idx];
                    *row = grad;
                    acc += w[idx] * *r * *r;
                }
                partials.push(acc);
            }
            partials
        };

        let partials: Vec<Vec<f64>> = match &self.pool {
            Some(pool) => pool.install(|| {
                residuals
                    .par_chunks_mut(chunk)
                    .zip(jacobian.par_chunks_mut(chunk))
                    .enumerate()
                    .map(work)
                    .collect()
            }),
            None => residuals
                .chunks_mut(chunk)
                .zip(jacobian.chunks_mut(chunk))
                .enumerate()
                .map(work)
                .collect(),
        };
        let error: f64 = partials.iter().flatten().sum();
        if !error.is_finite() {
            return Err(LpplError::InvalidParams(format!(
                "non-finite error at {params:?}"
            )));
        }
        Ok(Evaluation {
            report: ResidualReport {
                residuals,
                error,
                average_error: error / series.degrees_of_freedom() as f64,
            },
            jacobian,
        })
    }

    /// Residuals and error only.
    pub fn residuals(&self, params: &LpplParams, series: &PriceSeries) -> Result<ResidualReport> {
        self.evaluate(params, series).map(|e| e.report)
    }
}

/// One-shot batch evaluation with `threads` workers.
pub fn evaluate_batch(
    params: &LpplParams,
    series: &PriceSeries,
    threads: usize,
) -> Result<Evaluation> {
    Evaluator::new(threads)?.evaluate(params, series)
}

/// Sequential weighted error of `params`, used where a full Jacobian is not
/// needed.
pub fn weighted_error(params: &LpplParams, series: &PriceSeries) -> Result<f64> {
    Evaluator::new(1)?.evaluate(params, series).map(|e| e.error())
}

/// `f(1..=n)`; fails if `T - n` is below the guard.
pub fn lppl_curve(params: &LpplParams, n: usize) -> Result<Vec<f64>> {
    check_gap(params, n as f64, n)?;
    Ok((1..=n)
        .map(|i| value_at(params, params.tc - i as f64))
        .collect())
}
