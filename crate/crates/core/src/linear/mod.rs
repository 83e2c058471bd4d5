//! The linear sub-problem in `(A, B, C)` and its interleaving with LM.
//!
//! With `(T, m, omega, phi)` held fixed the model is linear in
//! `(A, beta, gamma) = (A, B, B C)`:
//!
//! ```text
//! f(i) = A - beta v(i) - gamma z(i)
//! v(i) = (T - i)^m,  z(i) = (T - i)^m cos(omega ln(T - i) + phi)
//! ```
//!
//! LM always works on all seven parameters with the full analytic Jacobian;
//! the linear solve only proposes a replacement incumbent.

pub mod schedule;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{LpplError, Result};
use crate::model::{Evaluation, Evaluator, LpplParams, PriceSeries, MIN_GAP};
use crate::solver::{lm_run, DampingState, FitResult, LmConfig, Termination, B_MIN};
use schedule::{InterleaveState, LinearSample, LmSample};

pub use schedule::Phase;

/// Relative rank tolerance on the triangular factor of the weighted design.
pub const RANK_TOL: f64 = 1e-10;

/// A linear result must lower the error by at least this relative amount to
/// replace the incumbent; smaller gains are rounding noise.
pub const MIN_RELATIVE_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearSolveResult {
    pub a: f64,
    pub beta: f64,
    pub gamma: f64,
    /// `gamma / beta`.
    pub c: f64,
    /// Fixed `(T, m, omega, phi)` combined with the solved `(A, B, C)`.
    pub params: LpplParams,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinearRejection {
    #[error("weighted design matrix is rank deficient")]
    RankDeficient,
    #[error("solved B = {beta:e} is not positive")]
    NonPositiveBeta { beta: f64 },
    #[error(transparent)]
    Evaluation(#[from] LpplError),
}

fn solve_inner(
    series: &PriceSeries,
    fixed: &LpplParams,
    evaluator: &Evaluator,
) -> std::result::Result<(LinearSolveResult, Evaluation), LinearRejection> {
    let n = series.len();
    let gap = fixed.tc - n as f64;
    if !(gap >= MIN_GAP) {
        return Err(LpplError::Domain { index: n, gap }.into());
    }
    let rows: Vec<usize> = (0..n).filter(|&i| series.weights()[i] > 0.0).collect();
    let mut design = DMatrix::<f64>::zeros(rows.len(), 3);
    let mut rhs = DVector::<f64>::zeros(rows.len());
    for (r, &i) in rows.iter().enumerate() {
        let sw = series.weights()[i].sqrt();
        let u = fixed.tc - (i + 1) as f64;
        let v = u.powf(fixed.m);
        let z = v * (fixed.omega * u.ln() + fixed.phi).cos();
        design[(r, 0)] = sw;
        design[(r, 1)] = -sw * v;
        design[(r, 2)] = -sw * z;
        rhs[r] = sw * series.log_prices()[i];
    }
    let scale = design.norm();
    let qr = design.qr();
    let r_factor = qr.r();
    if (0..3).any(|k| !(r_factor[(k, k)].abs() > RANK_TOL * scale)) {
        return Err(LinearRejection::RankDeficient);
    }
    let qtb = qr.q().transpose() * rhs;
    let coef = r_factor
        .solve_upper_triangular(&qtb)
        .ok_or(LinearRejection::RankDeficient)?;
    let (a, beta, gamma) = (coef[0], coef[1], coef[2]);
    if !(beta > B_MIN) {
        return Err(LinearRejection::NonPositiveBeta { beta });
    }
    let c = gamma / beta;
    let params = LpplParams { a, b: beta, c, ..*fixed };
    let eval = evaluator.evaluate(&params, series)?;
    Ok((
        LinearSolveResult {
            a,
            beta,
            gamma,
            c,
            params,
            error: eval.error(),
        },
        eval,
    ))
}

/// Weighted least squares on `(A, B, C)` with `(T, m, omega, phi)` taken
/// from `fixed`. Rejects rank-deficient designs and non-positive `B`.
pub fn solve_linear_subsystem(
    series: &PriceSeries,
    fixed: &LpplParams,
) -> std::result::Result<LinearSolveResult, LinearRejection> {
    let evaluator = Evaluator::new(1)?;
    solve_inner(series, fixed, &evaluator).map(|(r, _)| r)
}

/// How time is measured for the adaptive `L` scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClockKind {
    /// Kernel work in point evaluations. Deterministic.
    #[default]
    Work,
    /// Wall-clock seconds. Makes the fit path timing dependent.
    Wall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterleaveConfig {
    pub enabled: bool,
    /// Initial (or fixed, when not adaptive) LM iteration bound.
    pub initial_l: usize,
    pub adaptive: bool,
    pub clock: ClockKind,
}

impl Default for InterleaveConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            initial_l: 5,
            adaptive: true,
            clock: ClockKind::Work,
        }
    }
}

/// Solver plus interleaving settings for one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct FitConfig {
    pub lm: LmConfig,
    pub interleave: InterleaveConfig,
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.lm.validate()?;
        if self.interleave.initial_l == 0 {
            return Err(LpplError::InvalidParams("L must be >= 1".into()));
        }
        Ok(())
    }
}

struct Stopwatch {
    kind: ClockKind,
    started: Instant,
}

impl Stopwatch {
    fn start(kind: ClockKind) -> Self {
        Self {
            kind,
            started: Instant::now(),
        }
    }

    /// Elapsed time; `work` is the number of point evaluations performed.
    fn stop(&self, work: usize) -> f64 {
        match self.kind {
            ClockKind::Work => work as f64,
            ClockKind::Wall => self.started.elapsed().as_secs_f64(),
        }
    }
}

/// Per-round record of an interleaved fit.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub l: usize,
    pub lm_iterations: usize,
    pub lm_reduction: f64,
    pub linear_reduction: f64,
    pub linear_outcome: std::result::Result<(), LinearRejection>,
}

/// Alternates bounded LM runs with linear solves until the linear solve no
/// longer improves the incumbent and LM cannot make further progress.
pub fn interleave_fit(
    series: &PriceSeries,
    seed: &LpplParams,
    config: &FitConfig,
    threads: usize,
) -> Result<FitResult> {
    let evaluator = Evaluator::new(threads)?;
    interleave_fit_with(series, seed, config, &evaluator).map(|(fit, _)| fit)
}

pub fn interleave_fit_with(
    series: &PriceSeries,
    seed: &LpplParams,
    config: &FitConfig,
    evaluator: &Evaluator,
) -> Result<(FitResult, Vec<RoundLog>)> {
    config.validate()?;
    seed.validate(series.len())?;
    let n = series.len();
    let lm_cfg = &config.lm;
    let icfg = &config.interleave;
    let wall = Instant::now();

    let mut params = *seed;
    let mut eval = evaluator.evaluate(seed, series)?;
    let mut evaluations = 1;
    let mut trace = vec![eval.error()];
    let mut damping = DampingState::new(lm_cfg);
    let mut sched = InterleaveState::new(icfg.initial_l, lm_cfg.max_iterations);
    let mut total_iterations = 0;
    let mut linear_improvements = 0;
    let mut rounds = Vec::new();

    let termination = loop {
        let budget = lm_cfg.max_iterations - total_iterations;
        let l = if icfg.adaptive { sched.l() } else { icfg.initial_l }.min(budget);

        let before = eval.error();
        let watch = Stopwatch::start(icfg.clock);
        let run = lm_run(
            series,
            params,
            eval,
            lm_cfg,
            evaluator,
            &mut damping,
            l,
            &mut trace,
        );
        // normal equations cost about one evaluation
        let lm_time = watch.stop((run.evaluations + 1) * n);
        evaluations += run.evaluations;
        total_iterations += run.iterations;
        params = run.params;
        eval = run.eval;
        let lm_reduction = before - eval.error();

        if run.termination == Termination::RestartCap {
            break Termination::RestartCap;
        }

        let watch = Stopwatch::start(icfg.clock);
        let linear = solve_inner(series, &params, evaluator);
        evaluations += 1;
        let lin_time = watch.stop(2 * n);
        let incumbent = eval.error();
        let (improved, linear_outcome) = match linear {
            Ok((res, lin_eval)) if res.error < incumbent * (1.0 - MIN_RELATIVE_GAIN) => {
                params = res.params;
                eval = lin_eval;
                trace.push(eval.error());
                linear_improvements += 1;
                (true, Ok(()))
            }
            Ok(_) => (false, Ok(())),
            Err(e) => (false, Err(e)),
        };
        let linear_reduction = incumbent - eval.error();

        rounds.push(RoundLog {
            l,
            lm_iterations: run.iterations,
            lm_reduction,
            linear_reduction,
            linear_outcome,
        });

        if icfg.adaptive {
            sched.record_lm(LmSample {
                iterations: run.iterations,
                time: lm_time,
                reduction: lm_reduction,
            });
            sched.record_linear(LinearSample {
                time: lin_time,
                reduction: linear_reduction,
            });
            sched.update_l();
        }

        if total_iterations >= lm_cfg.max_iterations {
            break Termination::IterationCap;
        }
        if !improved {
            match run.termination {
                Termination::IterationCap => continue,
                t => break t,
            }
        }
    };

    let fit = FitResult {
        params,
        error: eval.error(),
        average_error: eval.report.average_error,
        termination,
        iterations: total_iterations,
        restarts: damping.restarts,
        linear_improvements,
        evaluations,
        wall_time: wall.elapsed(),
        error_trace: trace,
    };
    Ok((fit, rounds))
}

/// Plain LM or interleaved fit depending on `config.interleave.enabled`.
pub fn fit_from_seed(
    series: &PriceSeries,
    seed: &LpplParams,
    config: &FitConfig,
    evaluator: &Evaluator,
) -> Result<FitResult> {
    if config.interleave.enabled {
        interleave_fit_with(series, seed, config, evaluator).map(|(fit, _)| fit)
    } else {
        crate::solver::lm_fit_with(series, seed, &config.lm, evaluator)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::lppl_curve;

    fn base() -> LpplParams {
        LpplParams::new(5.0, 0.02, 1100.0, 0.68, 0.05, 9.0, 0.0)
    }

    #[test]
    fn exact_recovery_on_noiseless_data() {
        let truth = base();
        let series = PriceSeries::unweighted(lppl_curve(&truth, 1000).unwrap()).unwrap();
        let fixed = LpplParams { a: 0.0, b: 1.0, c: 0.0, ..truth };
        let r = solve_linear_subsystem(&series, &fixed).unwrap();
        assert!((r.a - 5.0).abs() < 1e-10 * 5.0);
        assert!((r.beta - 0.02).abs() < 1e-10 * 0.02);
        assert!((r.c - 0.05).abs() < 1e-10 * 0.05);
        let again = solve_linear_subsystem(&series, &r.params).unwrap();
        assert!((again.a - r.a).abs() <= 1e-12 * r.a.abs());
        assert!((again.beta - r.beta).abs() <= 1e-12 * r.beta);
        assert!((again.c - r.c).abs() <= 1e-12 * r.c.abs());
    }

    #[test]
    fn flat_series_rejected_for_beta() {
        let series = PriceSeries::unweighted(vec![3.0; 200]).unwrap();
        let fixed = LpplParams::new(0.0, 1.0, 260.0, 0.5, 0.0, 7.0, 0.3);
        match solve_linear_subsystem(&series, &fixed) {
            Err(LinearRejection::NonPositiveBeta { .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn collinear_basis_is_rank_deficient() {
        // omega = 0, phi = 0 makes z identical to v
        let series = PriceSeries::unweighted((0..50).map(|i| i as f64 * 0.01).collect()).unwrap();
        let fixed = LpplParams::new(0.0, 1.0, 80.0, 0.5, 0.0, 0.0, 0.0);
        assert_eq!(
            solve_linear_subsystem(&series, &fixed),
            Err(LinearRejection::RankDeficient)
        );
    }

    #[test]
    fn truth_seed_stops_without_linear_gain() {
        let truth = base();
        let series = PriceSeries::unweighted(lppl_curve(&truth, 1000).unwrap()).unwrap();
        let (fit, rounds) =
            interleave_fit_with(&series, &truth, &FitConfig::default(), &Evaluator::new(1).unwrap())
                .unwrap();
        assert_eq!(fit.linear_improvements, 0);
        assert_eq!(rounds.len(), 1);
        assert!(fit.error < 1e-18);
    }
}
