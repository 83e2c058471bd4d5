//! Levenberg-Marquardt with Marquardt scaling, box projection on `(B, m, T)`
//! and a restart policy for the damping term.
//!
//! Within one run the damping `mu` is divided by 3 after an accepted step and
//! doubled after a rejected one. When a run cannot continue (the damping
//! underflowed to zero, overflowed, or the damped normal matrix is singular)
//! the restart seed `mu_bar` is doubled, capped at `mu_bar_cap`, and the run
//! resumes from the current parameters with `mu = mu_bar`. A restart request
//! with `mu_bar` already at the cap ends the fit as [`Termination::MuExhausted`].

use std::time::{Duration, Instant};

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{LpplError, Result};
use crate::model::{Evaluation, Evaluator, LpplParams, PriceSeries, MIN_GAP, NPARAMS};

type Mat7 = SMatrix<f64, NPARAMS, NPARAMS>;
type Vec7 = SVector<f64, NPARAMS>;

/// Lower bound applied to `B` by projection.
pub const B_MIN: f64 = 1e-12;
/// Lower bound applied to `m` by projection.
pub const M_MIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub mu_init: f64,
    /// Initial restart seed; doubled on every restart.
    pub mu_bar: f64,
    /// Global upper bound on `mu_bar`.
    pub mu_bar_cap: f64,
    /// Iteration bound for one invocation.
    pub max_iterations: usize,
    /// Stop when `|J'W r|_inf` falls below this.
    pub gtol: f64,
    /// Stop when the step is below `xtol * (|p| + xtol)`.
    pub xtol: f64,
    /// Stop when the relative error decrease over 3 iterations is below this.
    pub ftol: f64,
    pub max_restarts: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            mu_init: 1e-3,
            mu_bar: 1e-3,
            mu_bar_cap: 1e6,
            max_iterations: 2_000,
            gtol: 1e-12,
            xtol: 1e-12,
            ftol: 1e-15,
            max_restarts: 60,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu_init > 0.0
            && self.mu_bar > 0.0
            && self.mu_bar <= self.mu_bar_cap
            && self.mu_bar_cap.is_finite()
            && self.max_iterations >= 1
            && self.gtol >= 0.0
            && self.xtol >= 0.0
            && self.ftol >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(LpplError::InvalidParams(format!(
                "invalid solver configuration {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    IterationCap,
    MuExhausted,
    RestartCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: LpplParams,
    pub error: f64,
    pub average_error: f64,
    pub termination: Termination,
    pub iterations: usize,
    pub restarts: usize,
    /// Linear sub-system solves that replaced the incumbent (interleaved fits).
    pub linear_improvements: usize,
    pub evaluations: usize,
    #[serde(skip)]
    pub wall_time: Duration,
    /// Error of the start point followed by the error of every accepted iterate.
    #[serde(skip)]
    pub error_trace: Vec<f64>,
}

/// Damping state carried across runs and restarts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampingState {
    pub mu: f64,
    pub mu_bar: f64,
    pub restarts: usize,
}

impl DampingState {
    pub fn new(config: &LmConfig) -> Self {
        Self {
            mu: config.mu_init,
            mu_bar: config.mu_bar,
            restarts: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RestartDecision {
    Restart(DampingState),
    Terminate(Termination),
}

/// Next damping state after a run ended in a restart-requiring condition.
pub fn restart_policy(state: &DampingState, config: &LmConfig) -> RestartDecision {
    if state.mu_bar >= config.mu_bar_cap {
        return RestartDecision::Terminate(Termination::MuExhausted);
    }
    if state.restarts >= config.max_restarts {
        return RestartDecision::Terminate(Termination::RestartCap);
    }
    let mu_bar = (2.0 * state.mu_bar).min(config.mu_bar_cap);
    RestartDecision::Restart(DampingState {
        mu: mu_bar,
        mu_bar,
        restarts: state.restarts + 1,
    })
}

/// Projects onto `B >= B_MIN`, `M_MIN <= m <= 1`, `T >= n + MIN_GAP`.
pub fn project(params: &LpplParams, n: usize) -> LpplParams {
    let mut p = *params;
    p.b = p.b.max(B_MIN);
    p.m = p.m.clamp(M_MIN, 1.0);
    let floor = n as f64 + MIN_GAP;
    if !(p.tc >= floor) {
        p.tc = floor;
    }
    while p.tc - (n as f64) < MIN_GAP {
        p.tc = p.tc.next_up();
    }
    p
}

/// Outcome of one bounded LM invocation.
#[derive(Debug, Clone)]
pub(crate) struct LmRun {
    pub params: LpplParams,
    pub eval: Evaluation,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

fn normal_equations(eval: &Evaluation, weights: &[f64]) -> (Mat7, Vec7) {
    let mut h = [[0.0; NPARAMS]; NPARAMS];
    let mut g = [0.0; NPARAMS];
    for ((row, r), w) in eval.jacobian.iter().zip(eval.residuals()).zip(weights) {
        if *w == 0.0 {
            continue;
        }
        for a in 0..NPARAMS {
            let wa = w * row[a];
            g[a] += wa * r;
            for b in a..NPARAMS {
                h[a][b] += wa * row[b];
            }
        }
    }
    let mut hm = Mat7::zeros();
    for a in 0..NPARAMS {
        for b in a..NPARAMS {
            hm[(a, b)] = h[a][b];
            hm[(b, a)] = h[a][b];
        }
    }
    (hm, Vec7::from(g))
}

/// Marquardt scaling with the diagonal floored relative to its largest entry,
/// so parameters with a vanishing column (omega, phi when C = 0) stay damped.
fn scaling(h: &Mat7) -> Vec7 {
    let max = h.diagonal().max();
    let floor = if max > 0.0 { 1e-12 * max } else { 1.0 };
    h.diagonal().map(|d| d.max(floor))
}

enum StepOutcome {
    Accepted,
    SmallStep,
    NeedsRestart,
}

/// Runs LM from `(params, eval)` for at most `max_iterations` iterations,
/// updating `damping` in place and appending accepted errors to `trace`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lm_run(
    series: &PriceSeries,
    params: LpplParams,
    eval: Evaluation,
    config: &LmConfig,
    evaluator: &Evaluator,
    damping: &mut DampingState,
    max_iterations: usize,
    trace: &mut Vec<f64>,
) -> LmRun {
    let n = series.len();
    let mut p = params;
    let mut ev = eval;
    let mut iterations = 0;
    let mut evaluations = 0;
    let mut recent: Vec<f64> = vec![ev.error()];

    let finish = |p, ev, iterations, evaluations, termination| LmRun {
        params: p,
        eval: ev,
        iterations,
        evaluations,
        termination,
    };

    loop {
        if ev.error() == 0.0 {
            return finish(p, ev, iterations, evaluations, Termination::Converged);
        }
        if iterations >= max_iterations {
            return finish(p, ev, iterations, evaluations, Termination::IterationCap);
        }
        let (h, g) = normal_equations(&ev, series.weights());
        if g.amax() < config.gtol {
            return finish(p, ev, iterations, evaluations, Termination::Converged);
        }
        let d = scaling(&h);
        let x = Vec7::from(p.to_array());
        let step_floor = config.xtol * (x.norm() + config.xtol);

        let outcome = loop {
            let mu = damping.mu;
            if mu == 0.0 || !mu.is_finite() {
                break StepOutcome::NeedsRestart;
            }
            let mut damped = h;
            for i in 0..NPARAMS {
                damped[(i, i)] += mu * d[i];
            }
            let Some(chol) = damped.cholesky() else {
                break StepOutcome::NeedsRestart;
            };
            let delta = chol.solve(&(-g));
            if delta.iter().any(|v| !v.is_finite()) {
                break StepOutcome::NeedsRestart;
            }
            let cand_x = x + delta;
            let cand = project(&LpplParams::from_array(cand_x.into()), n);
            let moved = Vec7::from(cand.to_array()) - x;
            if moved.norm() <= step_floor {
                break StepOutcome::SmallStep;
            }
            evaluations += 1;
            match evaluator.evaluate(&cand, series) {
                Ok(ce) if ce.error() < ev.error() => {
                    p = cand;
                    ev = ce;
                    damping.mu = mu / 3.0;
                    break StepOutcome::Accepted;
                }
                _ => damping.mu = mu * 2.0,
            }
        };

        match outcome {
            StepOutcome::Accepted => {
                iterations += 1;
                trace.push(ev.error());
                recent.push(ev.error());
                if recent.len() > 3 {
                    let old = recent[recent.len() - 4];
                    if old - ev.error() <= config.ftol * old {
                        return finish(p, ev, iterations, evaluations, Termination::Converged);
                    }
                }
            }
            StepOutcome::SmallStep => {
                return finish(p, ev, iterations, evaluations, Termination::Converged);
            }
            StepOutcome::NeedsRestart => match restart_policy(damping, config) {
                RestartDecision::Restart(next) => {
                    log::debug!(
                        "restart {} from E = {:e} with mu_bar = {:e}",
                        next.restarts,
                        ev.error(),
                        next.mu_bar
                    );
                    *damping = next;
                }
                RestartDecision::Terminate(t) => {
                    return finish(p, ev, iterations, evaluations, t);
                }
            },
        }
    }
}

/// Fits all seven parameters from `start` with `threads` evaluation workers.
pub fn lm_fit(
    series: &PriceSeries,
    start: &LpplParams,
    config: &LmConfig,
    threads: usize,
) -> Result<FitResult> {
    let evaluator = Evaluator::new(threads)?;
    lm_fit_with(series, start, config, &evaluator)
}

pub fn lm_fit_with(
    series: &PriceSeries,
    start: &LpplParams,
    config: &LmConfig,
    evaluator: &Evaluator,
) -> Result<FitResult> {
    config.validate()?;
    start.validate(series.len())?;
    let clock = Instant::now();
    let eval = evaluator.evaluate(start, series)?;
    let mut damping = DampingState::new(config);
    let mut trace = vec![eval.error()];
    let run = lm_run(
        series,
        *start,
        eval,
        config,
        evaluator,
        &mut damping,
        config.max_iterations,
        &mut trace,
    );
    Ok(FitResult {
        params: run.params,
        error: run.eval.error(),
        average_error: run.eval.report.average_error,
        termination: run.termination,
        iterations: run.iterations,
        restarts: damping.restarts,
        linear_improvements: 0,
        evaluations: run.evaluations + 1,
        wall_time: clock.elapsed(),
        error_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::lppl_curve;

    fn base() -> LpplParams {
        LpplParams::new(5.0, 0.02, 1100.0, 0.68, 0.05, 9.0, 0.0)
    }

    fn noiseless(p: &LpplParams, n: usize) -> PriceSeries {
        PriceSeries::unweighted(lppl_curve(p, n).unwrap()).unwrap()
    }

    #[test]
    fn restart_doubles_then_exhausts() {
        let config = LmConfig::default();
        let state = DampingState {
            mu: 0.0,
            mu_bar: 1e-3,
            restarts: 0,
        };
        match restart_policy(&state, &config) {
            RestartDecision::Restart(next) => {
                assert_eq!(next.mu, 2e-3);
                assert_eq!(next.mu_bar, 2e-3);
                assert_eq!(next.restarts, 1);
            }
            other => panic!("{other:?}"),
        }
        let capped = DampingState {
            mu: 0.0,
            mu_bar: config.mu_bar_cap,
            restarts: 7,
        };
        assert_eq!(
            restart_policy(&capped, &config),
            RestartDecision::Terminate(Termination::MuExhausted)
        );
    }

    #[test]
    fn restart_sequence_is_capped_powers_of_two() {
        let config = LmConfig {
            mu_bar: 1e-3,
            mu_bar_cap: 1.0,
            ..LmConfig::default()
        };
        let mut state = DampingState::new(&config);
        let mut seen = vec![];
        while let RestartDecision::Restart(next) = restart_policy(&state, &config) {
            seen.push(next.mu_bar);
            state = next;
        }
        let expected: Vec<f64> = (1..=10)
            .map(|k| (1e-3 * 2f64.powi(k)).min(1.0))
            .collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn restart_cap_terminates() {
        let config = LmConfig {
            mu_bar: 1e-300,
            mu_bar_cap: 1e300,
            max_restarts: 3,
            ..LmConfig::default()
        };
        let state = DampingState {
            mu: 0.0,
            mu_bar: 1e-290,
            restarts: 3,
        };
        assert_eq!(
            restart_policy(&state, &config),
            RestartDecision::Terminate(Termination::RestartCap)
        );
    }

    #[test]
    fn projection_enforces_box() {
        let p = LpplParams::new(1.0, -3.0, 10.0, 1.5, 0.1, 2.0, 0.0);
        let q = project(&p, 1000);
        assert_eq!(q.b, B_MIN);
        assert_eq!(q.m, 1.0);
        assert!(q.tc - 1000.0 >= MIN_GAP);
        assert!(q.validate(1000).is_ok());
        let q = project(&LpplParams { m: -1.0, ..p }, 1000);
        assert_eq!(q.m, M_MIN);
    }

    #[test]
    fn truth_is_a_fixed_point() {
        let p = base();
        let series = noiseless(&p, 1000);
        let fit = lm_fit(&series, &p, &LmConfig::default(), 1).unwrap();
        assert!(fit.iterations <= 2, "{fit:?}");
        assert!(fit.error < 1e-18);
        assert_eq!(fit.termination, Termination::Converged);
        assert_eq!(fit.restarts, 0);
    }

    #[test]
    fn recovers_from_perturbed_start() {
        let truth = base();
        let series = noiseless(&truth, 1000);
        let start = LpplParams::new(5.05, 0.0198, 1111.0, 0.6868, 0.0495, 9.09, 0.0);
        let fit = lm_fit(&series, &start, &LmConfig::default(), 2).unwrap();
        let (got, want) = (fit.params.to_array(), truth.to_array());
        for k in 0..NPARAMS {
            let tol = 1e-4 * want[k].abs().max(1.0);
            assert!((got[k] - want[k]).abs() < tol, "{}: {} vs {}", LpplParams::NAMES[k], got[k], want[k]);
        }
        assert!(fit.error_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(fit.error <= fit.error_trace[0]);
    }

    #[test]
    fn underflowed_damping_triggers_restart() {
        let truth = base();
        let series = noiseless(&truth, 400);
        let start = LpplParams { m: 0.69, ..truth };
        let config = LmConfig {
            mu_init: f64::from_bits(1),
            ..LmConfig::default()
        };
        let fit = lm_fit(&series, &start, &config, 1).unwrap();
        assert!(fit.restarts >= 1, "{fit:?}");
        assert!(fit.error < fit.error_trace[0]);
    }

    #[test]
    fn invalid_start_rejected() {
        let series = noiseless(&base(), 100);
        let bad = LpplParams { b: -1.0, ..base() };
        assert!(lm_fit(&series, &bad, &LmConfig::default(), 1).is_err());
        let bad_cfg = LmConfig {
            mu_bar: 10.0,
            mu_bar_cap: 1.0,
            ..LmConfig::default()
        };
        assert!(lm_fit(&series, &base(), &bad_cfg, 1).is_err());
    }
}
