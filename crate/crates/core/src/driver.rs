//! Multi-start orchestration, verdicts and the thread-scaling benchmark.
//!
//! Every `(seed, weight scheme)` pair is an independent fit. Fits run on a
//! pool of `jobs` worker threads, each fit with its own `threads`-wide
//! evaluator, and outcomes flow back to a single collector over a channel.
//! Results are ranked by average error with the task index as tie-break, so a
//! report does not depend on `jobs` or on completion order.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{LpplError, Result};
use crate::init::{
    exponential_prefit, exponential_regression, screened_seeds, triple_to_seed, ExponentialFit,
    InitSeed, Provenance, Triple, DEFAULT_EXTREMUM_WINDOW,
};
use crate::linear::{fit_from_seed, FitConfig};
use crate::model::{lppl_curve, Evaluator, LpplParams, PriceSeries};
use crate::solver::{lm_fit_with, FitResult, LmConfig};
use crate::synth::{generate_trace, SynthSpec};
use crate::weights::{build_weights, WeightScheme};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Default number of automatically detected triples.
pub const DEFAULT_AUTO_TRIPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// `m` at or above this reads as exponential growth.
    pub m_hi: f64,
    /// `omega` at or below this reads as no log-periodicity.
    pub omega_lo: f64,
    /// Minimum relative error reduction over the exponential baseline.
    pub min_reduction: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            m_hi: 0.95,
            omega_lo: 1.5,
            min_reduction: 0.10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictKind {
    LpplBubble,
    NonLppl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub kind: VerdictKind,
    pub reasons: Vec<String>,
    pub error_reduction: f64,
    pub thresholds: Thresholds,
}

/// Bubble / no-bubble verdict for a best fit against its exponential baseline.
pub fn classify(best: &LpplParams, best_error: f64, baseline_error: f64, thresholds: &Thresholds) -> Verdict {
    let reduction = if baseline_error > 0.0 {
        (baseline_error - best_error) / baseline_error
    } else {
        0.0
    };
    let mut reasons = Vec::new();
    if best.m >= thresholds.m_hi {
        reasons.push(format!("m = {:.4} >= {}", best.m, thresholds.m_hi));
    }
    if best.omega <= thresholds.omega_lo {
        reasons.push(format!("omega = {:.4} <= {}", best.omega, thresholds.omega_lo));
    }
    if reduction < thresholds.min_reduction {
        reasons.push(format!(
            "error reduction {:.4} < {} over the exponential fit",
            reduction, thresholds.min_reduction
        ));
    }
    let kind = if reasons.is_empty() {
        reasons.push(format!(
            "m = {:.4}, omega = {:.4}, error reduction {:.4}",
            best.m, best.omega, reduction
        ));
        VerdictKind::LpplBubble
    } else {
        VerdictKind::NonLppl
    };
    Verdict {
        kind,
        reasons,
        error_reduction: reduction,
        thresholds: *thresholds,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitRequest {
    pub source: String,
    pub log_prices: Vec<f64>,
    pub schemes: Vec<WeightScheme>,
    /// Manual triples; when non-empty, automatic detection is skipped.
    pub triples: Vec<Triple>,
    pub auto_triples: usize,
    pub extremum_window: usize,
    pub config: FitConfig,
    pub thresholds: Thresholds,
    /// Concurrent fits; `None` picks `min(tasks, cores)`.
    pub jobs: Option<usize>,
    /// Evaluation workers per fit; `None` picks `max(1, cores / jobs)`.
    pub threads: Option<usize>,
}

impl FitRequest {
    pub fn new(source: impl Into<String>, log_prices: Vec<f64>) -> Self {
        Self {
            source: source.into(),
            log_prices,
            schemes: vec![WeightScheme::Uniform],
            triples: Vec::new(),
            auto_triples: DEFAULT_AUTO_TRIPLES,
            extremum_window: DEFAULT_EXTREMUM_WINDOW,
            config: FitConfig::default(),
            thresholds: Thresholds::default(),
            jobs: None,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub scheme: WeightScheme,
    #[serde(flatten)]
    pub fit: ExponentialFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFit {
    pub rank: usize,
    pub task: usize,
    pub scheme: WeightScheme,
    pub provenance: Provenance,
    pub seed: LpplParams,
    #[serde(flatten)]
    pub fit: FitResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub task: usize,
    pub scheme: WeightScheme,
    pub provenance: Provenance,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCheck {
    pub reported_error: f64,
    pub recomputed_error: f64,
    pub matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub task: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub source: String,
    pub n: usize,
    pub config: FitConfig,
    pub schemes: Vec<WeightScheme>,
    pub baselines: Vec<Baseline>,
    pub best: RankedFit,
    pub verdict: Verdict,
    pub self_check: SelfCheck,
    pub fits: Vec<RankedFit>,
    pub failures: Vec<FitFailure>,
    /// Wall-clock per fit. Kept out of the JSON so reports are reproducible.
    #[serde(skip)]
    pub timings: Vec<TimingRow>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| LpplError::Io(format!("serialize report: {e}")))
    }

    /// `index,log_price,fitted` rows for the best fit.
    pub fn plot_csv(&self, log_prices: &[f64]) -> Result<String> {
        let fitted = lppl_curve(&self.best.fit.params, log_prices.len())?;
        let mut out = String::from("index,log_price,fitted\n");
        for (i, (y, f)) in log_prices.iter().zip(fitted).enumerate() {
            out.push_str(&format!("{},{},{}\n", i + 1, y, f));
        }
        Ok(out)
    }
}

pub fn available_cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// `(jobs, threads)` defaults for `tasks` independent fits.
pub fn parallelism(tasks: usize, jobs: Option<usize>, threads: Option<usize>) -> (usize, usize) {
    let cores = available_cores();
    let jobs = jobs.unwrap_or_else(|| tasks.min(cores)).max(1);
    let threads = threads.unwrap_or_else(|| (cores / jobs).max(1)).max(1);
    (jobs, threads)
}

#[derive(Debug, Clone, Copy)]
enum SeedSpec {
    Exponential,
    /// Manual triple, turned into a seed against each scheme's series.
    Triple(Triple),
    Screened(InitSeed),
}

#[derive(Debug, Clone, Copy)]
struct Task {
    scheme_index: usize,
    seed: SeedSpec,
}

type TaskOutcome = std::result::Result<(InitSeed, FitResult), (Provenance, String)>;

fn run_task(series: &PriceSeries, task: &Task, config: &FitConfig, threads: usize) -> TaskOutcome {
    let provenance = match task.seed {
        SeedSpec::Exponential => Provenance::Exponential,
        SeedSpec::Triple(t) => Provenance::Triple(t),
        SeedSpec::Screened(s) => s.provenance,
    };
    let fail = |e: LpplError| (provenance, e.to_string());
    let seed = match task.seed {
        SeedSpec::Exponential => exponential_prefit(series, None).map(|(s, _)| s),
        SeedSpec::Triple(t) => triple_to_seed(&t, series),
        SeedSpec::Screened(s) => Ok(s),
    }
    .map_err(fail)?;
    let evaluator = Evaluator::new(threads).map_err(fail)?;
    let fit = fit_from_seed(series, &seed.params, config, &evaluator).map_err(fail)?;
    Ok((seed, fit))
}

/// Fits every `(seed, scheme)` combination and ranks the results.
pub fn fit_command(req: &FitRequest) -> Result<RunReport> {
    req.config.validate()?;
    if req.schemes.is_empty() {
        return Err(LpplError::InvalidWeights("no weight scheme given".into()));
    }
    let n = req.log_prices.len();
    let series: Vec<PriceSeries> = req
        .schemes
        .iter()
        .map(|s| PriceSeries::new(req.log_prices.clone(), build_weights(s, n)?))
        .collect::<Result<_>>()?;
    let baselines: Vec<Baseline> = req
        .schemes
        .iter()
        .zip(&series)
        .map(|(scheme, s)| {
            Ok(Baseline {
                scheme: *scheme,
                fit: exponential_regression(s)?,
            })
        })
        .collect::<Result<_>>()?;

    let mut seeds = vec![SeedSpec::Exponential];
    if req.triples.is_empty() {
        // Screened on unit weights so the seed set does not depend on the
        // scheme list.
        let plain = PriceSeries::unweighted(req.log_prices.clone())?;
        let found = screened_seeds(&plain, req.extremum_window, req.auto_triples)?;
        log::info!("{} automatic triple seeds", found.len());
        seeds.extend(found.into_iter().map(SeedSpec::Screened));
    } else {
        let mut seen = Vec::new();
        for t in &req.triples {
            if !seen.contains(t) {
                seen.push(*t);
            }
        }
        seeds.extend(seen.into_iter().map(SeedSpec::Triple));
    }
    let tasks: Vec<Task> = (0..req.schemes.len())
        .flat_map(|scheme_index| seeds.iter().map(move |&seed| Task { scheme_index, seed }))
        .collect();

    let (jobs, threads) = parallelism(tasks.len(), req.jobs, req.threads);
    log::info!(
        "{} fits ({} seeds x {} schemes), jobs = {jobs}, threads = {threads}",
        tasks.len(),
        seeds.len(),
        req.schemes.len()
    );

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, TaskOutcome)>();
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(tasks.len()) {
            let tx = tx.clone();
            let (next, tasks, series) = (&next, &tasks, &series);
            scope.spawn(move || loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                let Some(task) = tasks.get(idx) else { break };
                let outcome = run_task(&series[task.scheme_index], task, &req.config, threads);
                if tx.send((idx, outcome)).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut outcomes: Vec<(usize, TaskOutcome)> = rx.into_iter().collect();
    outcomes.sort_by_key(|(idx, _)| *idx);

    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for (idx, outcome) in outcomes {
        let scheme = req.schemes[tasks[idx].scheme_index];
        match outcome {
            Ok((seed, fit)) => fits.push(RankedFit {
                rank: 0,
                task: idx,
                scheme,
                provenance: seed.provenance,
                seed: seed.params,
                fit,
            }),
            Err((provenance, reason)) => {
                log::warn!("fit {idx} ({provenance}, {scheme}) failed: {reason}");
                failures.push(FitFailure {
                    task: idx,
                    scheme,
                    provenance,
                    reason,
                });
            }
        }
    }
    if fits.is_empty() {
        return Err(LpplError::AllFitsFailed {
            count: failures.len(),
            details: failures
                .iter()
                .map(|f| format!("{} ({}): {}", f.provenance, f.scheme, f.reason))
                .collect(),
        });
    }
    fits.sort_by(|a, b| {
        a.fit
            .average_error
            .total_cmp(&b.fit.average_error)
            .then(a.task.cmp(&b.task))
    });
    for (rank, f) in fits.iter_mut().enumerate() {
        f.rank = rank + 1;
    }
    let best = fits[0].clone();
    let scheme_index = req.schemes.iter().position(|s| *s == best.scheme).unwrap_or(0);

    let recomputed = Evaluator::new(threads)?
        .evaluate(&best.fit.params, &series[scheme_index])?
        .error();
    let self_check = SelfCheck {
        reported_error: best.fit.error,
        recomputed_error: recomputed,
        matches: recomputed == best.fit.error,
    };
    if !self_check.matches {
        log::error!(
            "self-check mismatch: reported {:e}, recomputed {:e}",
            best.fit.error,
            recomputed
        );
    }
    let verdict = classify(
        &best.fit.params,
        best.fit.error,
        baselines[scheme_index].fit.error,
        &req.thresholds,
    );
    let timings = fits
        .iter()
        .map(|f| TimingRow {
            task: f.task,
            wall_time: f.fit.wall_time,
        })
        .collect();

    Ok(RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        source: req.source.clone(),
        n,
        config: req.config.clone(),
        schemes: req.schemes.clone(),
        baselines,
        best,
        verdict,
        self_check,
        fits,
        failures,
        timings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRequest {
    pub n: usize,
    pub threads: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    /// Iteration bound of the timed LM fit.
    pub fit_iterations: usize,
}

impl Default for BenchRequest {
    fn default() -> Self {
        Self {
            n: 100_000,
            threads: vec![1, 2, 4, 8],
            repetitions: 5,
            seed: 1,
            fit_iterations: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub threads: usize,
    pub eval_median_s: f64,
    pub eval_speedup: f64,
    pub fit_median_s: f64,
    pub fit_speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n: usize,
    pub repetitions: usize,
    pub cores: usize,
    pub rows: Vec<BenchRow>,
    /// Evaluation time non-increasing in thread count up to the core count.
    pub monotone_up_to_cores: bool,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Synthetic series of length `n` for benchmarking: the base LPPL shape with
/// the critical time moved to `1.1 n`.
pub fn bench_series(n: usize, seed: u64) -> Result<(PriceSeries, LpplParams)> {
    let params = LpplParams::new(5.0, 0.02, 1.1 * n as f64, 0.68, 0.05, 9.0, 0.0);
    let trace = generate_trace(&SynthSpec {
        params,
        sigma: 0.005,
        n,
        seed,
    })?;
    Ok((trace.series()?, params))
}

/// Median wall time of `evaluate_batch` and of a bounded `lm_fit` per thread
/// count, with speedups relative to one thread.
pub fn bench_command(req: &BenchRequest) -> Result<BenchReport> {
    if req.n < PriceSeries::MIN_SUPPORT || req.repetitions == 0 {
        return Err(LpplError::InvalidParams(
            "bench needs n >= 8 and repetitions >= 1".into(),
        ));
    }
    let (series, truth) = bench_series(req.n, req.seed)?;
    let start = LpplParams {
        a: truth.a * 1.01,
        b: truth.b * 0.99,
        tc: truth.tc * 1.01,
        m: truth.m * 0.99,
        c: truth.c * 1.01,
        omega: truth.omega * 0.99,
        phi: truth.phi,
    };
    let lm = LmConfig {
        max_iterations: req.fit_iterations.max(1),
        ..LmConfig::default()
    };
    let mut threads = req.threads.clone();
    if !threads.contains(&1) {
        threads.push(1);
    }
    threads.retain(|t| *t >= 1);
    threads.sort_unstable();
    threads.dedup();

    let mut rows = Vec::new();
    for &t in &threads {
        let evaluator = Evaluator::new(t)?;
        evaluator.evaluate(&truth, &series)?;
        let mut eval_times = Vec::new();
        let mut fit_times = Vec::new();
        for _ in 0..req.repetitions {
            let clock = Instant::now();
            std::hint::black_box(evaluator.evaluate(&truth, &series)?);
            eval_times.push(clock.elapsed().as_secs_f64());
            let clock = Instant::now();
            std::hint::black_box(lm_fit_with(&series, &start, &lm, &evaluator)?);
            fit_times.push(clock.elapsed().as_secs_f64());
        }
        rows.push(BenchRow {
            threads: t,
            eval_median_s: median(eval_times),
            eval_speedup: 1.0,
            fit_median_s: median(fit_times),
            fit_speedup: 1.0,
        });
    }
    let (e1, f1) = (rows[0].eval_median_s, rows[0].fit_median_s);
    for row in &mut rows {
        row.eval_speedup = e1 / row.eval_median_s;
        row.fit_speedup = f1 / row.fit_median_s;
    }
    let cores = available_cores();
    let monotone = rows
        .iter()
        .filter(|r| r.threads <= cores)
        .collect::<Vec<_>>()
        .windows(2)
        .all(|w| w[1].eval_median_s <= w[0].eval_median_s);
    if !monotone {
        log::warn!("evaluation time is not monotone in thread count up to {cores} cores");
    }
    Ok(BenchReport {
        n: req.n,
        repetitions: req.repetitions,
        cores,
        rows,
        monotone_up_to_cores: monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(m: f64, omega: f64) -> LpplParams {
        LpplParams::new(7.47, 0.014, 1105.08, m, -0.04, omega, 2.72)
    }

    #[test]
    fn classify_table_row() {
        let v = classify(&params(0.52, 9.87), 6.472e-4, 9.007e-4, &Thresholds::default());
        assert_eq!(v.kind, VerdictKind::LpplBubble);
        assert!((v.error_reduction - (1.0 - 6.472 / 9.007)).abs() < 1e-12);
    }

    #[test]
    fn classify_thresholds() {
        let t = Thresholds::default();
        assert_eq!(classify(&params(0.99, 9.0), 1.0, 2.0, &t).kind, VerdictKind::NonLppl);
        assert_eq!(classify(&params(0.7, 1.0), 1.0, 2.0, &t).kind, VerdictKind::NonLppl);
        let v = classify(&params(0.5, 9.0), 0.95, 1.0, &t);
        assert_eq!(v.kind, VerdictKind::NonLppl);
        assert_eq!(v.reasons.len(), 1);
    }

    #[test]
    fn parallelism_defaults() {
        let (jobs, threads) = parallelism(3, Some(2), None);
        assert_eq!(jobs, 2);
        assert!(threads >= 1);
        assert_eq!(parallelism(5, Some(0), Some(0)), (1, 1));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
