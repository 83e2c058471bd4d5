//! `lppl`: fit, simulate, benchmark and classify LPPL bubbles.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use lppl_core::driver::{
    bench_command, classify, fit_command, BenchReport, BenchRequest, FitRequest, RunReport,
    Thresholds,
};
use lppl_core::ingest::{load_csv, ColumnSpec};
use lppl_core::init::Triple;
use lppl_core::synth::{generate_preset, generate_trace, sidecar_path, standard_suite, Preset, SynthSpec};
use lppl_core::{LpplError, LpplParams, WeightScheme};

use crate::config::FileConfig;

const EXIT_INPUT: u8 = 2;
const EXIT_ALL_FAILED: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "lppl", version, about = "Log-periodic power law bubble fitting")]
struct Cli {
    /// Concurrent fits (default: number of fits, capped at the core count).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Evaluation threads per fit (default: max(1, cores / jobs)).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for synthetic data (synth, bench).
    #[arg(long = "seed-rng", global = true, default_value_t = 1)]
    seed_rng: u64,
    /// Output file; stdout when absent (required by synth).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl From<Switch> for bool {
    fn from(s: Switch) -> bool {
        s == Switch::On
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Multi-start fit of a price CSV.
    Fit(FitArgs),
    /// Generate synthetic LPPL traces.
    Synth(SynthArgs),
    /// Time the evaluation kernel and a short fit across thread counts.
    Bench(BenchArgs),
    /// Re-classify the best fit of a saved report.
    Classify(ClassifyArgs),
}

#[derive(Debug, Args)]
struct ThresholdArgs {
    /// Non-bubble when m is at least this.
    #[arg(long)]
    m_hi: Option<f64>,
    /// Non-bubble when omega is at most this.
    #[arg(long)]
    omega_lo: Option<f64>,
    /// Minimum relative error reduction over the exponential baseline.
    #[arg(long)]
    min_reduction: Option<f64>,
}

impl ThresholdArgs {
    fn apply(&self, t: &mut Thresholds) {
        if let Some(v) = self.m_hi {
            t.m_hi = v;
        }
        if let Some(v) = self.omega_lo {
            t.omega_lo = v;
        }
        if let Some(v) = self.min_reduction {
            t.min_reduction = v;
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    /// CSV of closes, one row per trading period, oldest first.
    data: PathBuf,
    /// Close column by header name or 0-based position.
    #[arg(long)]
    column: Option<String>,
    /// Weight scheme: uniform, step:s,t or quad:W. Repeatable.
    #[arg(long = "weights")]
    weights: Vec<String>,
    /// Seed triple i,j,k[,peak|trough]. Repeatable; disables detection.
    #[arg(long = "triple")]
    triples: Vec<String>,
    /// Maximum number of detected triples.
    #[arg(long)]
    auto_triples: Option<usize>,
    /// Half-width of the extremum window.
    #[arg(long)]
    extremum_window: Option<usize>,
    #[arg(long, value_enum)]
    interleave: Option<Switch>,
    /// Initial LM iteration bound between linear solves.
    #[arg(long = "L")]
    initial_l: Option<usize>,
    #[arg(long = "adaptive-L", value_enum)]
    adaptive_l: Option<Switch>,
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    max_restarts: Option<usize>,
    #[arg(long)]
    mu_init: Option<f64>,
    #[arg(long)]
    mu_bar: Option<f64>,
    #[arg(long)]
    mu_bar_cap: Option<f64>,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    /// Write index,log_price,fitted for the best fit.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Print per-fit wall times to stderr.
    #[arg(long)]
    timings: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_parser = parse_preset, default_value = "base")]
    preset: Preset,
    /// Noise seed (defaults to --seed-rng).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long = "A")]
    a: Option<f64>,
    #[arg(long = "B")]
    b: Option<f64>,
    #[arg(long = "T")]
    tc: Option<f64>,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long = "C")]
    c: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    phi: Option<f64>,
    /// Write the 15-trace standard suite into this directory instead.
    #[arg(long, conflicts_with = "seed")]
    suite: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    /// Comma-separated thread counts.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    thread_counts: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    /// JSON report written by `lppl fit`.
    report: PathBuf,
    #[command(flatten)]
    thresholds: ThresholdArgs,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: LpplError| e.to_string())
}

fn input_err(e: LpplError) -> anyhow::Error {
    anyhow::Error::new(e)
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn fit_request(cli: &Cli, args: &FitArgs) -> anyhow::Result<(FitRequest, Vec<f64>)> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path).map_err(|e| e.context(InputError))?,
        None => FileConfig::default(),
    };
    let column: ColumnSpec = args
        .column
        .as_deref()
        .unwrap_or("")
        .parse()
        .map_err(input_err)?;
    let raw = load_csv(&args.data, &column).map_err(input_err)?;
    let log_prices = raw.log_closes();

    let mut req = FitRequest::new(raw.source.clone(), log_prices.clone());
    let weights = if args.weights.is_empty() { &file.weights } else { &args.weights };
    if !weights.is_empty() {
        req.schemes = weights
            .iter()
            .map(|w| w.parse::<WeightScheme>())
            .collect::<Result<_, _>>()
            .map_err(input_err)?;
    }
    let triples = if args.triples.is_empty() { &file.triples } else { &args.triples };
    req.triples = triples
        .iter()
        .map(|t| t.parse::<Triple>())
        .collect::<Result<_, _>>()
        .map_err(input_err)?;
    if let Some(v) = args.auto_triples.or(file.auto_triples) {
        req.auto_triples = v;
    }
    if let Some(v) = args.extremum_window.or(file.extremum_window) {
        req.extremum_window = v;
    }
    req.config.lm = file.lm;
    req.config.interleave = file.interleave;
    let lm = &mut req.config.lm;
    if let Some(v) = args.max_iterations {
        lm.max_iterations = v;
    }
    if let Some(v) = args.max_restarts {
        lm.max_restarts = v;
    }
    if let Some(v) = args.mu_init {
        lm.mu_init = v;
    }
    if let Some(v) = args.mu_bar {
        lm.mu_bar = v;
    }
    if let Some(v) = args.mu_bar_cap {
        lm.mu_bar_cap = v;
    }
    let il = &mut req.config.interleave;
    if let Some(v) = args.interleave {
        il.enabled = v.into();
    }
    if let Some(v) = args.initial_l {
        il.initial_l = v;
    }
    if let Some(v) = args.adaptive_l {
        il.adaptive = v.into();
    }
    req.thresholds = file.thresholds;
    args.thresholds.apply(&mut req.thresholds);
    req.jobs = cli.jobs;
    req.threads = cli.threads;
    req.config.validate().map_err(input_err)?;
    Ok((req, log_prices))
}

fn csv_table(report: &RunReport) -> String {
    let mut out = String::from(
        "rank,task,scheme,seed,termination,iterations,restarts,average_error,A,B,T,m,C,omega,phi\n",
    );
    for f in &report.fits {
        let p = &f.fit.params;
        out.push_str(&format!(
            "{},{},\"{}\",\"{}\",{:?},{},{},{},{},{},{},{},{},{},{}\n",
            f.rank,
            f.task,
            f.scheme,
            f.provenance,
            f.fit.termination,
            f.fit.iterations,
            f.fit.restarts,
            f.fit.average_error,
            p.a,
            p.b,
            p.tc,
            p.m,
            p.c,
            p.omega,
            p.phi
        ));
    }
    out
}

fn run_fit(cli: &Cli, args: &FitArgs) -> anyhow::Result<()> {
    let (req, log_prices) = fit_request(cli, args)?;
    let report = fit_command(&req)?;
    if args.timings {
        eprintln!("task  wall_time_s");
        for t in &report.timings {
            eprintln!("{:4}  {:.6}", t.task, t.wall_time.as_secs_f64());
        }
    }
    if let Some(plot) = &args.plot {
        std::fs::write(plot, report.plot_csv(&log_prices)?)
            .with_context(|| format!("writing {}", plot.display()))?;
    }
    let text = match cli.format {
        Format::Json => report.to_json()?,
        Format::Csv => csv_table(&report),
    };
    emit(cli.out.as_deref(), &text)?;
    let best = &report.best;
    log::info!(
        "best: {} ({}) average error {:e}, T = {:.2}, verdict {:?}",
        best.provenance,
        best.scheme,
        best.fit.average_error,
        best.fit.params.tc,
        report.verdict.kind
    );
    Ok(())
}

fn run_synth(cli: &Cli, args: &SynthArgs) -> anyhow::Result<()> {
    if let Some(dir) = &args.suite {
        std::fs::create_dir_all(dir)?;
        for (k, trace) in standard_suite(cli.seed_rng).iter().enumerate() {
            let preset = trace.preset.expect("suite traces come from presets");
            let path = dir.join(format!("{preset}_{}.csv", k % 5 + 1));
            trace.write(&path)?;
        }
        return Ok(());
    }
    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| anyhow::Error::new(LpplError::InvalidParams("synth needs --out FILE".into())))?;
    let seed = args.seed.unwrap_or(cli.seed_rng);
    let base = args.preset.params();
    let params = LpplParams {
        a: args.a.unwrap_or(base.a),
        b: args.b.unwrap_or(base.b),
        tc: args.tc.unwrap_or(base.tc),
        m: args.m.unwrap_or(base.m),
        c: args.c.unwrap_or(base.c),
        omega: args.omega.unwrap_or(base.omega),
        phi: args.phi.unwrap_or(base.phi),
    };
    let customized = params != base || args.n.is_some() || args.sigma.is_some();
    let trace = if customized {
        let spec = SynthSpec {
            params,
            sigma: args.sigma.unwrap_or(args.preset.sigma()),
            n: args.n.unwrap_or(1000),
            seed,
        };
        generate_trace(&spec).map_err(input_err)?
    } else {
        generate_preset(args.preset, seed).map_err(input_err)?
    };
    trace.write(out)?;
    log::info!("wrote {} and {}", out.display(), sidecar_path(out).display());
    Ok(())
}

fn bench_csv(report: &BenchReport) -> String {
    let mut out = String::from("threads,eval_median_s,eval_speedup,fit_median_s,fit_speedup\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.threads, r.eval_median_s, r.eval_speedup, r.fit_median_s, r.fit_speedup
        ));
    }
    out
}

fn run_bench(cli: &Cli, args: &BenchArgs) -> anyhow::Result<()> {
    let req = BenchRequest {
        n: args.n,
        threads: args.thread_counts.clone(),
        repetitions: args.reps,
        seed: cli.seed_rng,
        ..BenchRequest::default()
    };
    let report = bench_command(&req).map_err(input_err)?;
    let text = match cli.format {
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
        Format::Csv => bench_csv(&report),
    };
    emit(cli.out.as_deref(), &text)
}

fn run_classify(cli: &Cli, args: &ClassifyArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.report)
        .with_context(|| format!("reading {}", args.report.display()))
        .map_err(|e| e.context(InputError))?;
    let report: RunReport = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.report.display()))
        .map_err(|e| e.context(InputError))?;
    let mut thresholds = report.verdict.thresholds;
    args.thresholds.apply(&mut thresholds);
    let scheme = report.best.scheme;
    let baseline = report
        .baselines
        .iter()
        .find(|b| b.scheme == scheme)
        .ok_or_else(|| anyhow::anyhow!("report has no baseline for {scheme}").context(InputError))?;
    let verdict = classify(&report.best.fit.params, report.best.fit.error, baseline.fit.error, &thresholds);
    let text = match cli.format {
        Format::Json => serde_json::to_string_pretty(&verdict)? + "\n",
        Format::Csv => format!(
            "verdict,error_reduction,reasons\n{:?},{},\"{}\"\n",
            verdict.kind,
            verdict.error_reduction,
            verdict.reasons.join("; ")
        ),
    };
    emit(cli.out.as_deref(), &text)
}

/// Marks an error as caused by user input.
#[derive(Debug)]
struct InputError;

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("invalid input")
    }
}

impl std::error::Error for InputError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<InputError>().is_some() {
        return EXIT_INPUT;
    }
    match err.downcast_ref::<LpplError>() {
        Some(LpplError::AllFitsFailed { .. }) => EXIT_ALL_FAILED,
        Some(_) => EXIT_INPUT,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(args) => run_fit(&cli, args),
        Command::Synth(args) => run_synth(&cli, args),
        Command::Bench(args) => run_bench(&cli, args),
        Command::Classify(args) => run_classify(&cli, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let all = anyhow::Error::new(LpplError::AllFitsFailed { count: 2, details: vec![] });
        assert_eq!(exit_code(&all), EXIT_ALL_FAILED);
        let bad = anyhow::Error::new(LpplError::InvalidSeries("empty".into()));
        assert_eq!(exit_code(&bad), EXIT_INPUT);
        assert_eq!(exit_code(&anyhow::anyhow!("x").context(InputError)), EXIT_INPUT);
        assert_eq!(exit_code(&anyhow::anyhow!("disk full")), 1);
    }
}
