//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when a run or verification fails, 2 for
//! usage and configuration errors.

pub mod config;
pub mod verify;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Error;
use crate::experiments;
use crate::learning;
use crate::ode::{IntegratorOptions, Method};
use crate::opinion::{self, NoiseDistribution};
use crate::output::{self, fmt_f64};

pub use config::{Experiment, ExperimentConfig, GraphSpec, MonteCarloSpec, Z0Spec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "WISDOMDYN_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "wisdomdyn",
    version,
    about = "Susceptibility learning in consensus networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the centrality vector of the social graph.
    Centrality(CommonArgs),
    /// Integrate the opinion dynamics from x0.
    Simulate(CommonArgs),
    /// Integrate the susceptibility learning flow from z0.
    Learn(CommonArgs),
    /// Estimate the consensus variance by Monte Carlo.
    Montecarlo(CommonArgs),
    /// Run the invariant suite and write verify.json.
    Verify(CommonArgs),
    /// Reproduce the reference six-agent experiment.
    Paper(CommonArgs),
}

#[derive(Debug, clap::Args)]
struct CommonArgs {
    /// JSON experiment config; the reference setup is used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    integrator: IntegratorArgs,
}

#[derive(Debug, clap::Args)]
struct IntegratorArgs {
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    atol: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    record_every: Option<usize>,
}

impl IntegratorArgs {
    fn apply(&self, opts: &mut IntegratorOptions) {
        if let Some(m) = self.method {
            opts.method = m;
        }
        let set = |dst: &mut f64, src: Option<f64>| {
            if let Some(v) = src {
                *dst = v;
            }
        };
        set(&mut opts.dt, self.dt);
        set(&mut opts.rtol, self.rtol);
        set(&mut opts.atol, self.atol);
        set(&mut opts.t_end, self.t_end);
        if let Some(v) = self.max_steps {
            opts.max_steps = v;
        }
        if let Some(v) = self.record_every {
            opts.record_every = v;
        }
    }
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| format!("unknown method {s:?}; expected rk4_fixed or rk45_adaptive"))
}

/// Failures that map to an exit code.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Failure(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::StepFailure { .. }
            | Error::MaxSteps { .. }
            | Error::Inadmissible { .. }
            | Error::HullViolation { .. }
            | Error::Io(_) => CliError::Failure(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = configure_threads().and_then(|()| dispatch(cli.command));
    match outcome {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_FAILURE,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Failure(msg)) => {
            eprintln!("error: {msg}");
            EXIT_FAILURE
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| {
            CliError::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got {value:?}"
            ))
        })?;
    // The pool can only be built once per process; later calls keep it.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(())
}

struct Prepared {
    cfg: ExperimentConfig,
    out: PathBuf,
}

fn prepare(args: &CommonArgs) -> CliResult<Prepared> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::paper(),
    };
    if let Some(seed) = args.seed {
        cfg.override_seed(seed);
    }
    args.integrator.apply(&mut cfg.integrator);
    let out = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok(Prepared { cfg, out })
}

/// Provenance block written next to every artifact.
#[derive(Serialize)]
struct Metadata<'a, R: Serialize> {
    tool: &'static str,
    tool_version: &'static str,
    command: &'static str,
    seed: u64,
    config: &'a ExperimentConfig,
    result: R,
}

fn write_metadata<R: Serialize>(p: &Prepared, command: &'static str, result: R) -> CliResult<()> {
    let meta = Metadata {
        tool: env!("CARGO_PKG_NAME"),
        tool_version: env!("CARGO_PKG_VERSION"),
        command,
        seed: p.cfg.seed,
        config: &p.cfg,
        result,
    };
    output::write_json(&p.out.join(format!("{command}.json")), &meta)?;
    Ok(())
}

fn dispatch(command: Command) -> CliResult<bool> {
    match command {
        Command::Centrality(a) => cmd_centrality(&prepare(&a)?),
        Command::Simulate(a) => cmd_simulate(&prepare(&a)?),
        Command::Learn(a) => cmd_learn(&prepare(&a)?),
        Command::Montecarlo(a) => cmd_montecarlo(&prepare(&a)?),
        Command::Verify(a) => cmd_verify(&prepare(&a)?),
        Command::Paper(a) => cmd_paper(&prepare(&a)?),
    }
}

fn create_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn cmd_centrality(p: &Prepared) -> CliResult<bool> {
    let ex = p.cfg.resolve()?;
    let mu = ex.centrality()?;
    create_out(&p.out)?;
    let mut csv = String::from("node,mu\n");
    for (i, m) in mu.as_slice().iter().enumerate() {
        let _ = writeln!(csv, "{},{}", i + 1, fmt_f64(*m));
    }
    fs::write(p.out.join("centrality.csv"), &csv)?;
    write_metadata(p, "centrality", mu.as_slice())?;
    print!("{csv}");
    Ok(true)
}

#[derive(Serialize)]
struct SimulateResult {
    x0: Vec<f64>,
    z: Vec<f64>,
    terminated_by: crate::ode::Termination,
    t_final: f64,
    terminal: Vec<f64>,
    predicted_consensus: f64,
    abs_error: f64,
}

fn cmd_simulate(p: &Prepared) -> CliResult<bool> {
    let ex = p.cfg.resolve()?;
    let mu = ex.centrality()?;
    let x0 = match &p.cfg.x0 {
        Some(x0) => x0.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(p.cfg.seed);
            opinion::sample_initial_opinions(&ex.noise, NoiseDistribution::Gaussian, &mut rng)
        }
    };
    let opts = opinion::consensus_resolving_options(&p.cfg.integrator);
    let traj = opinion::simulate_opinions(&x0, &ex.z0, &ex.social, &opts)?;
    let predicted = opinion::predict_consensus(&x0, &ex.z0, &mu)?;
    let terminal = traj.last_state().to_vec();
    let mean = terminal.iter().sum::<f64>() / terminal.len() as f64;
    create_out(&p.out)?;
    fs::write(
        p.out.join("simulate.csv"),
        output::trajectory_csv(&traj, "x"),
    )?;
    fs::write(
        p.out.join("simulate.svg"),
        output::line_chart_svg(&traj, "opinions x_i(t)", "x"),
    )?;
    let result = SimulateResult {
        x0,
        z: ex.z0.as_slice().to_vec(),
        terminated_by: traj.terminated_by,
        t_final: traj.last_time(),
        abs_error: (mean - predicted).abs(),
        terminal,
        predicted_consensus: predicted,
    };
    println!(
        "terminated by {:?} at t = {}; consensus {} (predicted {})",
        result.terminated_by, result.t_final, mean, predicted
    );
    write_metadata(p, "simulate", &result)?;
    Ok(true)
}

#[derive(Serialize)]
struct LearnResult<'a> {
    z0: &'a [f64],
    z_limit: &'a [f64],
    diagnostics: &'a learning::LearningDiagnostics,
}

fn cmd_learn(p: &Prepared) -> CliResult<bool> {
    let ex = p.cfg.resolve()?;
    let problem = ex.problem()?;
    let run = learning::learn(&ex.z0, &problem, &p.cfg.integrator, p.cfg.coords)?;
    create_out(&p.out)?;
    fs::write(
        p.out.join("trajectory_z.csv"),
        output::trajectory_csv(&run.trajectory_z, "z"),
    )?;
    fs::write(
        p.out.join("trajectory_y.csv"),
        output::trajectory_csv(&run.trajectory_y, "y"),
    )?;
    fs::write(
        p.out.join("trajectory_z.svg"),
        output::line_chart_svg(&run.trajectory_z, "susceptibilities z_i(t)", "z"),
    )?;
    fs::write(
        p.out.join("trajectory_y.svg"),
        output::line_chart_svg(&run.trajectory_y, "consensus coordinates y_i(t)", "y"),
    )?;
    let d = &run.diagnostics;
    write_metadata(
        p,
        "learn",
        LearnResult {
            z0: ex.z0.as_slice(),
            z_limit: run.z_limit.as_slice(),
            diagnostics: d,
        },
    )?;
    println!(
        "terminated by {:?} after {} steps; spread {:e}; zeta {}; distance to optimal {:e}",
        d.terminated_by, d.steps, d.final_spread, d.zeta, d.distance_to_optimal
    );
    Ok(d.converged)
}

#[derive(Serialize)]
struct MonteCarloResult {
    z: Vec<f64>,
    distribution: NoiseDistribution,
    estimate: opinion::MonteCarloEstimate,
    analytic_variance: f64,
}

/// Header of `montecarlo.csv`; `stderr` is the standard error of the
/// variance estimate.
pub const MONTE_CARLO_HEADER: &str = "trials,seed,mean,variance,stderr,analytic_variance";

fn cmd_montecarlo(p: &Prepared) -> CliResult<bool> {
    let ex = p.cfg.resolve()?;
    let mu = ex.centrality()?;
    let mc = &p.cfg.monte_carlo;
    let est = opinion::monte_carlo_variance(
        &ex.mc_z,
        &ex.social,
        &ex.noise,
        mc.trials,
        mc.seed,
        mc.distribution,
    )?;
    let analytic = opinion::consensus_variance(&ex.mc_z, &mu, ex.noise.sigma2())?;
    create_out(&p.out)?;
    let csv = format!(
        "{MONTE_CARLO_HEADER}\n{},{},{},{},{},{}\n",
        est.trials,
        est.seed,
        fmt_f64(est.mean),
        fmt_f64(est.variance),
        fmt_f64(est.stderr),
        fmt_f64(analytic)
    );
    fs::write(p.out.join("montecarlo.csv"), &csv)?;
    write_metadata(
        p,
        "montecarlo",
        MonteCarloResult {
            z: ex.mc_z.as_slice().to_vec(),
            distribution: mc.distribution,
            estimate: est,
            analytic_variance: analytic,
        },
    )?;
    print!("{csv}");
    Ok(true)
}

fn cmd_verify(p: &Prepared) -> CliResult<bool> {
    let ex = p.cfg.resolve()?;
    let report = verify::run_checks(&p.cfg, &ex)?;
    create_out(&p.out)?;
    for c in &report.checks {
        println!(
            "{} {}: {:e} (tolerance {:e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.metric,
            c.tolerance
        );
    }
    write_metadata(p, "verify", &report)?;
    Ok(report.passed)
}

fn cmd_paper(p: &Prepared) -> CliResult<bool> {
    let (fz, summary) = experiments::write_paper_artifacts(&p.out, p.cfg.seed)?;
    println!(
        "seed {}: groups {:?}; zeta {}; converged {}; hull monotone {}",
        summary.seed, fz.report.groups, summary.zeta, summary.converged, summary.hull_monotone
    );
    Ok(summary.passed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrator_flags_override_config() {
        let cli = Cli::try_parse_from([
            "wisdomdyn",
            "learn",
            "--method",
            "rk4_fixed",
            "--dt",
            "0.5",
            "--t-end",
            "10",
            "--seed",
            "4",
        ])
        .unwrap();
        let Command::Learn(args) = cli.command else {
            panic!("wrong subcommand");
        };
        let p = prepare(&args).unwrap();
        assert_eq!(p.cfg.integrator.method, Method::Rk4Fixed);
        assert_eq!(p.cfg.integrator.dt, 0.5);
        assert_eq!(p.cfg.integrator.t_end, 10.0);
        assert_eq!(p.cfg.seed, 4);
        assert_eq!(p.out, PathBuf::from("out"));
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["wisdomdyn"]), EXIT_USAGE);
        assert_eq!(run(["wisdomdyn", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["wisdomdyn", "learn", "--method", "euler"]), EXIT_USAGE);
        assert_eq!(
            run([
                "wisdomdyn",
                "centrality",
                "--config",
                "/nonexistent/config.json"
            ]),
            EXIT_USAGE
        );
        assert_eq!(run(["wisdomdyn", "--version"]), EXIT_OK);
    }

    #[test]
    fn error_classes() {
        assert!(matches!(
            CliError::from(Error::NotStronglyConnected),
            CliError::Usage(_)
        ));
        assert!(matches!(
            CliError::from(Error::ZeroRow(1)),
            CliError::Usage(_)
        ));
        let hull = Error::HullViolation {
            agent: 0,
            t: 0.0,
            value: 0.0,
            lo: 1.0,
            hi: 2.0,
        };
        assert!(matches!(CliError::from(hull), CliError::Failure(_)));
    }
}
