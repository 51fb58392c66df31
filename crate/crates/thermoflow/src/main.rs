//! Batch experiment driver: load a TOML config, run the requested
//! pipeline, write CSV data and JSON reports.
//!
//! Exit codes: 0 success, 1 config error, 2 numeric failure, 3 verdict
//! mismatch (conjugacy correspondence failures).

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::TAU;
use std::path::PathBuf;
use std::process::ExitCode;

use thermoflow::analysis::{identity_suite, rigidity_report, PhaseQuadrature, RSampling};
use thermoflow::config::{ConfigError, ExperimentConfig};
use thermoflow::dynamics::PhaseState;
use thermoflow::gauge::{conjugacy_correspondence, solve_gauge};
use thermoflow::hopf::{hopf_limit, BSchedule};
use thermoflow::jacobi::conjugate_scan;
use thermoflow::evolve;

#[derive(Parser)]
#[command(name = "thermoflow", version, about = "Thermostat flow simulation and verification on the 2-torus")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, default_value = "experiment.toml")]
    config: PathBuf,
    /// Output directory for reports and data files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker thread cap (default: all cores). Results do not depend on
    /// the worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed for randomized node/initial-condition sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the integrator tolerance of the selected command.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate trajectories and write them as CSV.
    Simulate,
    /// First-conjugate-time scan over a batch of initial conditions.
    ConjugateScan,
    /// Integral-identity suite and rigidity report.
    Verify,
    /// Hopf-limit Riccati profile along one trajectory.
    Hopf,
    /// Gauge normalization and conjugacy correspondence.
    Gauge,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_MISMATCH: u8 = 3;

#[derive(Debug)]
enum RunError {
    Config(String),
    Numeric(String),
    Mismatch(String),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Numeric(format!("io: {e}"))
    }
}

fn numeric(e: impl std::fmt::Display) -> RunError {
    RunError::Numeric(e.to_string())
}

fn missing_section(name: &str) -> RunError {
    RunError::Config(format!("config has no [{name}] section"))
}

/// Reproducibility header embedded in every JSON report.
#[derive(Serialize)]
struct ReportMeta {
    config_sha256: String,
    seed: u64,
    tolerances: serde_json::Value,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(RunError::Numeric(msg)) => {
            eprintln!("numeric failure: {msg}");
            ExitCode::from(EXIT_NUMERIC)
        }
        Err(RunError::Mismatch(msg)) => {
            eprintln!("verdict mismatch: {msg}");
            ExitCode::from(EXIT_MISMATCH)
        }
    }
}

fn run(cli: &Cli) -> Result<(), RunError> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| RunError::Config(format!("--workers: {e}")))?;
    }
    let (config, hash) = ExperimentConfig::load(&cli.config)?;
    std::fs::create_dir_all(&cli.out)?;
    let seed = cli.seed.unwrap_or(7);
    match cli.command {
        Command::Simulate => cmd_simulate(cli, &config, &hash),
        Command::ConjugateScan => cmd_conjugate_scan(cli, &config, &hash, seed),
        Command::Verify => cmd_verify(cli, &config, &hash, seed),
        Command::Hopf => cmd_hopf(cli, &config, &hash, seed),
        Command::Gauge => cmd_gauge(cli, &config, &hash, seed),
    }
}

fn write_json(path: &std::path::Path, value: &impl Serialize) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| RunError::Numeric(format!("serialize: {e}")))?;
    std::fs::write(path, text)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_simulate(cli: &Cli, config: &ExperimentConfig, hash: &str) -> Result<(), RunError> {
    let sim = config.simulate.as_ref().ok_or_else(|| missing_section("simulate"))?;
    let tol = cli.tol.unwrap_or(sim.tol);
    let system = config.system.build();
    #[derive(Serialize)]
    struct Summary {
        meta: ReportMeta,
        trajectories: Vec<String>,
    }
    let mut files = Vec::new();
    for (i, ic) in sim.initial.iter().enumerate() {
        let initial = PhaseState::new(ic[0], ic[1], ic[2]);
        let traj = evolve(&system, initial, sim.t_span, tol).map_err(numeric)?;
        let path = cli.out.join(format!("trajectory_{i}.csv"));
        let file = std::fs::File::create(&path)?;
        traj.write_csv(std::io::BufWriter::new(file))?;
        println!("wrote {}", path.display());
        files.push(path.display().to_string());
    }
    write_json(
        &cli.out.join("simulate.json"),
        &Summary {
            meta: ReportMeta {
                config_sha256: hash.to_string(),
                seed: 0,
                tolerances: serde_json::json!({ "integrator_tol": tol }),
            },
            trajectories: files,
        },
    )
}

fn cmd_conjugate_scan(
    cli: &Cli,
    config: &ExperimentConfig,
    hash: &str,
    seed: u64,
) -> Result<(), RunError> {
    let scan = config
        .conjugate_scan
        .as_ref()
        .ok_or_else(|| missing_section("conjugate_scan"))?;
    let tol = cli.tol.unwrap_or(scan.tol);
    let system = config.system.build();
    // Uniform headings at seeded random base points: deterministic for a
    // given seed and count, independent of worker count.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = scan.initial_conditions;
    let initials: Vec<PhaseState> = (0..n)
        .map(|j| {
            PhaseState::new(
                rng.gen::<f64>() * TAU,
                rng.gen::<f64>() * TAU,
                TAU * j as f64 / n as f64,
            )
        })
        .collect();
    #[derive(Serialize)]
    struct Entry {
        initial: [f64; 3],
        report: thermoflow::jacobi::ConjugateReport,
    }
    let entries: Vec<Entry> = initials
        .par_iter()
        .map(|ic| {
            conjugate_scan(&system, *ic, scan.horizon, tol)
                .map(|report| Entry {
                    initial: [ic.x[0], ic.x[1], ic.theta],
                    report,
                })
                .map_err(numeric)
        })
        .collect::<Result<_, _>>()?;
    #[derive(Serialize)]
    struct Report {
        meta: ReportMeta,
        horizon: f64,
        results: Vec<Entry>,
    }
    write_json(
        &cli.out.join("conjugate_scan.json"),
        &Report {
            meta: ReportMeta {
                config_sha256: hash.to_string(),
                seed,
                tolerances: serde_json::json!({ "integrator_tol": tol }),
            },
            horizon: scan.horizon,
            results: entries,
        },
    )
}

fn cmd_verify(
    cli: &Cli,
    config: &ExperimentConfig,
    hash: &str,
    seed: u64,
) -> Result<(), RunError> {
    let verify = config.verify.as_ref().ok_or_else(|| missing_section("verify"))?;
    let system = config.system.build();
    let quad = PhaseQuadrature::new(system.metric(), verify.n_x, verify.n_theta);
    let sampling = (verify.r_samples > 0).then(|| RSampling {
        n_samples: verify.r_samples,
        seed,
        tol: verify.r_tol,
        ..RSampling::default()
    });
    let suite = identity_suite(&system, &quad, sampling);
    let (rigidity, _gauge) = rigidity_report(&system, &quad);
    #[derive(Serialize)]
    struct Report {
        meta: ReportMeta,
        identity_suite: thermoflow::analysis::IdentitySuite,
        rigidity: thermoflow::analysis::RigidityReport,
    }
    write_json(
        &cli.out.join("verify.json"),
        &Report {
            meta: ReportMeta {
                config_sha256: hash.to_string(),
                seed,
                tolerances: serde_json::json!({ "r_tol": verify.r_tol }),
            },
            identity_suite: suite,
            rigidity,
        },
    )
}

fn cmd_hopf(cli: &Cli, config: &ExperimentConfig, hash: &str, seed: u64) -> Result<(), RunError> {
    let hc = config.hopf.as_ref().ok_or_else(|| missing_section("hopf"))?;
    let tol = cli.tol.unwrap_or(hc.integrator_tol);
    let system = config.system.build();
    let initial = PhaseState::new(hc.initial[0], hc.initial[1], hc.initial[2]);
    let traj = evolve(&system, initial, hc.t_span, tol).map_err(numeric)?;
    let schedule = BSchedule {
        b0: hc.b0,
        b_max: hc.b_max,
    };
    let profile = hopf_limit(&traj, hc.anchor, schedule, hc.tol).map_err(numeric)?;
    let csv_path = cli.out.join("riccati_profile.csv");
    let file = std::fs::File::create(&csv_path)?;
    profile.write_csv(std::io::BufWriter::new(file))?;
    println!("wrote {}", csv_path.display());
    #[derive(Serialize)]
    struct Sidecar<'a> {
        meta: ReportMeta,
        anchor: f64,
        converged_b: f64,
        residual: f64,
        bounds: thermoflow::hopf::ComparisonBounds,
        history: &'a [thermoflow::hopf::ConvergenceRecord],
    }
    write_json(
        &cli.out.join("riccati_history.json"),
        &Sidecar {
            meta: ReportMeta {
                config_sha256: hash.to_string(),
                seed,
                tolerances: serde_json::json!({
                    "integrator_tol": tol,
                    "limit_tol": hc.tol,
                }),
            },
            anchor: profile.anchor,
            converged_b: profile.converged_b,
            residual: profile.residual,
            bounds: profile.bounds,
            history: &profile.history,
        },
    )
}

fn cmd_gauge(cli: &Cli, config: &ExperimentConfig, hash: &str, seed: u64) -> Result<(), RunError> {
    let gc = config.gauge.as_ref().ok_or_else(|| missing_section("gauge"))?;
    let tol = cli.tol.unwrap_or(gc.tol);
    let system = config.system.build();
    let transform = solve_gauge(&system);
    #[derive(Serialize)]
    struct Report {
        meta: ReportMeta,
        poisson_residual: f64,
        aliasing_residual: f64,
        divergence_residual: f64,
        mean_u: f64,
        sup_u: f64,
        u: Vec<thermoflow::fields::FieldTerm>,
        phi1: Vec<thermoflow::fields::FieldTerm>,
        f1: Vec<thermoflow::fields::FieldTerm>,
        e1_1: Vec<thermoflow::fields::FieldTerm>,
        e1_2: Vec<thermoflow::fields::FieldTerm>,
        correspondence: Vec<thermoflow::gauge::CorrespondenceReport>,
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = gc.initial_conditions;
    let initials: Vec<PhaseState> = (0..n)
        .map(|j| {
            PhaseState::new(
                rng.gen::<f64>() * TAU,
                rng.gen::<f64>() * TAU,
                TAU * j as f64 / n.max(1) as f64,
            )
        })
        .collect();
    let correspondence: Vec<_> = initials
        .par_iter()
        .map(|ic| {
            conjugacy_correspondence(&transform, *ic, gc.horizon, tol, gc.match_tol)
                .map_err(numeric)
        })
        .collect::<Result<_, _>>()?;
    let failures = correspondence.iter().filter(|r| !r.consistent).count();
    let report = Report {
        meta: ReportMeta {
            config_sha256: hash.to_string(),
            seed,
            tolerances: serde_json::json!({
                "integrator_tol": tol,
                "match_tol": gc.match_tol,
            }),
        },
        poisson_residual: transform.poisson_residual,
        aliasing_residual: transform.aliasing_residual,
        divergence_residual: transform.divergence_residual,
        mean_u: transform.u.mean(),
        sup_u: transform.u.sup_norm(),
        u: transform.u.to_terms(),
        phi1: transform.transformed.metric().phi().to_terms(),
        f1: transform.transformed.f().to_terms(),
        e1_1: transform.transformed.e().c1.to_terms(),
        e1_2: transform.transformed.e().c2.to_terms(),
        correspondence,
    };
    write_json(&cli.out.join("gauge.json"), &report)?;
    if failures > 0 {
        return Err(RunError::Mismatch(format!(
            "{failures} of {n} conjugacy correspondences inconsistent (see gauge.json)"
        )));
    }
    Ok(())
}
