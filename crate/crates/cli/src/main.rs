//! Command-line front end: deterministic runs, single trajectories,
//! ensembles, record replay and the verification suite.

mod config;
mod output;
mod verify;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cmptraj::ensemble::{self, convergence_report, EnsembleConfig};
use cmptraj::master;
use cmptraj::trajectory::{self, Measurement, MeasurementRecord};

use config::{Mode, ResolvedRun, ScenarioConfig};
use output::RunDir;

#[derive(Parser)]
#[command(name = "cmptraj", version, about = "Open quantum systems driven by structured photon wavepackets: master equations, quantum trajectories and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory (default: <config stem>.<mode>)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override run.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for ensembles (0 = all cores)
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Override numerics.dt
    #[arg(long)]
    dt: Option<f64>,
    /// Override numerics.t_max
    #[arg(long)]
    tmax: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the deterministic master equation
    Master {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a single conditioned trajectory, generating its record
    Trajectory {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a seeded parallel trajectory ensemble with statistics
    Ensemble {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Re-run the filter on an existing measurement record
    Replay {
        config: PathBuf,
        record: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the built-in identity verification suite
    Verify {
        /// Photon number for the source identities (1..=4)
        #[arg(long, default_value_t = 2)]
        n: usize,
        /// Write verify.json into this directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Master { config, common } => {
            cmd_with_config(&config, &common, Mode::Master, cmd_master)
        }
        Command::Trajectory { config, common } => {
            cmd_with_config(&config, &common, Mode::Trajectory, cmd_trajectory)
        }
        Command::Ensemble { config, common } => {
            cmd_with_config(&config, &common, Mode::Ensemble, cmd_ensemble)
        }
        Command::Replay { config, record, common } => cmd_with_config(
            &config,
            &common,
            Mode::Trajectory,
            |run, dir| cmd_replay(run, dir, &record),
        ),
        Command::Verify { n, out } => cmd_verify(n, out.as_deref()),
    }
}

fn cmd_with_config<F>(path: &Path, common: &Common, mode: Mode, body: F) -> anyhow::Result<i32>
where
    F: FnOnce(&ResolvedRun, &RunDir) -> anyhow::Result<()>,
{
    if common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
            .context("building thread pool")?;
    }
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let parsed = ScenarioConfig::from_toml(&text)?;
    let resolved = parsed.resolve(mode, common.seed, common.dt, common.tmax)?;

    let out = match &common.out {
        Some(dir) => dir.clone(),
        None => {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
            PathBuf::from(format!("{stem}.{}", mode_tag(mode)))
        }
    };
    let dir = RunDir::create(&out)?;
    dir.write_config_echo(&resolved.config)?;
    body(&resolved, &dir)?;
    println!("wrote {}", dir.path().display());
    Ok(0)
}

fn mode_tag(mode: Mode) -> &'static str {
    match mode {
        Mode::Master => "master",
        Mode::Trajectory => "trajectory",
        Mode::Ensemble => "ensemble",
        Mode::Verify => "verify",
    }
}

#[derive(Serialize)]
struct MasterSummary {
    mode: &'static str,
    runtime_seconds: f64,
    max_trace_drift: f64,
    min_eigenvalue: f64,
    final_expectations: Vec<(String, f64)>,
}

fn cmd_master(run: &ResolvedRun, dir: &RunDir) -> anyhow::Result<()> {
    let start = Instant::now();
    let result = master::run_master(&run.scenario, &run.settings.steps)
        .map_err(|e| anyhow::anyhow!("master run: {e}"))?;
    let names: Vec<String> =
        run.scenario.observables.iter().map(|(name, _)| name.clone()).collect();
    dir.write_master_csv(&result, &names)?;
    dir.write_summary(&MasterSummary {
        mode: "master",
        runtime_seconds: start.elapsed().as_secs_f64(),
        max_trace_drift: result.trace_drift.iter().cloned().fold(0.0, f64::max),
        min_eigenvalue: result.min_eigenvalue.iter().cloned().fold(f64::INFINITY, f64::min),
        final_expectations: names
            .iter()
            .zip(&result.observables)
            .map(|(name, row)| (name.clone(), *row.last().unwrap()))
            .collect(),
    })?;
    Ok(())
}

#[derive(Serialize)]
struct TrajectorySummary {
    mode: &'static str,
    runtime_seconds: f64,
    seed: Option<u64>,
    diagnostics: trajectory::Diagnostics,
}

fn require_measurement(run: &ResolvedRun) -> anyhow::Result<Measurement> {
    run.measurement
        .ok_or_else(|| anyhow::anyhow!("measurement.kind = \"none\" cannot drive this run"))
}

fn cmd_trajectory(run: &ResolvedRun, dir: &RunDir) -> anyhow::Result<()> {
    let start = Instant::now();
    let measurement = require_measurement(run)?;
    if measurement == Measurement::Counting {
        let max_nu = trajectory::counting_intensity_bound(&run.scenario, &run.settings.steps)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        if max_nu * run.settings.steps.dt > ensemble::MAX_JUMP_PROBABILITY {
            bail!(
                "numerics.dt: dt * max mean jump intensity = {:.3e} exceeds {}; reduce dt",
                max_nu * run.settings.steps.dt,
                ensemble::MAX_JUMP_PROBABILITY
            );
        }
    }
    let seed = run.config.run.seed;
    let result = trajectory::run_trajectory(&run.scenario, measurement, &run.settings, seed)
        .map_err(|e| anyhow::anyhow!("trajectory run: {e}"))?;
    let names: Vec<String> =
        run.scenario.observables.iter().map(|(name, _)| name.clone()).collect();
    dir.write_trajectory_csv(&result, &names)?;
    dir.write_record(&result)?;
    dir.write_summary(&TrajectorySummary {
        mode: "trajectory",
        runtime_seconds: start.elapsed().as_secs_f64(),
        seed: Some(seed),
        diagnostics: result.diagnostics,
    })?;
    Ok(())
}

#[derive(Serialize)]
struct EnsembleSummary {
    mode: &'static str,
    runtime_seconds: f64,
    master_seed: u64,
    report: ensemble::ConvergenceReport,
    jump_histogram: Vec<u64>,
    max_pre_renorm_drift: f64,
    min_eigenvalue: f64,
}

fn cmd_ensemble(run: &ResolvedRun, dir: &RunDir) -> anyhow::Result<()> {
    let start = Instant::now();
    let measurement = require_measurement(run)?;
    let config = EnsembleConfig {
        n_traj: run.config.run.n_traj,
        master_seed: run.config.run.seed,
        measurement,
        settings: run.settings,
    };
    let stats = ensemble::run_ensemble(&run.scenario, &config)
        .map_err(|e| anyhow::anyhow!("ensemble run: {e}"))?;
    let report = convergence_report(&stats);
    dir.write_ensemble_csv(&stats)?;
    for obs in &report.observables {
        println!(
            "{}: max deviation {:.2} standard errors, {:.1}% of samples in band -> {}",
            obs.name,
            obs.max_deviation_sigma,
            100.0 * obs.fraction_within_band,
            if obs.pass { "PASS" } else { "FAIL" }
        );
    }
    dir.write_summary(&EnsembleSummary {
        mode: "ensemble",
        runtime_seconds: start.elapsed().as_secs_f64(),
        master_seed: config.master_seed,
        report,
        jump_histogram: stats.jump_histogram.clone(),
        max_pre_renorm_drift: stats.max_pre_renorm_drift,
        min_eigenvalue: stats.min_eigenvalue,
    })?;
    Ok(())
}

fn cmd_replay(run: &ResolvedRun, dir: &RunDir, record_path: &Path) -> anyhow::Result<()> {
    let start = Instant::now();
    let measurement = require_measurement(run)?;
    let text = fs::File::open(record_path)
        .with_context(|| format!("opening record {}", record_path.display()))?;
    let reader = std::io::BufReader::new(text);
    let record = match measurement {
        Measurement::Homodyne => MeasurementRecord::read_homodyne(reader),
        Measurement::Counting => MeasurementRecord::read_counting(
            reader,
            run.settings.steps.dt,
            run.settings.steps.n_steps,
        ),
    }
    .map_err(|e| anyhow::anyhow!("record: {e}"))?;
    let result = trajectory::filter_replay(&run.scenario, &run.settings, &record)
        .map_err(|e| anyhow::anyhow!("replay: {e}"))?;
    let names: Vec<String> =
        run.scenario.observables.iter().map(|(name, _)| name.clone()).collect();
    dir.write_trajectory_csv(&result, &names)?;
    dir.write_summary(&TrajectorySummary {
        mode: "replay",
        runtime_seconds: start.elapsed().as_secs_f64(),
        seed: None,
        diagnostics: result.diagnostics,
    })?;
    Ok(())
}

fn cmd_verify(n: usize, out: Option<&Path>) -> anyhow::Result<i32> {
    let report = verify::run_verify(n)?;
    verify::print_report(&report);
    if let Some(dir) = out {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        let text = serde_json::to_string_pretty(&report)?;
        fs::write(dir.join("verify.json"), text).context("writing verify.json")?;
    }
    Ok(if report.pass { 0 } else { 1 })
}
