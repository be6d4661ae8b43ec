//! Seeded, parallel Monte Carlo ensembles with streaming statistics and a
//! deterministic-reference consistency report.
//!
//! Trajectory index `i` always draws from RNG stream `(master_seed, i)` and
//! work is split into fixed-size chunks merged by a pairwise reduction over
//! chunk indices, so the statistics are bit-identical across runs, worker
//! counts and scheduling orders.

use rayon::prelude::*;
use serde::Serialize;

use crate::master;
use crate::trajectory::{
    self, counting_intensity_bound, Measurement, TrajectorySettings,
};
use crate::{Error, Result, Scenario};

/// Trajectories per parallel work item (fixed so chunking does not depend on
/// the worker count).
const CHUNK: usize = 16;
/// Largest tolerated `dt · max_t ν̄_t` for counting runs.
pub const MAX_JUMP_PROBABILITY: f64 = 0.05;
/// Consistency band in units of the standard error.
pub const SIGMA_BAND: f64 = 3.0;
/// Fraction of sample times that must fall inside the band.
pub const MIN_FRACTION_IN_BAND: f64 = 0.99;
/// A run aborts only if more than this fraction of trajectories fail.
const MAX_FAILURE_FRACTION: f64 = 0.01;

#[derive(Clone, Copy, Debug)]
pub struct EnsembleConfig {
    pub n_traj: usize,
    pub master_seed: u64,
    pub measurement: Measurement,
    pub settings: TrajectorySettings,
}

/// Per-time-sample mean and standard error of every observable, against the
/// deterministic reference.
#[derive(Clone, Debug)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub observable_names: Vec<String>,
    /// `[obs][sample]`
    pub mean: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub reference: Vec<Vec<f64>>,
    /// `|mean − reference| / stderr` (0 when both vanish)
    pub deviation_sigma: Vec<Vec<f64>>,
    /// Counting only: `jump_histogram[k]` trajectories registered `k` jumps.
    pub jump_histogram: Vec<u64>,
    pub n_traj: usize,
    pub n_failed: usize,
    /// Failed trajectory indices with messages (kept if within tolerance).
    pub failures: Vec<(usize, String)>,
    pub max_pre_renorm_drift: f64,
    pub min_eigenvalue: f64,
}

/// Welford accumulator over the flattened (observable × sample) grid.
struct Accum {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    jump_hist: Vec<u64>,
    failures: Vec<(usize, String)>,
    max_drift: f64,
    min_eig: f64,
}

impl Accum {
    fn new(cells: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; cells],
            m2: vec![0.0; cells],
            jump_hist: Vec::new(),
            failures: Vec::new(),
            max_drift: 0.0,
            min_eig: f64::INFINITY,
        }
    }

    fn push(&mut self, values: impl Iterator<Item = f64>) {
        self.count += 1;
        let n = self.count as f64;
        for (cell, x) in values.enumerate() {
            let delta = x - self.mean[cell];
            self.mean[cell] += delta / n;
            self.m2[cell] += delta * (x - self.mean[cell]);
        }
    }

    fn push_jump_count(&mut self, jumps: usize) {
        if self.jump_hist.len() <= jumps {
            self.jump_hist.resize(jumps + 1, 0);
        }
        self.jump_hist[jumps] += 1;
    }

    fn merge(mut a: Self, b: Self) -> Self {
        if b.count > 0 {
            if a.count == 0 {
                a.mean = b.mean.clone();
                a.m2 = b.m2.clone();
                a.count = b.count;
            } else {
                let (na, nb) = (a.count as f64, b.count as f64);
                let n = na + nb;
                for cell in 0..a.mean.len() {
                    let delta = b.mean[cell] - a.mean[cell];
                    a.mean[cell] += delta * nb / n;
                    a.m2[cell] += b.m2[cell] + delta * delta * na * nb / n;
                }
                a.count += b.count;
            }
        }
        if a.jump_hist.len() < b.jump_hist.len() {
            a.jump_hist.resize(b.jump_hist.len(), 0);
        }
        for (k, c) in b.jump_hist.iter().enumerate() {
            a.jump_hist[k] += c;
        }
        a.failures.extend(b.failures);
        a.max_drift = a.max_drift.max(b.max_drift);
        a.min_eig = a.min_eig.min(b.min_eig);
        a
    }
}

/// Deterministic pairwise reduction in chunk-index order.
fn reduce_accums(mut accums: Vec<Accum>) -> Accum {
    while accums.len() > 1 {
        let mut next = Vec::with_capacity(accums.len().div_ceil(2));
        let mut iter = accums.into_iter();
        while let Some(a) = iter.next() {
            match iter.next() {
                Some(b) => next.push(Accum::merge(a, b)),
                None => next.push(a),
            }
        }
        accums = next;
    }
    accums.into_iter().next().expect("at least one chunk")
}

/// Run the ensemble; deterministic in `config.master_seed` regardless of the
/// rayon worker count.
pub fn run_ensemble(scenario: &Scenario, config: &EnsembleConfig) -> Result<EnsembleStats> {
    if config.n_traj == 0 {
        return Err(Error::Config("ensemble: n_traj must be at least 1".into()));
    }
    let steps = config.settings.steps;
    if config.measurement == Measurement::Counting {
        let max_nu = counting_intensity_bound(scenario, &steps)?;
        if max_nu * steps.dt > MAX_JUMP_PROBABILITY {
            return Err(Error::Config(format!(
                "counting: dt * max mean intensity = {:.3e} exceeds {MAX_JUMP_PROBABILITY} \
                 (jump thinning would be biased); reduce dt",
                max_nu * steps.dt
            )));
        }
    }
    let reference = master::run_master(scenario, &steps)?;

    let n_obs = scenario.observables.len();
    let n_samples = steps.n_samples();
    let cells = n_obs * n_samples;
    let n_chunks = config.n_traj.div_ceil(CHUNK);

    let accums: Vec<Accum> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * CHUNK;
            let hi = ((chunk + 1) * CHUNK).min(config.n_traj);
            let mut acc = Accum::new(cells);
            for idx in lo..hi {
                match trajectory::run_trajectory_stream(
                    scenario,
                    config.measurement,
                    &config.settings,
                    config.master_seed,
                    idx as u64,
                ) {
                    Ok(result) => {
                        acc.push(result.observables.iter().flat_map(|row| row.iter().copied()));
                        if config.measurement == Measurement::Counting {
                            acc.push_jump_count(result.diagnostics.jump_count);
                        }
                        acc.max_drift =
                            acc.max_drift.max(result.diagnostics.max_pre_renorm_drift);
                        acc.min_eig = acc.min_eig.min(result.diagnostics.min_eigenvalue);
                    }
                    Err(err) => acc.failures.push((idx, err.to_string())),
                }
            }
            acc
        })
        .collect();
    let acc = reduce_accums(accums);

    let n_failed = acc.failures.len();
    if n_failed as f64 > MAX_FAILURE_FRACTION * config.n_traj as f64 {
        let (index, message) = acc.failures[0].clone();
        return Err(Error::EnsembleFailures {
            failed: n_failed,
            total: config.n_traj,
            index,
            message,
        });
    }

    let count = acc.count;
    let mut mean = vec![vec![0.0; n_samples]; n_obs];
    let mut stderr = vec![vec![0.0; n_samples]; n_obs];
    let mut deviation = vec![vec![0.0; n_samples]; n_obs];
    let mut reference_rows = vec![vec![0.0; n_samples]; n_obs];
    for obs in 0..n_obs {
        for s in 0..n_samples {
            let cell = obs * n_samples + s;
            mean[obs][s] = acc.mean[cell];
            stderr[obs][s] = if count > 1 {
                (acc.m2[cell] / (count as f64 * (count as f64 - 1.0))).sqrt()
            } else {
                0.0
            };
            reference_rows[obs][s] = reference.observables[obs][s];
            let diff = (mean[obs][s] - reference_rows[obs][s]).abs();
            deviation[obs][s] = if stderr[obs][s] > 0.0 {
                diff / stderr[obs][s]
            } else if diff <= 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
        }
    }

    Ok(EnsembleStats {
        times: reference.times,
        observable_names: scenario.observables.iter().map(|(name, _)| name.clone()).collect(),
        mean,
        stderr,
        reference: reference_rows,
        deviation_sigma: deviation,
        jump_histogram: acc.jump_hist,
        n_traj: config.n_traj,
        n_failed,
        failures: acc.failures,
        max_pre_renorm_drift: acc.max_drift,
        min_eigenvalue: acc.min_eig,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ObservableReport {
    pub name: String,
    pub max_deviation_sigma: f64,
    pub fraction_within_band: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub observables: Vec<ObservableReport>,
    pub n_traj: usize,
    pub n_failed: usize,
    pub pass: bool,
}

/// Compare ensemble means against the deterministic reference: each
/// observable must sit within `SIGMA_BAND` standard errors at
/// `MIN_FRACTION_IN_BAND` of the sample times.
pub fn convergence_report(stats: &EnsembleStats) -> ConvergenceReport {
    let mut observables = Vec::with_capacity(stats.observable_names.len());
    for (obs, name) in stats.observable_names.iter().enumerate() {
        let devs = &stats.deviation_sigma[obs];
        let max_dev = devs.iter().cloned().fold(0.0, f64::max);
        let inside = devs.iter().filter(|d| **d <= SIGMA_BAND).count();
        let fraction = inside as f64 / devs.len() as f64;
        observables.push(ObservableReport {
            name: name.clone(),
            max_deviation_sigma: max_dev,
            fraction_within_band: fraction,
            pass: fraction >= MIN_FRACTION_IN_BAND,
        });
    }
    let pass = observables.iter().all(|o| o.pass);
    ConvergenceReport { observables, n_traj: stats.n_traj, n_failed: stats.n_failed, pass }
}

impl EnsembleStats {
    /// Long-format CSV: one row per (time, observable).
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,observable,mean,stderr,reference,deviation_sigma")?;
        for (obs, name) in self.observable_names.iter().enumerate() {
            for (s, t) in self.times.iter().enumerate() {
                writeln!(
                    w,
                    "{t},{name},{},{},{},{}",
                    self.mean[obs][s],
                    self.stderr[obs][s],
                    self.reference[obs][s],
                    self.deviation_sigma[obs][s]
                )?;
            }
        }
        Ok(())
    }
}
