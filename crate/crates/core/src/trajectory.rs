//! Stochastic master equation integration conditioned on homodyne or
//! photon-counting records of the output field.
//!
//! The conditional state lives on the joint system⊗source space and evolves
//! under the cascade coupling `L~(t)`:
//!
//! ```text
//! homodyne:  dϱ = 𝓛*ϱ dt + (L~ϱ + ϱL~* − λ_t ϱ)(dY − λ_t dt),   λ_t = tr{ϱ(L~ + L~*)}
//! counting:  jump ϱ → L~ϱL~*/ν_t with probability ν_t dt,         ν_t = tr{ϱ L~*L~}
//!            else  ϱ += 𝓛*ϱ dt − (L~ϱL~* − ν_t ϱ) dt
//! ```
//!
//! followed by trace renormalization. Records are written in terms of the
//! measured increments, and every state update is computed from the record
//! value, so replaying a self-generated record reproduces the trajectory
//! bit for bit.

use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::master::{self, JointState, Steps};
use crate::operators::{self, BlockMatrix};
use crate::slh::{self, SlhTriple};
use crate::wavepacket::CmpGenerator;
use crate::{CMatrix, Complex64, Error, Result, Scenario};

/// Measurement carried out on the output field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measurement {
    Homodyne,
    Counting,
}

/// Default floor on the jump intensity; below it the jump branch is disabled
/// for the step.
pub const EPS_NU: f64 = 1e-12;
/// Pre-renormalization trace drift that aborts a run (step too large).
pub const MAX_STEP_DRIFT: f64 = 1e-3;
/// A density operator has Frobenius norm at most 1; beyond this the
/// multiplicative noise has run away and the step size is too large.
pub const MAX_STATE_NORM: f64 = 4.0;

#[derive(Clone, Copy, Debug)]
pub struct TrajectorySettings {
    pub steps: Steps,
    pub eps_nu: f64,
    pub max_step_drift: f64,
}

impl TrajectorySettings {
    pub fn new(steps: Steps) -> Self {
        Self { steps, eps_nu: EPS_NU, max_step_drift: MAX_STEP_DRIFT }
    }
}

/// A measurement record on a uniform step grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementRecord {
    pub kind: Measurement,
    pub dt: f64,
    pub n_steps: usize,
    pub data: RecordData,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RecordData {
    /// One `dY` increment per step.
    Homodyne(Vec<f64>),
    /// Ordered jump times; a jump in step `k` is stamped `(k+1)·dt`.
    Counting(Vec<f64>),
}

impl MeasurementRecord {
    /// Columnar text: homodyne as `t dY` per step, counting as one jump time
    /// per line. Floats are printed with shortest round-trip precision, so a
    /// written record replays exactly.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        match &self.data {
            RecordData::Homodyne(dy) => {
                for (k, v) in dy.iter().enumerate() {
                    writeln!(w, "{} {}", (k + 1) as f64 * self.dt, v)?;
                }
            }
            RecordData::Counting(times) => {
                for t in times {
                    writeln!(w, "{t}")?;
                }
            }
        }
        Ok(())
    }

    /// Parse a homodyne record (`t dY` per line); `dt` and the step count
    /// come from the time column.
    pub fn read_homodyne<R: BufRead>(r: R) -> Result<Self> {
        let mut dy = Vec::new();
        let mut dt = 0.0;
        for (idx, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::RecordMismatch(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let t: f64 = parse_field(parts.next(), idx)?;
            let v: f64 = parse_field(parts.next(), idx)?;
            if idx == 0 {
                if t <= 0.0 {
                    return Err(Error::RecordMismatch("first time stamp must be positive".into()));
                }
                dt = t;
            } else if (t - (idx + 1) as f64 * dt).abs() > 1e-9 * t.abs().max(1.0) {
                return Err(Error::RecordMismatch(format!(
                    "non-uniform time stamp {t} at line {}",
                    idx + 1
                )));
            }
            dy.push(v);
        }
        if dy.is_empty() {
            return Err(Error::RecordMismatch("empty homodyne record".into()));
        }
        let n_steps = dy.len();
        Ok(Self { kind: Measurement::Homodyne, dt, n_steps, data: RecordData::Homodyne(dy) })
    }

    /// Parse a counting record (one jump time per line) against a known step
    /// grid.
    pub fn read_counting<R: BufRead>(r: R, dt: f64, n_steps: usize) -> Result<Self> {
        let mut times = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::RecordMismatch(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let t: f64 = parse_field(Some(line), idx)?;
            times.push(t);
        }
        let record =
            Self { kind: Measurement::Counting, dt, n_steps, data: RecordData::Counting(times) };
        record.jump_steps()?;
        Ok(record)
    }

    /// Map counting jump times to step indices, validating the grid.
    fn jump_steps(&self) -> Result<Vec<usize>> {
        let times = match &self.data {
            RecordData::Counting(times) => times,
            RecordData::Homodyne(_) => {
                return Err(Error::RecordMismatch("not a counting record".into()))
            }
        };
        let mut steps = Vec::with_capacity(times.len());
        let mut last = f64::NEG_INFINITY;
        for &t in times {
            if t <= last {
                return Err(Error::RecordMismatch(format!("jump times not increasing at {t}")));
            }
            last = t;
            let ratio = t / self.dt;
            let idx = ratio.round() as isize - 1;
            if (ratio - ratio.round()).abs() > 1e-6 || idx < 0 || idx as usize >= self.n_steps {
                return Err(Error::RecordMismatch(format!(
                    "jump time {t} is not on the step grid"
                )));
            }
            steps.push(idx as usize);
        }
        Ok(steps)
    }
}

fn parse_field(field: Option<&str>, line: usize) -> Result<f64> {
    field
        .ok_or_else(|| Error::RecordMismatch(format!("missing column at line {}", line + 1)))?
        .parse()
        .map_err(|e| Error::RecordMismatch(format!("line {}: {e}", line + 1)))
}

/// Per-run diagnostics.
#[derive(Clone, Copy, Debug, Default, serde::Serialize)]
pub struct Diagnostics {
    pub jump_count: usize,
    /// Largest pre-renormalization trace deviation seen in any step.
    pub max_pre_renorm_drift: f64,
    /// Smallest eigenvalue seen at the sampled times.
    pub min_eigenvalue: f64,
    pub final_purity: f64,
}

/// Conditional expectations along one trajectory, with the record that
/// produced them.
#[derive(Clone, Debug)]
pub struct TrajectoryResult {
    pub times: Vec<f64>,
    /// One row per scenario observable: `tr_aux`-reduced conditional means.
    pub observables: Vec<Vec<f64>>,
    /// Largest pre-renormalization trace deviation since the previous sample.
    pub trace_drift: Vec<f64>,
    pub min_eigenvalue: Vec<f64>,
    pub record: MeasurementRecord,
    pub diagnostics: Diagnostics,
    pub final_state: JointState,
}

/// One homodyne step; replayed from `record_dy` when given, otherwise
/// generated from `noise`.
fn homodyne_step_inner(
    state: &mut JointState,
    cascade: &SlhTriple,
    dt: f64,
    noise: Option<f64>,
    record_dy: Option<f64>,
    max_step_drift: f64,
) -> Result<(f64, f64)> {
    let t = state.t;
    let l = cascade.l_at(t);
    let h = cascade.h_at(t);
    let ld = l.adjoint();
    let lambda = ((&l * &state.rho).trace() + (&state.rho * &ld).trace()).re;
    let lambda_dt = lambda * dt;
    let dy = match record_dy {
        Some(dy) => dy,
        None => lambda_dt + dt.sqrt() * noise.expect("noise required when generating"),
    };
    let innovation = dy - lambda_dt;

    let lind = slh::lindblad_dual_ops(&l, &h, &state.rho) * Complex64::new(dt, 0.0);
    let diff = (&l * &state.rho + &state.rho * &ld - &state.rho * Complex64::new(lambda, 0.0))
        * Complex64::new(innovation, 0.0);
    state.rho += lind + diff;

    let trace = state.rho.trace().re;
    let drift = (trace - 1.0).abs();
    if !trace.is_finite() || drift > max_step_drift {
        return Err(Error::InvariantViolation {
            t,
            what: format!("pre-renormalization trace drift {drift:e}; step too large"),
        });
    }
    state.rho /= Complex64::new(trace, 0.0);
    let norm = state.rho.norm();
    if !norm.is_finite() || norm > MAX_STATE_NORM {
        return Err(Error::InvariantViolation {
            t,
            what: format!("state norm {norm:e} exceeds {MAX_STATE_NORM}; step too large"),
        });
    }
    state.t = t + dt;
    Ok((dy, drift))
}

/// One counting step; replayed from `record_jump` when given, otherwise
/// thinned with `uniform`.
fn counting_step_inner(
    state: &mut JointState,
    cascade: &SlhTriple,
    dt: f64,
    uniform: Option<f64>,
    record_jump: Option<bool>,
    eps_nu: f64,
    max_step_drift: f64,
) -> Result<(bool, f64)> {
    let t = state.t;
    let l = cascade.l_at(t);
    let jump_num = &l * &state.rho * l.adjoint();
    let nu = jump_num.trace().re;

    let jump = match record_jump {
        Some(flag) => {
            if flag && nu < eps_nu {
                return Err(Error::EmptyField { nu, t });
            }
            flag
        }
        None => nu >= eps_nu && uniform.expect("uniform sample required when generating") < nu * dt,
    };

    let drift;
    if jump {
        state.rho = jump_num / Complex64::new(nu, 0.0);
        drift = 0.0;
    } else {
        let h = cascade.h_at(t);
        let lind = slh::lindblad_dual_ops(&l, &h, &state.rho) * Complex64::new(dt, 0.0);
        let no_jump = (jump_num - &state.rho * Complex64::new(nu, 0.0)) * Complex64::new(dt, 0.0);
        state.rho += lind - no_jump;
        let trace = state.rho.trace().re;
        drift = (trace - 1.0).abs();
        if !trace.is_finite() || drift > max_step_drift {
            return Err(Error::InvariantViolation {
                t,
                what: format!("pre-renormalization trace drift {drift:e}; step too large"),
            });
        }
        state.rho /= Complex64::new(trace, 0.0);
        let norm = state.rho.norm();
        if !norm.is_finite() || norm > MAX_STATE_NORM {
            return Err(Error::InvariantViolation {
                t,
                what: format!("state norm {norm:e} exceeds {MAX_STATE_NORM}; step too large"),
            });
        }
    }
    state.t = t + dt;
    Ok((jump, drift))
}

/// Advance the conditional state by one homodyne step, generating the
/// increment from a standard normal sample. Returns `dY`.
pub fn homodyne_step(
    state: &mut JointState,
    cascade: &SlhTriple,
    dt: f64,
    noise: f64,
) -> Result<f64> {
    homodyne_step_inner(state, cascade, dt, Some(noise), None, MAX_STEP_DRIFT).map(|(dy, _)| dy)
}

/// Advance the conditional state by one counting step, thinning the jump
/// with a uniform sample. Returns whether a jump fired.
pub fn counting_step(
    state: &mut JointState,
    cascade: &SlhTriple,
    dt: f64,
    uniform: f64,
) -> Result<bool> {
    counting_step_inner(state, cascade, dt, Some(uniform), None, EPS_NU, MAX_STEP_DRIFT)
        .map(|(jump, _)| jump)
}

enum Drive<'a> {
    Generate(ChaCha8Rng),
    ReplayHomodyne(&'a [f64]),
    ReplayCounting(Vec<bool>),
}

fn run_conditioned(
    scenario: &Scenario,
    measurement: Measurement,
    settings: &TrajectorySettings,
    mut drive: Drive,
) -> Result<TrajectoryResult> {
    let cascade = slh::cascade(&scenario.sys, &scenario.gen.aux_triple())?;
    let steps = settings.steps;
    let mut state = master::init_joint(&scenario.eta, &scenario.gen)?;

    let n_obs = scenario.observables.len();
    let mut result = TrajectoryResult {
        times: Vec::with_capacity(steps.n_samples()),
        observables: vec![Vec::with_capacity(steps.n_samples()); n_obs],
        trace_drift: Vec::with_capacity(steps.n_samples()),
        min_eigenvalue: Vec::with_capacity(steps.n_samples()),
        record: MeasurementRecord {
            kind: measurement,
            dt: steps.dt,
            n_steps: steps.n_steps,
            data: match measurement {
                Measurement::Homodyne => RecordData::Homodyne(Vec::with_capacity(steps.n_steps)),
                Measurement::Counting => RecordData::Counting(Vec::new()),
            },
        },
        diagnostics: Diagnostics { min_eigenvalue: f64::INFINITY, ..Default::default() },
        final_state: state.clone(),
    };

    let sample = |state: &JointState, window_drift: f64, result: &mut TrajectoryResult| {
        result.times.push(state.t);
        for (i, (_, x)) in scenario.observables.iter().enumerate() {
            result.observables[i].push(master::cmp_expectation(state, x).re);
        }
        result.trace_drift.push(window_drift);
        let min_eig = state.min_eigenvalue();
        result.min_eigenvalue.push(min_eig);
        result.diagnostics.min_eigenvalue = result.diagnostics.min_eigenvalue.min(min_eig);
    };
    sample(&state, 0.0, &mut result);

    let mut window_drift = 0.0f64;
    for step in 0..steps.n_steps {
        let drift = match measurement {
            Measurement::Homodyne => {
                let (noise, replay) = match &mut drive {
                    Drive::Generate(rng) => (Some(rng.sample::<f64, _>(StandardNormal)), None),
                    Drive::ReplayHomodyne(dy) => (None, Some(dy[step])),
                    Drive::ReplayCounting(_) => unreachable!("drive matches measurement"),
                };
                let (dy, drift) = homodyne_step_inner(
                    &mut state,
                    &cascade,
                    steps.dt,
                    noise,
                    replay,
                    settings.max_step_drift,
                )?;
                if let RecordData::Homodyne(data) = &mut result.record.data {
                    data.push(dy);
                }
                drift
            }
            Measurement::Counting => {
                let (uniform, replay) = match &mut drive {
                    Drive::Generate(rng) => (Some(rng.random::<f64>()), None),
                    Drive::ReplayCounting(flags) => (None, Some(flags[step])),
                    Drive::ReplayHomodyne(_) => unreachable!("drive matches measurement"),
                };
                let (jumped, drift) = counting_step_inner(
                    &mut state,
                    &cascade,
                    steps.dt,
                    uniform,
                    replay,
                    settings.eps_nu,
                    settings.max_step_drift,
                )?;
                if jumped {
                    result.diagnostics.jump_count += 1;
                    if let RecordData::Counting(times) = &mut result.record.data {
                        times.push((step + 1) as f64 * steps.dt);
                    }
                }
                drift
            }
        };
        // the state clock must match the record stamps exactly
        state.t = (step + 1) as f64 * steps.dt;
        window_drift = window_drift.max(drift);
        result.diagnostics.max_pre_renorm_drift =
            result.diagnostics.max_pre_renorm_drift.max(drift);
        if (step + 1) % steps.output_every == 0 {
            sample(&state, window_drift, &mut result);
            window_drift = 0.0;
        }
    }
    result.diagnostics.final_purity = state.purity();
    result.final_state = state;
    Ok(result)
}

/// Run one trajectory with the counter-based stream `(master_seed, stream)`.
///
/// Streams are independent, so ensembles assign one stream per trajectory
/// index and are reproducible regardless of scheduling.
pub fn run_trajectory_stream(
    scenario: &Scenario,
    measurement: Measurement,
    settings: &TrajectorySettings,
    master_seed: u64,
    stream: u64,
) -> Result<TrajectoryResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    run_conditioned(scenario, measurement, settings, Drive::Generate(rng))
}

/// Run one self-contained trajectory; deterministic in `seed`.
pub fn run_trajectory(
    scenario: &Scenario,
    measurement: Measurement,
    settings: &TrajectorySettings,
    seed: u64,
) -> Result<TrajectoryResult> {
    run_trajectory_stream(scenario, measurement, settings, seed, 0)
}

/// Re-run the filter driven by an external record (no noise generation).
///
/// Replaying a record produced by [`run_trajectory`] under the same scenario
/// and settings reproduces that trajectory exactly.
pub fn filter_replay(
    scenario: &Scenario,
    settings: &TrajectorySettings,
    record: &MeasurementRecord,
) -> Result<TrajectoryResult> {
    let steps = settings.steps;
    if (record.dt - steps.dt).abs() > 1e-12 * steps.dt {
        return Err(Error::RecordMismatch(format!(
            "record dt = {} but configured dt = {}",
            record.dt, steps.dt
        )));
    }
    if record.n_steps != steps.n_steps {
        return Err(Error::RecordMismatch(format!(
            "record has {} steps but the run is configured for {}",
            record.n_steps, steps.n_steps
        )));
    }
    match &record.data {
        RecordData::Homodyne(dy) => {
            run_conditioned(scenario, Measurement::Homodyne, settings, Drive::ReplayHomodyne(dy))
        }
        RecordData::Counting(_) => {
            let mut flags = vec![false; steps.n_steps];
            for idx in record.jump_steps()? {
                if flags[idx] {
                    return Err(Error::RecordMismatch(format!("duplicate jump in step {idx}")));
                }
                flags[idx] = true;
            }
            run_conditioned(scenario, Measurement::Counting, settings, Drive::ReplayCounting(flags))
        }
    }
}

/// The D×D grid of conditional system blocks `Π_t`; shared by both
/// unravellings.
pub fn filter_blocks(state: &JointState) -> BlockMatrix {
    operators::matrix_entries(&state.rho, state.layout)
}

/// Homodyne rate `λ_t = tr{ϱ(L~ + L~*)}` from the joint state.
pub fn homodyne_rate(state: &JointState, cascade: &SlhTriple) -> f64 {
    let l = cascade.l_at(state.t);
    ((&l * &state.rho).trace() + (&state.rho * l.adjoint()).trace()).re
}

/// Counting rate `ν_t = tr{ϱ L~*L~}` from the joint state.
pub fn counting_rate(state: &JointState, cascade: &SlhTriple) -> f64 {
    let l = cascade.l_at(state.t);
    (&l * &state.rho * l.adjoint()).trace().re
}

/// `λ_t` assembled from the conditional block matrices of the bare system:
/// `tr{Π(L + L*) + R Π(S) + Π(S*) R*}`.
pub fn homodyne_rate_blocks(state: &JointState, sys: &SlhTriple, gen: &CmpGenerator) -> f64 {
    let t = state.t;
    let (s, l) = (sys.s_at(t), sys.l_at(t));
    let r = gen.r_at(t);
    let pi = |x: &CMatrix| master::upsilon_matrix(state, x);
    let term = pi(&(&l + l.adjoint())) + &r * pi(&s) + pi(&s.adjoint()) * r.adjoint();
    term.trace().re
}

/// `ν_t` assembled from the conditional block matrices of the bare system:
/// `tr{Π(L*L) + R Π(L*S) + Π(S*L) R* + R Π(I) R*}`.
pub fn counting_rate_blocks(state: &JointState, sys: &SlhTriple, gen: &CmpGenerator) -> f64 {
    let t = state.t;
    let (s, l) = (sys.s_at(t), sys.l_at(t));
    let ld = l.adjoint();
    let r = gen.r_at(t);
    let rd = r.adjoint();
    let pi = |x: &CMatrix| master::upsilon_matrix(state, x);
    let term = pi(&(&ld * &l))
        + &r * pi(&(&ld * &s))
        + pi(&(s.adjoint() * &l)) * &rd
        + &r * pi(&operators::identity(sys.dim())) * &rd;
    term.trace().re
}

/// Largest unconditional jump intensity `max_t tr{ϱ̄_t L~*L~}` from a
/// deterministic pre-run; used to validate `dt · ν̄ ≲ 0.05` before counting
/// runs so Bernoulli thinning stays a faithful Poisson approximation.
pub fn counting_intensity_bound(scenario: &Scenario, steps: &Steps) -> Result<f64> {
    let cascade = slh::cascade(&scenario.sys, &scenario.gen.aux_triple())?;
    let mut state = master::init_joint(&scenario.eta, &scenario.gen)?;
    let mut max_nu = counting_rate(&state, &cascade);
    for step in 0..steps.n_steps {
        state.rho = master::rk4_step(&cascade, &state.rho, state.t, steps.dt);
        state.t = (step + 1) as f64 * steps.dt;
        if (step + 1) % steps.output_every == 0 {
            max_nu = max_nu.max(counting_rate(&state, &cascade));
        }
    }
    Ok(max_nu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{basis_vector, distance, projector};
    use crate::quadrature::UniformGrid;
    use crate::slh::test_support::random_source;
    use crate::wavepacket::{WavePacket, EPS_W};

    fn gauss_grid() -> UniformGrid {
        UniformGrid::new(13.0, 10_000)
    }

    fn single_photon_scenario(kappa: f64) -> Scenario {
        let packet = WavePacket::gaussian(6.0, 1.0).unwrap();
        let gen = CmpGenerator::single_photon(&packet, &gauss_grid(), EPS_W).unwrap();
        Scenario::new(
            SlhTriple::two_level_atom(kappa),
            gen,
            basis_vector(2, 1),
            vec![("excitation".into(), projector(2, 0))],
        )
        .unwrap()
    }

    fn settings(t_max: f64, n_steps: usize, every: usize) -> TrajectorySettings {
        TrajectorySettings::new(Steps::for_horizon(t_max, n_steps, every).unwrap())
    }

    #[test]
    fn passive_state_sees_pure_noise() {
        // L = 0, S = I, R = 0: the state never moves and dY = dW.
        let scenario = Scenario::new(
            SlhTriple::trivial(2),
            CmpGenerator::vacuum(),
            basis_vector(2, 0),
            vec![("p0".into(), projector(2, 0))],
        )
        .unwrap();
        let settings = settings(1.0, 200, 200);
        let result = run_trajectory(&scenario, Measurement::Homodyne, &settings, 5).unwrap();
        let rho0 = master::init_joint(&scenario.eta, &scenario.gen).unwrap().rho;
        assert!(distance(&result.final_state.rho, &rho0) < 1e-12);
        // increments reproduce the raw noise stream
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        rng.set_stream(0);
        if let RecordData::Homodyne(dy) = &result.record.data {
            let sqrt_dt = settings.steps.dt.sqrt();
            for v in dy.iter().take(20) {
                let expected = 0.0 + sqrt_dt * rng.sample::<f64, _>(StandardNormal);
                assert_eq!(*v, expected);
            }
        } else {
            panic!("homodyne record expected");
        }
    }

    #[test]
    fn increment_mean_is_rate_times_dt() {
        // Monte Carlo mean of dY at a fixed state.
        let scenario = single_photon_scenario(1.0);
        let cascade = slh::cascade(&scenario.sys, &scenario.gen.aux_triple()).unwrap();
        let state0 = master::init_joint(&scenario.eta, &scenario.gen).unwrap();
        let dt = 1e-3;
        let lambda = homodyne_rate(&state0, &cascade);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20_000usize;
        let mut sum = 0.0;
        for _ in 0..n {
            let mut state = state0.clone();
            sum += homodyne_step(&mut state, &cascade, dt, rng.sample(StandardNormal)).unwrap();
        }
        let mean = sum / n as f64;
        let sigma = dt.sqrt() / (n as f64).sqrt();
        assert!(
            (mean - lambda * dt).abs() < 3.0 * sigma,
            "mean {mean:e}, expected {:e} ± {:e}",
            lambda * dt,
            3.0 * sigma
        );
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let scenario = single_photon_scenario(0.8);
        let settings = settings(13.0, 2_000, 100);
        for measurement in [Measurement::Homodyne, Measurement::Counting] {
            let a = run_trajectory(&scenario, measurement, &settings, 42).unwrap();
            let b = run_trajectory(&scenario, measurement, &settings, 42).unwrap();
            assert_eq!(a.record, b.record);
            assert_eq!(a.observables, b.observables);
            assert!(a.final_state.rho == b.final_state.rho);
        }
    }

    #[test]
    fn replay_reproduces_trajectory_exactly() {
        let scenario = single_photon_scenario(1.0);
        let settings = settings(13.0, 2_000, 100);
        for measurement in [Measurement::Homodyne, Measurement::Counting] {
            let original = run_trajectory(&scenario, measurement, &settings, 7).unwrap();
            let replayed = filter_replay(&scenario, &settings, &original.record).unwrap();
            assert_eq!(original.observables, replayed.observables);
            assert!(original.final_state.rho == replayed.final_state.rho);
            assert_eq!(original.diagnostics.jump_count, replayed.diagnostics.jump_count);
        }
    }

    #[test]
    fn replay_round_trips_through_text() {
        let scenario = single_photon_scenario(1.0);
        let settings = settings(13.0, 2_000, 100);
        // homodyne
        let original = run_trajectory(&scenario, Measurement::Homodyne, &settings, 3).unwrap();
        let mut buf = Vec::new();
        original.record.write_to(&mut buf).unwrap();
        let parsed = MeasurementRecord::read_homodyne(buf.as_slice()).unwrap();
        assert_eq!(parsed, original.record);
        let replayed = filter_replay(&scenario, &settings, &parsed).unwrap();
        assert!(original.final_state.rho == replayed.final_state.rho);
        // counting
        let original = run_trajectory(&scenario, Measurement::Counting, &settings, 3).unwrap();
        let mut buf = Vec::new();
        original.record.write_to(&mut buf).unwrap();
        let parsed = MeasurementRecord::read_counting(
            buf.as_slice(),
            settings.steps.dt,
            settings.steps.n_steps,
        )
        .unwrap();
        assert_eq!(parsed, original.record);
        let replayed = filter_replay(&scenario, &settings, &parsed).unwrap();
        assert!(original.final_state.rho == replayed.final_state.rho);
    }

    #[test]
    fn replay_of_foreign_record_stays_valid() {
        let scenario = single_photon_scenario(1.0);
        let settings = settings(13.0, 2_000, 100);
        let foreign = run_trajectory(&scenario, Measurement::Homodyne, &settings, 99).unwrap();
        let replayed = filter_replay(&scenario, &settings, &foreign.record).unwrap();
        for i in 0..replayed.times.len() {
            // trace is renormalized each step; drift stays at rounding level
            assert!(replayed.trace_drift[i] < 1e-9);
            // Euler-Maruyama wobbles the spectrum by O(λ² dW²) per step
            assert!(replayed.min_eigenvalue[i] > -0.5);
        }
    }

    #[test]
    fn replay_rejects_grid_mismatch() {
        let scenario = single_photon_scenario(1.0);
        let good = settings(13.0, 2_000, 100);
        let record = run_trajectory(&scenario, Measurement::Homodyne, &good, 1).unwrap().record;
        let bad = settings(13.0, 1_000, 100);
        assert!(matches!(filter_replay(&scenario, &bad, &record), Err(Error::RecordMismatch(_))));
    }

    #[test]
    fn vacuum_counting_never_jumps() {
        let scenario =
            Scenario::new(SlhTriple::trivial(2), CmpGenerator::vacuum(), basis_vector(2, 0), vec![])
                .unwrap();
        let settings = settings(2.0, 400, 400);
        let result = run_trajectory(&scenario, Measurement::Counting, &settings, 17).unwrap();
        assert_eq!(result.diagnostics.jump_count, 0);
    }

    #[test]
    fn single_photon_counting_always_one_jump() {
        let packet = WavePacket::gaussian(6.0, 1.0).unwrap();
        let gen = CmpGenerator::single_photon(&packet, &gauss_grid(), EPS_W).unwrap();
        let scenario =
            Scenario::new(SlhTriple::trivial(1), gen, basis_vector(1, 0), vec![]).unwrap();
        let settings = settings(13.0, 5_000, 1_000);
        for seed in 0..40 {
            let result = run_trajectory(&scenario, Measurement::Counting, &settings, seed).unwrap();
            assert_eq!(result.diagnostics.jump_count, 1, "seed {seed}");
        }
    }

    #[test]
    fn conditional_identity_expectation_is_one() {
        let scenario = single_photon_scenario(1.0);
        let settings = settings(13.0, 2_000, 100);
        let result = run_trajectory(&scenario, Measurement::Homodyne, &settings, 23).unwrap();
        // renormalized at every step, so the trace is 1 at every sample
        let last = &result.final_state;
        assert!((last.trace().re - 1.0).abs() < 1e-13);
        assert!(result.trace_drift.iter().all(|d| *d < 1e-9));
    }

    #[test]
    fn rates_agree_between_joint_and_block_form() {
        // λ and ν computed from the cascade coupling versus the block
        // matrices of the bare system at conditioned states.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let scenario = single_photon_scenario(1.2);
        let cascade = slh::cascade(&scenario.sys, &scenario.gen.aux_triple()).unwrap();
        let mut state = master::init_joint(&scenario.eta, &scenario.gen).unwrap();
        for _ in 0..500 {
            let noise = rng.sample::<f64, _>(StandardNormal);
            homodyne_step(&mut state, &cascade, 1e-3, noise).unwrap();
        }
        let lambda_joint = homodyne_rate(&state, &cascade);
        let lambda_blocks = homodyne_rate_blocks(&state, &scenario.sys, &scenario.gen);
        assert!((lambda_joint - lambda_blocks).abs() <= 1e-10);
        let nu_joint = counting_rate(&state, &cascade);
        let nu_blocks = counting_rate_blocks(&state, &scenario.sys, &scenario.gen);
        assert!((nu_joint - nu_blocks).abs() <= 1e-10);

        // and with a generic constant source on three levels
        let aux = random_source(&mut rng, 3);
        let gen = CmpGenerator::custom(
            basis_vector(3, 0),
            crate::slh::OperatorFn::constant(aux.l_at(0.0)),
            crate::slh::OperatorFn::constant(aux.h_at(0.0)),
        )
        .unwrap();
        let scenario2 =
            Scenario::new(SlhTriple::two_level_atom(0.7), gen, basis_vector(2, 0), vec![]).unwrap();
        let cascade2 = slh::cascade(&scenario2.sys, &scenario2.gen.aux_triple()).unwrap();
        let mut state2 = master::init_joint(&scenario2.eta, &scenario2.gen).unwrap();
        for _ in 0..200 {
            let noise = rng.sample::<f64, _>(StandardNormal);
            homodyne_step(&mut state2, &cascade2, 1e-3, noise).unwrap();
        }
        let l1 = homodyne_rate(&state2, &cascade2);
        let l2 = homodyne_rate_blocks(&state2, &scenario2.sys, &scenario2.gen);
        assert!((l1 - l2).abs() <= 1e-10);
        let n1 = counting_rate(&state2, &cascade2);
        let n2 = counting_rate_blocks(&state2, &scenario2.sys, &scenario2.gen);
        assert!((n1 - n2).abs() <= 1e-10);
    }

    #[test]
    fn innovations_are_standard_wiener() {
        // per-step innovations dY − λdt collected over an ensemble must be
        // zero-mean with variance dt
        let scenario = single_photon_scenario(1.0);
        let cascade = slh::cascade(&scenario.sys, &scenario.gen.aux_triple()).unwrap();
        let dt = 6.5e-3;
        let n_steps = 2_000usize;
        let n_traj = 50usize;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut sum = 0.0f64;
        let mut sum_sq = 0.0f64;
        for _ in 0..n_traj {
            let mut state = master::init_joint(&scenario.eta, &scenario.gen).unwrap();
            for _ in 0..n_steps {
                let lambda = homodyne_rate(&state, &cascade);
                let dy =
                    homodyne_step(&mut state, &cascade, dt, rng.sample(StandardNormal)).unwrap();
                let innovation = dy - lambda * dt;
                sum += innovation;
                sum_sq += innovation * innovation;
            }
        }
        let count = (n_traj * n_steps) as f64;
        let mean = sum / count;
        // Var(mean of N innovations) = dt/N
        assert!(
            mean.abs() < 3.0 * (dt / count).sqrt(),
            "innovation mean {mean:e} vs band {:e}",
            3.0 * (dt / count).sqrt()
        );
        let var = sum_sq / count;
        assert!(
            (var - dt).abs() < 3.0 * (2.0 / count).sqrt() * dt,
            "innovation variance {var:e} vs dt = {dt:e}"
        );
    }

    #[test]
    fn mean_jump_count_matches_deterministic_intensity_integral() {
        // ensemble mean of the number of clicks equals ∫ tr{ϱ̄ L~*L~} dt
        let scenario = single_photon_scenario(1.0);
        let cascade = slh::cascade(&scenario.sys, &scenario.gen.aux_triple()).unwrap();
        let steps = Steps::for_horizon(13.0, 5_000, 1).unwrap();
        let mut state = master::init_joint(&scenario.eta, &scenario.gen).unwrap();
        let mut nu_bar = vec![counting_rate(&state, &cascade)];
        for step in 0..steps.n_steps {
            state.rho = master::rk4_step(&cascade, &state.rho, state.t, steps.dt);
            state.t = (step + 1) as f64 * steps.dt;
            nu_bar.push(counting_rate(&state, &cascade));
        }
        let expected = crate::quadrature::integrate(&nu_bar, steps.dt);
        // single photon in, so exactly one quantum leaves: the integral is 1
        assert!((expected - 1.0).abs() < 1e-6, "intensity integral {expected}");

        let settings = TrajectorySettings::new(Steps::for_horizon(13.0, 5_000, 5_000).unwrap());
        let n_traj = 100u64;
        let mut total = 0usize;
        let mut total_sq = 0.0f64;
        for seed in 0..n_traj {
            let r = run_trajectory_stream(&scenario, Measurement::Counting, &settings, 5, seed)
                .unwrap();
            total += r.diagnostics.jump_count;
            total_sq += (r.diagnostics.jump_count as f64).powi(2);
        }
        let mean = total as f64 / n_traj as f64;
        let var = total_sq / n_traj as f64 - mean * mean;
        let band = 3.0 * (var.max(1e-6) / n_traj as f64).sqrt();
        assert!(
            (mean - expected).abs() <= band,
            "mean jumps {mean} vs integral {expected} ± {band}"
        );
    }

    #[test]
    fn filter_blocks_reassemble() {
        let scenario = single_photon_scenario(1.0);
        let state = master::init_joint(&scenario.eta, &scenario.gen).unwrap();
        let blocks = filter_blocks(&state);
        assert_eq!(blocks.reassemble(), state.rho);
    }

    #[test]
    fn purity_is_preserved_at_fine_steps() {
        // pure initial states stay pure up to integrator error; at dt = 1e-5
        // the defect stays within 1e-6 per unit time for both unravellings
        let scenario = single_photon_scenario(1.0);
        let t_max = 0.5;
        let settings = settings(t_max, 50_000, 50_000);
        for (measurement, seed) in [(Measurement::Homodyne, 2u64), (Measurement::Counting, 3)] {
            let result = run_trajectory(&scenario, measurement, &settings, seed).unwrap();
            let defect = (1.0 - result.diagnostics.final_purity).abs();
            assert!(defect < 1e-6 * t_max, "{measurement:?}: purity defect {defect:e}");
        }
    }

    #[test]
    fn intensity_bound_flags_coarse_steps() {
        let packet = WavePacket::gaussian(6.0, 1.0).unwrap();
        let gen = CmpGenerator::single_photon(&packet, &gauss_grid(), EPS_W).unwrap();
        let scenario =
            Scenario::new(SlhTriple::trivial(1), gen, basis_vector(1, 0), vec![]).unwrap();
        let steps = Steps::for_horizon(13.0, 1_000, 10).unwrap();
        let max_nu = counting_intensity_bound(&scenario, &steps).unwrap();
        // peak gaussian emission rate √(2/π e)/σ ≈ 0.48 at the packet center
        assert!(max_nu > 0.2 && max_nu < 3.0, "max_nu = {max_nu}");
        assert!(max_nu * steps.dt < 0.05);
    }
}
