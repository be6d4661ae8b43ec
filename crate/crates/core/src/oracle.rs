//! Closed-form solutions for the photon sources, used as ground truth.
//!
//! The ladder source admits explicit solutions: the top-level amplitude is
//! `√w_1(t)`, and the level reached after `j` emissions carries squared norm
//!
//! ```text
//! p_{n-j}(t) = w_{j+1}(t) · I_j(t) / ∏_{k=1..j} N_k
//! I_j(t)     = ∫_0^t |ξ_j(s_j)|² ∫_0^{s_j} |ξ_{j-1}|² … ∫_0^{s_2} |ξ_1|² ds_1 … ds_j
//! ```
//!
//! evaluated here by iterated quadrature, independent of any differential
//! equation solve. The squared norm of the unnormalized time-ordered
//! n-photon integral equals `∏_{k=1}^{n-1} N_k`, which pins the norm
//! constants produced by the weight recursion.

use crate::master::{self, Steps};
use crate::operators;
use crate::quadrature::{self, UniformGrid};
use crate::slh::SlhTriple;
use crate::wavepacket::{compute_weights, CmpGenerator, WavePacket, EPS_W};
use crate::{Error, Result, Scenario};

/// Populations of the source levels over time, from the closed forms.
#[derive(Clone, Debug)]
pub struct PopulationCurves {
    pub times: Vec<f64>,
    /// `p[i]` is the population of basis index `i` (level `n − i`).
    pub p: Vec<Vec<f64>>,
}

/// Evaluate the closed-form level populations on the grid.
pub fn populations(packets: &[WavePacket], grid: &UniformGrid) -> Result<PopulationCurves> {
    let n = packets.len();
    let table = compute_weights(packets, grid, EPS_W)?;
    let dt = grid.dt();
    let times: Vec<f64> = grid.times().collect();
    let len = times.len();

    let mut p = vec![vec![0.0; len]; n + 1];
    for i in 0..len {
        p[0][i] = table.w_at_grid_point(1, i);
    }

    // iterated simplex integrals I_j on the grid
    let mut inner = vec![1.0; len]; // I_0 ≡ 1
    let mut norm_prod = 1.0;
    for j in 1..=n {
        let integrand: Vec<f64> =
            times.iter().enumerate().map(|(i, &t)| packets[j - 1].abs2(t) * inner[i]).collect();
        inner = quadrature::cumulative_monotone(&integrand, dt);
        norm_prod *= table.norm_const(j);
        for i in 0..len {
            p[j][i] = (table.w_at_grid_point(j + 1, i) * inner[i] / norm_prod).clamp(0.0, 1.0);
        }
    }
    Ok(PopulationCurves { times, p })
}

/// Both sides of the time-ordered norm identity.
#[derive(Clone, Copy, Debug)]
pub struct NormIdentity {
    /// Direct simplex quadrature of the unnormalized state's norm.
    pub lhs: f64,
    /// `∏_{k=1}^{n-1} √N_k` from the weight recursion.
    pub rhs: f64,
    pub residual: f64,
}

/// Check the norm identity for up to four packets (the nested quadrature is
/// exact enough and cheap at small n; larger n is rejected).
pub fn norm_identity(packets: &[WavePacket], grid: &UniformGrid) -> Result<NormIdentity> {
    let n = packets.len();
    if n == 0 {
        return Err(Error::Config("norm_identity: need at least one packet".into()));
    }
    if n > 4 {
        return Err(Error::Unsupported(format!(
            "norm_identity: n = {n} > 4 (nested quadrature cost)"
        )));
    }
    let table = compute_weights(packets, grid, EPS_W)?;
    let dt = grid.dt();
    let identical = packets.windows(2).all(|w| w[0] == w[1]);

    let lhs_sq = if identical {
        // time-ordering collapses the simplex integral to (∫|ξ|²)ⁿ / n!
        let mass = quadrature::integrate(&grid.sample(|t| packets[0].abs2(t)), dt)
            + packets[0].tail_mass(grid.t_max()).unwrap_or(0.0);
        mass.powi(n as i32) / (1..=n).product::<usize>() as f64
    } else {
        let mut inner = vec![1.0; grid.len()];
        for packet in packets {
            let integrand: Vec<f64> = grid
                .times()
                .enumerate()
                .map(|(i, t)| packet.abs2(t) * inner[i])
                .collect();
            inner = quadrature::cumulative_monotone(&integrand, dt);
        }
        *inner.last().unwrap()
    };
    let lhs = lhs_sq.sqrt();
    let rhs = if n == 1 { 1.0 } else { table.norm_const_product().sqrt() };
    Ok(NormIdentity { lhs, rhs, residual: (lhs - rhs).abs() })
}

/// Propagate the bare single-photon source and compare its populations
/// against `(w(t), ∫_0^t |ξ|²)` at every output sample; returns the largest
/// deviation.
pub fn single_photon_state_check(
    packet: &WavePacket,
    grid: &UniformGrid,
    steps: &Steps,
) -> Result<f64> {
    let gen = CmpGenerator::single_photon(packet, grid, EPS_W)?;
    let table = compute_weights(std::slice::from_ref(packet), grid, EPS_W)?;
    let emitted_mass = quadrature::cumulative_monotone(&grid.sample(|t| packet.abs2(t)), grid.dt());
    let scenario = Scenario::new(
        SlhTriple::trivial(1),
        gen,
        operators::basis_vector(1, 0),
        vec![],
    )?;
    let result = master::run_master(&scenario, steps)?;
    let mut max_dev = 0.0f64;
    for (i, &t) in result.times.iter().enumerate() {
        let up = result.aux_populations[0][i];
        let down = result.aux_populations[1][i];
        let idx = grid.floor_index(t);
        max_dev = max_dev.max((up - table.w_value(1, t)).abs());
        max_dev = max_dev.max((down - emitted_mass[idx]).abs());
    }
    Ok(max_dev)
}
