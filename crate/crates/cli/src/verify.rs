//! Built-in verification suite: closed-form identities of the photon
//! sources and the cascade drift identity, reported as a residual table.

use anyhow::bail;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use cmptraj::master::{run_master, Steps};
use cmptraj::operators::basis_vector;
use cmptraj::oracle;
use cmptraj::quadrature::{self, UniformGrid};
use cmptraj::slh::{lindblad_identity_residual, SlhTriple};
use cmptraj::wavepacket::{compute_weights, CmpGenerator, WavePacket, EPS_W};
use cmptraj::{CMatrix, Complex64, Scenario};

#[derive(Clone, Debug, Serialize)]
pub struct VerifyCheck {
    pub name: String,
    pub value: f64,
    pub expected: f64,
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
}

impl VerifyCheck {
    fn new(name: impl Into<String>, value: f64, expected: f64, tol: f64) -> Self {
        let residual = (value - expected).abs();
        Self { name: name.into(), value, expected, residual, tol, pass: residual <= tol }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<VerifyCheck>,
    pub pass: bool,
}

fn random_matrix(rng: &mut ChaCha8Rng, dim: usize) -> CMatrix {
    CMatrix::from_fn(dim, dim, |_, _| {
        Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    })
}

fn random_hermitian(rng: &mut ChaCha8Rng, dim: usize) -> CMatrix {
    let m = random_matrix(rng, dim);
    (&m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Run the identity suite for identical Gaussian pulses up to `n_max`
/// photons.
pub fn run_verify(n_max: usize) -> anyhow::Result<VerifyReport> {
    if n_max == 0 || n_max > 4 {
        bail!("--n must be between 1 and 4 (nested quadrature cost grows with n)");
    }
    let packet = WavePacket::gaussian(6.0, 1.0).map_err(|e| anyhow::anyhow!("{e}"))?;
    let grid = UniformGrid::new(13.0, 10_000);
    let mut checks = Vec::new();

    for n in 1..=n_max {
        let packets = vec![packet.clone(); n];
        let table = compute_weights(&packets, &grid, EPS_W)
            .map_err(|e| anyhow::anyhow!("weights (n = {n}): {e}"))?;

        if n >= 2 {
            let factorial: usize = (1..=n).product();
            checks.push(VerifyCheck::new(
                format!("product of norm constants vs 1/{n}! (n = {n})"),
                table.norm_const_product(),
                1.0 / factorial as f64,
                1e-6,
            ));
            let id = oracle::norm_identity(&packets, &grid)
                .map_err(|e| anyhow::anyhow!("norm identity (n = {n}): {e}"))?;
            checks.push(VerifyCheck::new(
                format!("time-ordered state norm: quadrature vs recursion (n = {n})"),
                id.lhs,
                id.rhs,
                1e-6,
            ));
        }
        if n == 2 {
            checks.push(VerifyCheck::new(
                "first norm constant for an identical pair vs 1/2",
                table.norm_const(1),
                0.5,
                1e-8,
            ));
        }

        // exp(-1/2 \int |lambda_j|^2) = sqrt(w_j)
        for j in 1..=n {
            let rate2: Vec<f64> =
                grid.times().map(|t| table.lambda_clamped(j, t).norm_sqr()).collect();
            let acc = quadrature::cumulative(&rate2, grid.dt());
            let mut max_rel = 0.0f64;
            for (i, _) in grid.times().enumerate() {
                let w = table.w_at_grid_point(j, i);
                if w < 1e-6 {
                    break;
                }
                max_rel = max_rel.max(((-0.5 * acc[i]).exp() - w.sqrt()).abs() / w.sqrt());
            }
            checks.push(VerifyCheck::new(
                format!("emission-rate integral reproduces weight w_{j} (n = {n})"),
                max_rel,
                0.0,
                1e-6,
            ));
        }
    }

    // closed-form populations against the propagated source
    let n_pop = n_max.min(3).max(1);
    let packets = vec![packet.clone(); n_pop];
    let curves = oracle::populations(&packets, &grid).map_err(|e| anyhow::anyhow!("{e}"))?;
    let gen = CmpGenerator::n_photon(&packets, &grid, EPS_W).map_err(|e| anyhow::anyhow!("{e}"))?;
    let scenario = Scenario::new(SlhTriple::trivial(1), gen, basis_vector(1, 0), vec![])
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let steps = Steps::for_horizon(grid.t_max(), 10_000, 100).map_err(|e| anyhow::anyhow!("{e}"))?;
    let result = run_master(&scenario, &steps).map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut max_dev = 0.0f64;
    for s in 0..result.times.len() {
        for level in 0..=n_pop {
            max_dev =
                max_dev.max((result.aux_populations[level][s] - curves.p[level][100 * s]).abs());
        }
    }
    checks.push(VerifyCheck::new(
        format!("closed-form populations vs propagated source (n = {n_pop})"),
        max_dev,
        0.0,
        1e-6,
    ));

    // single-photon exact solution for a decaying exponential
    let exp_packet =
        WavePacket::decaying_exponential(1.0).map_err(|e| anyhow::anyhow!("{e}"))?;
    let exp_grid = UniformGrid::new(21.0, 10_000);
    let exp_steps = Steps::for_horizon(21.0, 10_000, 100).map_err(|e| anyhow::anyhow!("{e}"))?;
    let dev = oracle::single_photon_state_check(&exp_packet, &exp_grid, &exp_steps)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    checks.push(VerifyCheck::new(
        "single-photon survival matches exp(-t) exactly",
        dev,
        0.0,
        1e-7,
    ));

    // cascade drift identity on random draws
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let dim_sys = rng.random_range(2..=4);
        let dim_aux = rng.random_range(1..=4);
        let sys = SlhTriple::constant(
            random_matrix(&mut rng, dim_sys).qr().q(),
            random_matrix(&mut rng, dim_sys),
            random_hermitian(&mut rng, dim_sys),
        )
        .map_err(|e| anyhow::anyhow!("{e}"))?;
        let aux = SlhTriple::passive(
            random_matrix(&mut rng, dim_aux),
            random_hermitian(&mut rng, dim_aux),
        )
        .map_err(|e| anyhow::anyhow!("{e}"))?;
        let x = random_hermitian(&mut rng, dim_sys);
        let a = random_hermitian(&mut rng, dim_aux);
        worst = worst.max(
            lindblad_identity_residual(&sys, &aux, &x, &a, 0.0)
                .map_err(|e| anyhow::anyhow!("{e}"))?,
        );
    }
    checks.push(VerifyCheck::new(
        "cascade drift identity over 20 random draws",
        worst,
        0.0,
        1e-10,
    ));

    let pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport { checks, pass })
}

pub fn print_report(report: &VerifyReport) {
    println!(
        "{:<58} {:>14} {:>14} {:>10} {:>8}  {}",
        "check", "value", "expected", "residual", "tol", "status"
    );
    for check in &report.checks {
        println!(
            "{:<58} {:>14.8e} {:>14.8e} {:>10.2e} {:>8.0e}  {}",
            check.name,
            check.value,
            check.expected,
            check.residual,
            check.tol,
            if check.pass { "PASS" } else { "FAIL" }
        );
    }
    println!("overall: {}", if report.pass { "PASS" } else { "FAIL" });
}
