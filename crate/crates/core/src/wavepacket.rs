//! Wavepacket shapes, the survival-weight recursion and the ladder sources
//! that write single-photon and time-ordered n-photon states onto the field.
//!
//! For packets `ξ_1 .. ξ_n` (normalized, `∫|ξ_k|² = 1`) the weights are
//!
//! ```text
//! w_{n+1}(t) = 1
//! w_k(t)     = ∫_t^∞ |ξ_k|² w_{k+1} ds / N_k,    N_k = ∫_0^∞ |ξ_k|² w_{k+1} ds
//! λ_k(t)     = ξ_k(t) √w_{k+1}(t) / (√N_k √w_k(t))
//! ```
//!
//! so that `exp(−½∫_0^t |λ_k|²) = √w_k(t)`. The n-photon source is the
//! (n+1)-level ladder with coupling `λ_k` on the k-th sub-diagonal entry,
//! started from the top level; its decay leaves exactly the time-ordered
//! n-photon state in the output field.
//!
//! Levels are ordered top-to-bottom as `|n⟩, |n−1⟩, …, |0⟩`, i.e. basis
//! index `i` is level `n − i`.

use std::sync::Arc;

use crate::operators;
use crate::quadrature::{self, UniformGrid};
use crate::slh::{OperatorFn, SlhTriple};
use crate::{CMatrix, CVector, Complex64, Error, Result};

/// Tail mass allowed beyond the grid horizon (and below t = 0).
pub const EPS_TAIL: f64 = 1e-8;
/// Default floor on `w_k` below which `λ_k` is clamped.
pub const EPS_W: f64 = 1e-8;
/// Allowed quadrature mismatch between the sampled norm and the exact norm;
/// larger deviations indicate a grid too coarse for the packet.
const NORM_QUAD_TOL: f64 = 1e-6;

/// A normalized square-integrable pulse shape on `[0, ∞)`.
#[derive(Clone, Debug, PartialEq)]
pub enum WavePacket {
    /// `ξ(t) = √γ e^{−γt/2}`
    DecayingExponential { gamma: f64 },
    /// `ξ(t) = (2πσ²)^{−1/4} exp(−(t−t₀)²/(4σ²))`; needs `t₀ ≳ 5.7σ` so the
    /// mass below `t = 0` stays within [`EPS_TAIL`].
    Gaussian { t0: f64, sigma: f64 },
    /// `ξ(t) = 1/√(t₁−t₀)` on `[t₀, t₁)`. Edges should sit on grid points;
    /// otherwise the norm check rejects the grid.
    Square { t0: f64, t1: f64 },
    /// Piecewise-linear samples `(t, ξ(t))`, rescaled to unit norm on
    /// construction.
    Tabulated { times: Vec<f64>, values: Vec<Complex64> },
}

impl WavePacket {
    pub fn decaying_exponential(gamma: f64) -> Result<Self> {
        if gamma <= 0.0 {
            return Err(Error::Config("decaying_exponential: gamma must be positive".into()));
        }
        Ok(Self::DecayingExponential { gamma })
    }

    pub fn gaussian(t0: f64, sigma: f64) -> Result<Self> {
        if sigma <= 0.0 {
            return Err(Error::Config("gaussian: sigma must be positive".into()));
        }
        let below_zero = 0.5 * libm::erfc(t0 / (sigma * std::f64::consts::SQRT_2));
        if below_zero > EPS_TAIL {
            return Err(Error::UnnormalizedPacket { mass: 1.0 - below_zero, expected: 1.0 });
        }
        Ok(Self::Gaussian { t0, sigma })
    }

    pub fn square(t0: f64, t1: f64) -> Result<Self> {
        if t0 < 0.0 || t1 <= t0 {
            return Err(Error::Config("square: need 0 <= t0 < t1".into()));
        }
        Ok(Self::Square { t0, t1 })
    }

    /// Build a tabulated packet from samples, rescaling to unit norm.
    pub fn tabulated(times: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if times.len() != values.len() || times.len() < 3 {
            return Err(Error::Config("tabulated: need at least 3 (t, value) samples".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) || times[0] < 0.0 {
            return Err(Error::Config(
                "tabulated: times must be non-negative and increasing".into(),
            ));
        }
        // norm via trapezoid on the (possibly nonuniform) sample grid
        let mut mass = 0.0;
        for i in 0..times.len() - 1 {
            let dt = times[i + 1] - times[i];
            mass += 0.5 * dt * (values[i].norm_sqr() + values[i + 1].norm_sqr());
        }
        if mass <= 0.0 {
            return Err(Error::UnnormalizedPacket { mass, expected: 1.0 });
        }
        let scale = Complex64::new(1.0 / mass.sqrt(), 0.0);
        Ok(Self::Tabulated { times, values: values.into_iter().map(|v| v * scale).collect() })
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        if t < 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        match self {
            Self::DecayingExponential { gamma } => {
                Complex64::new(gamma.sqrt() * (-0.5 * gamma * t).exp(), 0.0)
            }
            Self::Gaussian { t0, sigma } => {
                let amp = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-0.25);
                let arg = -(t - t0) * (t - t0) / (4.0 * sigma * sigma);
                Complex64::new(amp * arg.exp(), 0.0)
            }
            Self::Square { t0, t1 } => {
                // mean-of-limits at the edges so node-aligned jumps integrate
                // exactly under composite Simpson
                let amp = 1.0 / (t1 - t0).sqrt();
                let edge_tol = 1e-12 * t1.abs().max(1.0);
                if *t0 > 0.0 && (t - t0).abs() <= edge_tol || (t - t1).abs() <= edge_tol {
                    Complex64::new(amp * std::f64::consts::FRAC_1_SQRT_2, 0.0)
                } else if t >= *t0 && t < *t1 {
                    Complex64::new(amp, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
            Self::Tabulated { times, values } => {
                if t < times[0] || t > *times.last().unwrap() {
                    return Complex64::new(0.0, 0.0);
                }
                let i = match times.binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
                    Ok(i) => return values[i],
                    Err(i) => i - 1,
                };
                let s = (t - times[i]) / (times[i + 1] - times[i]);
                values[i] * Complex64::new(1.0 - s, 0.0) + values[i + 1] * Complex64::new(s, 0.0)
            }
        }
    }

    pub fn abs2(&self, t: f64) -> f64 {
        self.eval(t).norm_sqr()
    }

    /// Exact tail mass `∫_t^∞ |ξ|²` when a closed form exists.
    pub fn tail_mass(&self, t: f64) -> Option<f64> {
        match self {
            Self::DecayingExponential { gamma } => Some((-gamma * t).exp()),
            Self::Gaussian { t0, sigma } => {
                Some(0.5 * libm::erfc((t - t0) / (sigma * std::f64::consts::SQRT_2)))
            }
            Self::Square { t0, t1 } => {
                if t <= *t0 {
                    Some(1.0)
                } else if t >= *t1 {
                    Some(0.0)
                } else {
                    Some((t1 - t) / (t1 - t0))
                }
            }
            Self::Tabulated { .. } => None,
        }
    }
}

/// Survival weights `w_k`, their norm constants and the emission rates
/// `λ_k` of a packet list, sampled on a uniform grid.
#[derive(Clone, Debug)]
pub struct WeightTable {
    grid: UniformGrid,
    packets: Vec<WavePacket>,
    /// `w[k-1]` holds `w_k` on the grid, k = 1..=n. `w_{n+1} ≡ 1`.
    w: Vec<Vec<f64>>,
    /// exact derivatives `w_k' = −|ξ_k|² w_{k+1} / N_k` for interpolation
    wdot: Vec<Vec<f64>>,
    /// `N_k = ∫_0^∞ |ξ_k|² w_{k+1}`, k = 1..=n (`N_n ≈ 1` by normalization)
    norm_consts: Vec<f64>,
    eps_w: f64,
    /// per k: last grid index with `w_k ≥ eps_w` and the scale factor
    /// `√w_{k+1}/(√N_k √w_k)` frozen there
    clamp_index: Vec<usize>,
    clamp_factor: Vec<f64>,
}

/// Compute the weight recursion for `packets` on `grid`.
///
/// Fails if a packet is not normalized on the grid within quadrature
/// tolerance (which also catches grids too coarse to resolve a packet) or if
/// its tail mass beyond the horizon exceeds [`EPS_TAIL`].
pub fn compute_weights(
    packets: &[WavePacket],
    grid: &UniformGrid,
    eps_w: f64,
) -> Result<WeightTable> {
    let n = packets.len();
    if n == 0 {
        return Err(Error::Config("compute_weights: need at least one packet".into()));
    }
    let dt = grid.dt();

    // normalization / tail / resolution checks per packet
    for packet in packets {
        let mass = quadrature::integrate(&grid.sample(|t| packet.abs2(t)), dt);
        let tail = packet.tail_mass(grid.t_max()).unwrap_or(0.0);
        if tail > EPS_TAIL {
            return Err(Error::GridTooCoarse(format!(
                "packet tail mass {tail:e} beyond t_max = {} exceeds {:e}",
                grid.t_max(),
                EPS_TAIL
            )));
        }
        let expected = 1.0 - tail;
        if (mass - expected).abs() > NORM_QUAD_TOL {
            return Err(Error::UnnormalizedPacket { mass, expected });
        }
    }

    let mut w = vec![Vec::new(); n];
    let mut wdot = vec![Vec::new(); n];
    let mut norm_consts = vec![0.0; n];

    // downward recursion k = n, n-1, .., 1 (vector index k-1)
    for k in (1..=n).rev() {
        let pk = &packets[k - 1];
        let integrand: Vec<f64> = if k == n {
            grid.sample(|t| pk.abs2(t))
        } else {
            let w_next = &w[k];
            grid.times().enumerate().map(|(i, t)| pk.abs2(t) * w_next[i]).collect()
        };
        let acc = quadrature::cumulative_monotone(&integrand, dt);
        let tail = if k == n { pk.tail_mass(grid.t_max()).unwrap_or(0.0) } else { 0.0 };
        let norm = acc[acc.len() - 1] + tail;
        if norm <= 0.0 {
            return Err(Error::GridTooCoarse(format!("w_{k} integrand vanishes on the grid")));
        }
        norm_consts[k - 1] = norm;
        w[k - 1] = acc.iter().map(|c| ((norm - c) / norm).max(0.0)).collect();
        wdot[k - 1] = integrand.iter().map(|f| -f / norm).collect();
    }

    let mut table = WeightTable {
        grid: *grid,
        packets: packets.to_vec(),
        w,
        wdot,
        norm_consts,
        eps_w,
        clamp_index: Vec::new(),
        clamp_factor: Vec::new(),
    };
    for k in 1..=n {
        let idx = table.w[k - 1]
            .iter()
            .rposition(|&v| v >= eps_w)
            .ok_or_else(|| Error::GridTooCoarse(format!("w_{k} below eps_w on the whole grid")))?;
        table.clamp_index.push(idx);
        table.clamp_factor.push(table.scale_factor(k, grid.time(idx), table.w[k - 1][idx]));
    }
    Ok(table)
}

impl WeightTable {
    pub fn n_packets(&self) -> usize {
        self.packets.len()
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn packets(&self) -> &[WavePacket] {
        &self.packets
    }

    pub fn eps_w(&self) -> f64 {
        self.eps_w
    }

    /// `N_k` for k = 1..=n.
    pub fn norm_const(&self, k: usize) -> f64 {
        self.norm_consts[k - 1]
    }

    /// `∏_{k=1}^{n−1} N_k`; equals `1/n!` for identical packets.
    pub fn norm_const_product(&self) -> f64 {
        self.norm_consts[..self.n_packets() - 1].iter().product()
    }

    /// `w_k(t)` for k = 1..=n+1 (`w_{n+1} ≡ 1`), interpolated off-grid.
    pub fn w_value(&self, k: usize, t: f64) -> f64 {
        assert!(k >= 1 && k <= self.n_packets() + 1, "w index out of range");
        if k == self.n_packets() + 1 {
            return 1.0;
        }
        quadrature::hermite_interpolate(&self.grid, &self.w[k - 1], &self.wdot[k - 1], t)
            .clamp(0.0, 1.0)
    }

    /// `w_k` at grid point `i` (no interpolation).
    pub fn w_at_grid_point(&self, k: usize, i: usize) -> f64 {
        if k == self.n_packets() + 1 {
            1.0
        } else {
            self.w[k - 1][i]
        }
    }

    fn scale_factor(&self, k: usize, t: f64, wk: f64) -> f64 {
        let w_next = self.w_value(k + 1, t);
        w_next.max(0.0).sqrt() / (self.norm_consts[k - 1].sqrt() * wk.sqrt())
    }

    fn lambda_raw(&self, k: usize, t: f64, wk: f64) -> Complex64 {
        self.packets[k - 1].eval(t) * Complex64::new(self.scale_factor(k, t, wk), 0.0)
    }

    /// Emission rate `λ_k(t)`. Errors with [`Error::HorizonTruncated`] once
    /// `w_k(t)` falls below the configured floor.
    pub fn lambda(&self, k: usize, t: f64) -> Result<Complex64> {
        assert!(k >= 1 && k <= self.n_packets(), "lambda index out of range");
        let wk = self.w_value(k, t);
        if wk < self.eps_w {
            return Err(Error::HorizonTruncated { k, t, floor: self.eps_w });
        }
        Ok(self.lambda_raw(k, t, wk))
    }

    /// `λ_k(t)` with the scale factor `√w_{k+1}/(√N_k √w_k)` frozen at the
    /// last grid point where `w_k ≥ eps_w`; the packet amplitude `ξ_k(t)`
    /// stays live, so the rate vanishes with the packet instead of blowing
    /// up. The truncation error is bounded by the residual excitation
    /// probability `≤ eps_w`.
    pub fn lambda_clamped(&self, k: usize, t: f64) -> Complex64 {
        assert!(k >= 1 && k <= self.n_packets(), "lambda index out of range");
        if t >= self.grid.time(self.clamp_index[k - 1]) || self.w_value(k, t) < self.eps_w {
            return self.packets[k - 1].eval(t) * Complex64::new(self.clamp_factor[k - 1], 0.0);
        }
        self.lambda_raw(k, t, self.w_value(k, t))
    }

    /// Largest residual weight at the horizon, `max_k w_k(t_max)`.
    pub fn residual_weight(&self) -> f64 {
        (1..=self.n_packets())
            .map(|k| self.w_at_grid_point(k, self.grid.n_intervals()))
            .fold(0.0, f64::max)
    }
}

/// How a generator was built.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Vacuum,
    SinglePhoton,
    NPhoton(usize),
    Custom,
}

/// The auxiliary source defining the input-field state: dimension `D`,
/// coupling `R(t)`, Hamiltonian `H_aux(t)` and initial unit vector `φ`.
///
/// The source decays into the vacuum; whatever it emits *is* the input state
/// seen by the system once the two are cascaded.
#[derive(Clone)]
pub struct CmpGenerator {
    dim: usize,
    phi: CVector,
    r: OperatorFn,
    h_aux: OperatorFn,
    provenance: Provenance,
    weights: Option<Arc<WeightTable>>,
}

impl CmpGenerator {
    /// Vacuum input: `D = 1`, `R = 0`.
    pub fn vacuum() -> Self {
        Self {
            dim: 1,
            phi: operators::basis_vector(1, 0),
            r: OperatorFn::constant(operators::zeros(1)),
            h_aux: OperatorFn::constant(operators::zeros(1)),
            provenance: Provenance::Vacuum,
            weights: None,
        }
    }

    /// Two-level source emitting one photon with shape `packet`:
    /// `R(t) = λ(t) σ₋`, started in the upper level.
    pub fn single_photon(packet: &WavePacket, grid: &UniformGrid, eps_w: f64) -> Result<Self> {
        let mut gen = Self::n_photon(std::slice::from_ref(packet), grid, eps_w)?;
        gen.provenance = Provenance::SinglePhoton;
        Ok(gen)
    }

    /// `(n+1)`-level ladder source emitting the time-ordered n-photon state
    /// with shapes `packets` (`ξ_1` emitted first).
    ///
    /// `R(t)` has `λ_{i+1}(t)` at entry `(i+1, i)` and is therefore nilpotent;
    /// `H_aux = 0`; `φ` is the top level.
    pub fn n_photon(packets: &[WavePacket], grid: &UniformGrid, eps_w: f64) -> Result<Self> {
        let n = packets.len();
        if n == 0 {
            return Err(Error::Config("n_photon: need at least one packet".into()));
        }
        let table = Arc::new(compute_weights(packets, grid, eps_w)?);
        let d = n + 1;
        let r = {
            let table = table.clone();
            OperatorFn::from_fn(move |t| {
                let mut m = operators::zeros(d);
                for i in 0..n {
                    m[(i + 1, i)] = table.lambda_clamped(i + 1, t);
                }
                m
            })
        };
        Ok(Self {
            dim: d,
            phi: operators::basis_vector(d, 0),
            r,
            h_aux: OperatorFn::constant(operators::zeros(d)),
            provenance: if n == 1 { Provenance::SinglePhoton } else { Provenance::NPhoton(n) },
            weights: Some(table),
        })
    }

    /// Source with explicit coefficients.
    pub fn custom(phi: CVector, r: OperatorFn, h_aux: OperatorFn) -> Result<Self> {
        let norm = phi.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::NotNormalized { norm });
        }
        let dim = phi.len();
        let r0 = r.at(0.0);
        let h0 = h_aux.at(0.0);
        if r0.nrows() != dim || !r0.is_square() || h0.nrows() != dim || !h0.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "generator coefficients must be {dim}x{dim}"
            )));
        }
        if !operators::is_hermitian(&h0, SlhTriple::TOL) {
            return Err(Error::InvalidOperator("H_aux(0) is not Hermitian".into()));
        }
        Ok(Self { dim, phi, r, h_aux, provenance: Provenance::Custom, weights: None })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn phi(&self) -> &CVector {
        &self.phi
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn r_at(&self, t: f64) -> CMatrix {
        self.r.at(t)
    }

    pub fn h_aux_at(&self, t: f64) -> CMatrix {
        self.h_aux.at(t)
    }

    pub fn weight_table(&self) -> Option<&WeightTable> {
        self.weights.as_deref()
    }

    /// The source as an SLH triple `(I, R(t), H_aux(t))`.
    pub fn aux_triple(&self) -> SlhTriple {
        SlhTriple::new(
            OperatorFn::constant(operators::identity(self.dim)),
            self.r.clone(),
            self.h_aux.clone(),
        )
        .expect("generator coefficients were validated at construction")
    }
}

impl std::fmt::Debug for CmpGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CmpGenerator")
            .field("dim", &self.dim)
            .field("provenance", &self.provenance)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_packet(gamma: f64) -> WavePacket {
        WavePacket::decaying_exponential(gamma).unwrap()
    }

    fn gauss_packet() -> WavePacket {
        WavePacket::gaussian(6.0, 1.0).unwrap()
    }

    fn exp_grid(gamma: f64) -> UniformGrid {
        // horizon where w = e^{-γT} ≈ 1e-9
        UniformGrid::new(9.0 * std::f64::consts::LN_10 / gamma, 10_000)
    }

    fn gauss_grid() -> UniformGrid {
        UniformGrid::new(13.0, 10_000)
    }

    #[test]
    fn exponential_weight_is_exponential() {
        let grid = exp_grid(1.3);
        let table = compute_weights(&[exp_packet(1.3)], &grid, EPS_W).unwrap();
        for &t in &[0.0, 0.5, 2.0, 7.0] {
            assert!((table.w_value(1, t) - (-1.3 * t).exp()).abs() < 1e-9, "t = {t}");
        }
        assert_eq!(table.w_value(1, 0.0), 1.0);
        assert!((table.norm_const(1) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_pair_norm_constant_is_half() {
        for packet in [exp_packet(1.0), gauss_packet()] {
            let grid = match packet {
                WavePacket::DecayingExponential { .. } => exp_grid(1.0),
                _ => gauss_grid(),
            };
            let table = compute_weights(&[packet.clone(), packet], &grid, EPS_W).unwrap();
            assert!(
                (table.norm_const(1) - 0.5).abs() < 1e-8,
                "N_1 = {}",
                table.norm_const(1)
            );
        }
    }

    #[test]
    fn identical_pulse_product_is_inverse_factorial() {
        let packet = gauss_packet();
        for n in 2..=4usize {
            let packets = vec![packet.clone(); n];
            let table = compute_weights(&packets, &gauss_grid(), EPS_W).unwrap();
            let expected = 1.0 / (1..=n).product::<usize>() as f64;
            assert!(
                (table.norm_const_product() - expected).abs() < 1e-6,
                "n = {n}: {} vs {expected}",
                table.norm_const_product()
            );
        }
    }

    #[test]
    fn weights_start_at_one_and_decrease() {
        let table =
            compute_weights(&[gauss_packet(), gauss_packet()], &gauss_grid(), EPS_W).unwrap();
        for k in 1..=2 {
            assert_eq!(table.w_at_grid_point(k, 0), 1.0);
            let series = &table.w[k - 1];
            assert!(series.windows(2).all(|p| p[1] <= p[0] + 1e-15));
            assert!(series.last().unwrap() < &1e-7);
        }
    }

    #[test]
    fn single_photon_exponential_rate_is_constant() {
        let gamma = 0.8;
        let table = compute_weights(&[exp_packet(gamma)], &exp_grid(gamma), EPS_W).unwrap();
        for &t in &[0.0, 1.0, 5.0, 12.0] {
            let lam = table.lambda(1, t).unwrap();
            assert!((lam.re - gamma.sqrt()).abs() < 1e-7, "t = {t}: {lam}");
            assert!(lam.im.abs() < 1e-15);
        }
    }

    #[test]
    fn rate_integral_reproduces_weight() {
        // exp(−½ ∫_0^t |λ_j|²) = √w_j(t)
        let packets = vec![gauss_packet(), gauss_packet()];
        let grid = gauss_grid();
        let table = compute_weights(&packets, &grid, EPS_W).unwrap();
        for j in 1..=2 {
            let rate2: Vec<f64> =
                grid.times().map(|t| table.lambda_clamped(j, t).norm_sqr()).collect();
            let acc = quadrature::cumulative(&rate2, grid.dt());
            let mut max_rel = 0.0f64;
            for (i, _t) in grid.times().enumerate() {
                let w = table.w_at_grid_point(j, i);
                if w < 1e-6 {
                    break;
                }
                let lhs = (-0.5 * acc[i]).exp();
                max_rel = max_rel.max((lhs - w.sqrt()).abs() / w.sqrt());
            }
            assert!(max_rel < 1e-6, "j = {j}: rel err {max_rel:e}");
        }
    }

    #[test]
    fn lambda_signals_horizon_truncation() {
        let gamma = 2.0;
        let grid = exp_grid(gamma);
        let table = compute_weights(&[exp_packet(gamma)], &grid, EPS_W).unwrap();
        let late = grid.t_max() * 0.999;
        assert!(table.w_value(1, late) < EPS_W);
        assert!(matches!(table.lambda(1, late), Err(Error::HorizonTruncated { .. })));
        let clamped = table.lambda_clamped(1, late);
        assert!(clamped.norm() < 10.0 * gamma.sqrt());
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let grid = UniformGrid::new(13.0, 12);
        assert!(matches!(
            compute_weights(&[gauss_packet()], &grid, EPS_W),
            Err(Error::UnnormalizedPacket { .. }) | Err(Error::GridTooCoarse(_))
        ));
    }

    #[test]
    fn short_horizon_is_rejected() {
        let grid = UniformGrid::new(7.0, 4_000); // gaussian mass beyond 7 is ~0.16
        assert!(matches!(
            compute_weights(&[gauss_packet()], &grid, EPS_W),
            Err(Error::GridTooCoarse(_))
        ));
    }

    #[test]
    fn gaussian_left_tail_is_rejected() {
        assert!(WavePacket::gaussian(1.0, 1.0).is_err());
    }

    #[test]
    fn square_packet_weight_is_linear() {
        // t1 = 4 sits on an even grid node of [0, 5]
        let grid = UniformGrid::new(5.0, 10_000);
        let packet = WavePacket::square(0.0, 4.0).unwrap();
        let table = compute_weights(&[packet], &grid, EPS_W).unwrap();
        for &t in &[0.5, 1.0, 2.5, 3.75] {
            assert!((table.w_value(1, t) - (1.0 - t / 4.0)).abs() < 1e-10, "t = {t}");
        }
        assert!(table.w_value(1, 4.5) == 0.0);
    }

    #[test]
    fn tabulated_packet_is_rescaled() {
        let grid = UniformGrid::new(12.0, 4_000);
        let times: Vec<f64> = (0..=1200).map(|i| i as f64 * 0.01).collect();
        let values: Vec<Complex64> =
            times.iter().map(|&t| Complex64::new(3.0 * (-0.5 * t).exp(), 0.0)).collect();
        let packet = WavePacket::tabulated(times, values).unwrap();
        let mass = quadrature::integrate(&grid.sample(|t| packet.abs2(t)), grid.dt());
        assert!((mass - 1.0).abs() < 1e-4, "mass = {mass}");
    }

    #[test]
    fn ladder_matches_three_level_layout() {
        let packets = vec![gauss_packet(), exp_packet(2.0)];
        let grid = gauss_grid();
        let gen = CmpGenerator::n_photon(&packets, &grid, EPS_W).unwrap();
        let table = compute_weights(&packets, &grid, EPS_W).unwrap();
        let t = 4.2;
        let r = gen.r_at(t);
        assert_eq!(r.nrows(), 3);
        assert!((r[(1, 0)] - table.lambda(1, t).unwrap()).norm() < 1e-12);
        assert!((r[(2, 1)] - table.lambda(2, t).unwrap()).norm() < 1e-12);
        for (i, j) in [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 0), (2, 2)] {
            assert_eq!(r[(i, j)], Complex64::new(0.0, 0.0));
        }
        // nilpotency of the ladder
        let r3 = &r * &r * &r;
        assert!(r3.norm() < 1e-12);
        assert_eq!(gen.phi(), &operators::basis_vector(3, 0));
    }

    #[test]
    fn single_photon_agrees_with_one_packet_ladder() {
        let grid = exp_grid(1.0);
        let single = CmpGenerator::single_photon(&exp_packet(1.0), &grid, EPS_W).unwrap();
        let ladder = CmpGenerator::n_photon(&[exp_packet(1.0)], &grid, EPS_W).unwrap();
        for &t in &[0.0, 1.0, 6.0] {
            assert!(operators::distance(&single.r_at(t), &ladder.r_at(t)) < 1e-14);
        }
        assert_eq!(single.dim(), 2);
        // R(t)² = 0
        let r = single.r_at(1.0);
        assert!((&r * &r).norm() == 0.0);
    }

    #[test]
    fn custom_generator_validates_phi() {
        let phi = CVector::from_vec(vec![Complex64::new(2.0, 0.0)]);
        let r = OperatorFn::constant(operators::zeros(1));
        let h = OperatorFn::constant(operators::zeros(1));
        assert!(matches!(CmpGenerator::custom(phi, r, h), Err(Error::NotNormalized { .. })));
    }
}
