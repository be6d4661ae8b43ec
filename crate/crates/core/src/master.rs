//! Deterministic propagation of the joint system⊗source density operator.
//!
//! The input-field state enters through the cascade: the joint state evolves
//! under the plain vacuum master equation of the cascaded triple, and every
//! expectation against the structured input is read off the joint state. The
//! matrix-valued form of the master equation (the D×D grid `Υ_t(X)` of
//! entries `tr{ϱ_t (X ⊗ E_mn)}`) is exposed for verification; the joint
//! density operator is the internal representation since the two are
//! isomorphic block-by-block.

use crate::operators::{self, SpaceLayout};
use crate::slh::{self, EhMap, SlhTriple};
use crate::wavepacket::CmpGenerator;
use crate::{CMatrix, CVector, Complex64, Error, Result, Scenario};

/// Per-step trace conservation required of the deterministic integrator.
pub const STEP_TRACE_TOL: f64 = 1e-12;
/// Trace drift allowed over a full deterministic run.
pub const RUN_TRACE_TOL: f64 = 1e-9;
/// Eigenvalue floor for positivity checks at sampled times.
pub const EIG_FLOOR: f64 = -1e-8;

/// Density operator on the joint system⊗auxiliary space at time `t`.
#[derive(Clone, Debug)]
pub struct JointState {
    pub layout: SpaceLayout,
    pub rho: CMatrix,
    pub t: f64,
}

impl JointState {
    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }

    pub fn trace_drift(&self) -> f64 {
        (self.trace() - Complex64::new(1.0, 0.0)).norm()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        operators::min_eigenvalue_hermitian(&self.rho)
    }

    pub fn purity(&self) -> f64 {
        (&self.rho * &self.rho).trace().re
    }

    /// Check the density-operator invariants (unit trace, Hermiticity,
    /// positivity floor).
    pub fn validate(&self) -> Result<()> {
        if self.trace_drift() > RUN_TRACE_TOL {
            return Err(Error::InvariantViolation {
                t: self.t,
                what: format!("trace drift {:e}", self.trace_drift()),
            });
        }
        if !operators::is_hermitian(&self.rho, 1e-10) {
            return Err(Error::InvariantViolation {
                t: self.t,
                what: "state is not Hermitian".into(),
            });
        }
        let min_eig = self.min_eigenvalue();
        if min_eig < EIG_FLOOR {
            return Err(Error::InvariantViolation {
                t: self.t,
                what: format!("negative eigenvalue {min_eig:e}"),
            });
        }
        Ok(())
    }
}

/// `ϱ_0 = |η⟩⟨η| ⊗ |φ⟩⟨φ|` at `t = 0`.
pub fn init_joint(eta: &CVector, gen: &CmpGenerator) -> Result<JointState> {
    let norm = eta.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::NotNormalized { norm });
    }
    let layout = SpaceLayout::new(eta.len(), gen.dim());
    let rho = operators::kron(&operators::outer(eta), &operators::outer(gen.phi()));
    Ok(JointState { layout, rho, t: 0.0 })
}

/// One classic fourth-order Runge-Kutta step of `dϱ/dt = 𝓛*ϱ` for the given
/// cascade triple, with coefficients sampled at the stage times.
pub fn rk4_step(cascade: &SlhTriple, rho: &CMatrix, t: f64, dt: f64) -> CMatrix {
    let dual = |tt: f64, sigma: &CMatrix| {
        slh::lindblad_dual_ops(&cascade.l_at(tt), &cascade.h_at(tt), sigma)
    };
    let half = Complex64::new(0.5 * dt, 0.0);
    let (l_mid, h_mid) = (cascade.l_at(t + 0.5 * dt), cascade.h_at(t + 0.5 * dt));
    let k1 = dual(t, rho);
    let k2 = slh::lindblad_dual_ops(&l_mid, &h_mid, &(rho + &k1 * half));
    let k3 = slh::lindblad_dual_ops(&l_mid, &h_mid, &(rho + &k2 * half));
    let k4 = dual(t + dt, &(rho + &k3 * Complex64::new(dt, 0.0)));
    rho + (k1 + k2 * Complex64::new(2.0, 0.0) + k3 * Complex64::new(2.0, 0.0) + k4)
        * Complex64::new(dt / 6.0, 0.0)
}

/// Advance the joint state by `dt` under the cascade of `sys` and `gen`.
///
/// Builds the cascade triple on every call; use [`run_master`] for long
/// propagations.
pub fn master_step(
    state: &JointState,
    sys: &SlhTriple,
    gen: &CmpGenerator,
    dt: f64,
) -> Result<JointState> {
    if dt <= 0.0 {
        return Err(Error::Config("master_step: dt must be positive".into()));
    }
    let cascade = slh::cascade(sys, &gen.aux_triple())?;
    let rho = rk4_step(&cascade, &state.rho, state.t, dt);
    let drift = (rho.trace() - state.rho.trace()).norm();
    if drift > STEP_TRACE_TOL {
        return Err(Error::InvariantViolation {
            t: state.t,
            what: format!("per-step trace change {drift:e} exceeds {STEP_TRACE_TOL:e}"),
        });
    }
    Ok(JointState { layout: state.layout, rho, t: state.t + dt })
}

/// Step grid shared by the deterministic and stochastic integrators.
#[derive(Clone, Copy, Debug)]
pub struct Steps {
    pub dt: f64,
    pub n_steps: usize,
    /// Record every `output_every`-th step (must divide `n_steps`).
    pub output_every: usize,
}

impl Steps {
    pub fn new(dt: f64, n_steps: usize, output_every: usize) -> Result<Self> {
        if dt <= 0.0 || n_steps == 0 || output_every == 0 {
            return Err(Error::Config("steps: dt, n_steps, output_every must be positive".into()));
        }
        if n_steps % output_every != 0 {
            return Err(Error::Config(format!(
                "steps: output_every = {output_every} does not divide n_steps = {n_steps}"
            )));
        }
        Ok(Self { dt, n_steps, output_every })
    }

    /// dt and step count covering `[0, t_max]`.
    pub fn for_horizon(t_max: f64, n_steps: usize, output_every: usize) -> Result<Self> {
        Self::new(t_max / n_steps as f64, n_steps, output_every)
    }

    pub fn t_max(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    pub fn n_samples(&self) -> usize {
        self.n_steps / self.output_every + 1
    }
}

/// Time series produced by a deterministic run.
#[derive(Clone, Debug)]
pub struct MasterResult {
    pub times: Vec<f64>,
    /// One row per scenario observable: `Re tr{ϱ_t (X ⊗ I)}`.
    pub observables: Vec<Vec<f64>>,
    /// Populations of the auxiliary levels (basis index 0 = top level).
    pub aux_populations: Vec<Vec<f64>>,
    pub trace_drift: Vec<f64>,
    pub min_eigenvalue: Vec<f64>,
    pub final_state: JointState,
}

/// Integrate the joint master equation over the step grid, recording
/// expectations at the output cadence.
pub fn run_master(scenario: &Scenario, steps: &Steps) -> Result<MasterResult> {
    let cascade = slh::cascade(&scenario.sys, &scenario.gen.aux_triple())?;
    let mut state = init_joint(&scenario.eta, &scenario.gen)?;
    let n_obs = scenario.observables.len();
    let da = scenario.gen.dim();

    let mut result = MasterResult {
        times: Vec::with_capacity(steps.n_samples()),
        observables: vec![Vec::with_capacity(steps.n_samples()); n_obs],
        aux_populations: vec![Vec::with_capacity(steps.n_samples()); da],
        trace_drift: Vec::with_capacity(steps.n_samples()),
        min_eigenvalue: Vec::with_capacity(steps.n_samples()),
        final_state: state.clone(),
    };

    let record = |state: &JointState, result: &mut MasterResult| -> Result<()> {
        result.times.push(state.t);
        for (i, (_, x)) in scenario.observables.iter().enumerate() {
            result.observables[i].push(cmp_expectation(state, x).re);
        }
        for (a, pop) in aux_populations(state).into_iter().enumerate() {
            result.aux_populations[a].push(pop);
        }
        let drift = state.trace_drift();
        let min_eig = state.min_eigenvalue();
        result.trace_drift.push(drift);
        result.min_eigenvalue.push(min_eig);
        if drift > RUN_TRACE_TOL {
            return Err(Error::InvariantViolation {
                t: state.t,
                what: format!("trace drift {drift:e}"),
            });
        }
        if min_eig < EIG_FLOOR {
            return Err(Error::InvariantViolation {
                t: state.t,
                what: format!("negative eigenvalue {min_eig:e}"),
            });
        }
        Ok(())
    };

    record(&state, &mut result)?;
    for step in 0..steps.n_steps {
        state.rho = rk4_step(&cascade, &state.rho, state.t, steps.dt);
        state.t = (step + 1) as f64 * steps.dt;
        if (step + 1) % steps.output_every == 0 {
            record(&state, &mut result)?;
        }
    }
    result.final_state = state;
    Ok(result)
}

/// The D×D matrix `Υ_t(X)` with entries `Υ^{nm} = tr{ϱ_t (X ⊗ E_mn)}`.
///
/// Its trace is the expectation of `X` against the structured input.
pub fn upsilon_matrix(state: &JointState, x: &CMatrix) -> CMatrix {
    let (ds, da) = (state.layout.dim_sys, state.layout.dim_aux);
    assert_eq!(x.nrows(), ds, "upsilon_matrix: observable must live on the system space");
    CMatrix::from_fn(da, da, |n, m| {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..ds {
            for j in 0..ds {
                acc += state.rho[(i * da + n, j * da + m)] * x[(j, i)];
            }
        }
        acc
    })
}

/// Expectation of the system observable `X`: `tr{ϱ_t (X ⊗ I)}`.
pub fn cmp_expectation(state: &JointState, x: &CMatrix) -> Complex64 {
    assert_eq!(
        x.nrows(),
        state.layout.dim_sys,
        "cmp_expectation: observable must live on the system space"
    );
    (operators::partial_trace_aux(&state.rho, state.layout) * x).trace()
}

/// System marginal `tr_aux ϱ_t`.
pub fn system_marginal(state: &JointState) -> CMatrix {
    operators::partial_trace_aux(&state.rho, state.layout)
}

/// Populations of the auxiliary levels, basis index 0 first (top level).
pub fn aux_populations(state: &JointState) -> Vec<f64> {
    let marginal = operators::partial_trace_sys(&state.rho, state.layout);
    (0..state.layout.dim_aux).map(|a| marginal[(a, a)].re).collect()
}

/// Right-hand side of the matrix master equation for `Υ_t(X)`, assembled
/// term by term from the Evans-Hudson maps of the bare system triple and the
/// source dual acting on the auxiliary indices:
///
/// ```text
/// dΥ(X)/dt = Υ(𝓛₀₀X) + R Υ(𝓛₀₁X) + Υ(𝓛₁₀X) R* + R Υ(𝓛₁₁X) R*
///            + R Υ(X) R* − ½{Υ(X), R*R} + i[Υ(X), H_aux]
/// ```
///
/// Independent of the cascade propagator; used to cross-check it.
pub fn upsilon_rhs(
    state: &JointState,
    sys: &SlhTriple,
    gen: &CmpGenerator,
    x: &CMatrix,
) -> CMatrix {
    let t = state.t;
    let r = gen.r_at(t);
    let rd = r.adjoint();
    let h_aux = gen.h_aux_at(t);
    let ups = |y: &CMatrix| upsilon_matrix(state, y);

    let u00 = ups(&slh::evans_hudson(sys, EhMap::L00, x, t));
    let u01 = ups(&slh::evans_hudson(sys, EhMap::L01, x, t));
    let u10 = ups(&slh::evans_hudson(sys, EhMap::L10, x, t));
    let u11 = ups(&slh::evans_hudson(sys, EhMap::L11, x, t));
    let ux = ups(x);

    let aux_dual = &r * &ux * &rd
        - operators::anticommutator(&ux, &(&rd * &r)) * Complex64::new(0.5, 0.0)
        + operators::commutator(&ux, &h_aux) * Complex64::new(0.0, 1.0);

    u00 + &r * u01 + u10 * &rd + &r * u11 * &rd + aux_dual
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{basis_vector, distance, identity, outer, projector, zeros};
    use crate::quadrature::UniformGrid;
    use crate::slh::test_support::{random_hermitian, random_triple};
    use crate::wavepacket::{WavePacket, EPS_W};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gauss_packet() -> WavePacket {
        WavePacket::gaussian(6.0, 1.0).unwrap()
    }

    fn gauss_grid() -> UniformGrid {
        UniformGrid::new(13.0, 10_000)
    }

    fn two_level_single_photon() -> Scenario {
        let gen = CmpGenerator::single_photon(&gauss_packet(), &gauss_grid(), EPS_W).unwrap();
        let excitation = projector(2, 0);
        Scenario::new(
            SlhTriple::two_level_atom(1.0),
            gen,
            basis_vector(2, 1),
            vec![("excitation".into(), excitation)],
        )
        .unwrap()
    }

    #[test]
    fn init_joint_is_pure_product() {
        let gen = CmpGenerator::single_photon(&gauss_packet(), &gauss_grid(), EPS_W).unwrap();
        let eta = basis_vector(2, 1);
        let state = init_joint(&eta, &gen).unwrap();
        assert!((state.trace().re - 1.0).abs() < 1e-14);
        assert!((state.purity() - 1.0).abs() < 1e-14);
        assert!(distance(&system_marginal(&state), &outer(&eta)) < 1e-14);
        // source starts in its upper level
        let aux = operators::partial_trace_sys(&state.rho, state.layout);
        assert!(distance(&aux, &projector(2, 0)) < 1e-14);
    }

    #[test]
    fn init_joint_rejects_unnormalized() {
        let gen = CmpGenerator::vacuum();
        let eta = CVector::from_vec(vec![Complex64::new(0.5, 0.0)]);
        assert!(matches!(init_joint(&eta, &gen), Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn vacuum_reduces_to_system_only_master() {
        // With R = 0 the joint propagation is the plain system master
        // equation; compare against an independent system-only RK4.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let sys = random_triple(&mut rng, 2);
        let scenario = Scenario::new(
            sys.clone(),
            CmpGenerator::vacuum(),
            basis_vector(2, 0),
            vec![("p0".into(), projector(2, 0))],
        )
        .unwrap();
        let steps = Steps::new(1e-3, 1000, 100).unwrap();
        let result = run_master(&scenario, &steps).unwrap();

        let mut rho = outer(&basis_vector(2, 0));
        let (l, h) = (sys.l_at(0.0), sys.h_at(0.0));
        let dual = |sigma: &CMatrix| slh::lindblad_dual_ops(&l, &h, sigma);
        let dt = steps.dt;
        let mut curve = vec![rho[(0, 0)].re];
        for step in 0..steps.n_steps {
            let k1 = dual(&rho);
            let k2 = dual(&(&rho + &k1 * Complex64::new(dt / 2.0, 0.0)));
            let k3 = dual(&(&rho + &k2 * Complex64::new(dt / 2.0, 0.0)));
            let k4 = dual(&(&rho + &k3 * Complex64::new(dt, 0.0)));
            rho += (k1 + k2 * Complex64::new(2.0, 0.0) + k3 * Complex64::new(2.0, 0.0) + k4)
                * Complex64::new(dt / 6.0, 0.0);
            if (step + 1) % steps.output_every == 0 {
                curve.push(rho[(0, 0)].re);
            }
        }
        for (a, b) in result.observables[0].iter().zip(&curve) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn source_alone_survival_follows_weight() {
        // trivial system + single-photon source: upper-level population is
        // w(t) and the emitted photon number approaches one.
        let gen = CmpGenerator::single_photon(&gauss_packet(), &gauss_grid(), EPS_W).unwrap();
        let table = gen.weight_table().unwrap().clone();
        let scenario =
            Scenario::new(SlhTriple::trivial(1), gen, basis_vector(1, 0), vec![]).unwrap();
        let steps = Steps::for_horizon(13.0, 10_000, 100).unwrap();
        let result = run_master(&scenario, &steps).unwrap();
        let mut max_dev = 0.0f64;
        for (i, &t) in result.times.iter().enumerate() {
            max_dev = max_dev.max((result.aux_populations[0][i] - table.w_value(1, t)).abs());
        }
        assert!(max_dev < 1e-7, "max deviation {max_dev:e}");
        let emitted = 1.0 - result.aux_populations[0].last().unwrap();
        assert!((emitted - 1.0).abs() < 1e-6);
    }

    #[test]
    fn step_preserves_trace_and_positivity() {
        let scenario = two_level_single_photon();
        let steps = Steps::for_horizon(13.0, 10_000, 200).unwrap();
        let result = run_master(&scenario, &steps).unwrap();
        let max_drift = result.trace_drift.iter().cloned().fold(0.0, f64::max);
        let min_eig = result.min_eigenvalue.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max_drift <= 1e-9, "trace drift {max_drift:e}");
        assert!(min_eig >= -1e-8, "min eigenvalue {min_eig:e}");
    }

    #[test]
    fn upsilon_trace_is_expectation() {
        let scenario = two_level_single_photon();
        let steps = Steps::for_horizon(13.0, 2_000, 2_000).unwrap();
        let result = run_master(&scenario, &steps).unwrap();
        let state = &result.final_state;
        let x = projector(2, 0);
        let ups = upsilon_matrix(state, &x);
        assert!((ups.trace() - cmp_expectation(state, &x)).norm() < 1e-12);
        let ups_id = upsilon_matrix(state, &identity(2));
        assert!((ups_id.trace().re - 1.0).abs() < 1e-9);
    }

    #[test]
    fn upsilon_product_initial_state() {
        // Υ_0^{nm}(X) = ⟨η|X|η⟩ ⟨e_n|φ⟩⟨φ|e_m⟩
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let gen = CmpGenerator::single_photon(&gauss_packet(), &gauss_grid(), EPS_W).unwrap();
        let eta = basis_vector(2, 1);
        let state = init_joint(&eta, &gen).unwrap();
        let x = random_hermitian(&mut rng, 2);
        let ups = upsilon_matrix(&state, &x);
        let xval = (eta.adjoint() * &x * &eta)[(0, 0)];
        for n in 0..2 {
            for m in 0..2 {
                let phi_part = gen.phi()[n] * gen.phi()[m].conj();
                assert!((ups[(n, m)] - xval * phi_part).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn matrix_master_equation_matches_joint_propagation() {
        // central finite difference of Υ_t(X) against the term-by-term
        // right-hand side; the residual must scale as O(dt²).
        let scenario = two_level_single_photon();
        let cascade = slh::cascade(&scenario.sys, &scenario.gen.aux_triple()).unwrap();
        let mut state = init_joint(&scenario.eta, &scenario.gen).unwrap();
        let dt = 1e-3;
        for step in 0..3000 {
            state.rho = rk4_step(&cascade, &state.rho, state.t, dt);
            state.t = (step + 1) as f64 * dt;
        }
        let x = projector(2, 0);
        let residual = |delta: f64| {
            let plus = JointState {
                layout: state.layout,
                rho: rk4_step(&cascade, &state.rho, state.t, delta),
                t: state.t + delta,
            };
            let minus = JointState {
                layout: state.layout,
                rho: rk4_step(&cascade, &state.rho, state.t, -delta),
                t: state.t - delta,
            };
            let fd = (upsilon_matrix(&plus, &x) - upsilon_matrix(&minus, &x))
                * Complex64::new(1.0 / (2.0 * delta), 0.0);
            (fd - upsilon_rhs(&state, &scenario.sys, &scenario.gen, &x)).norm()
        };
        let r1 = residual(1e-3);
        let r2 = residual(2e-3);
        assert!(r1 <= 5e-5, "residual at dt=1e-3: {r1:e}");
        let ratio = r2 / r1.max(1e-300);
        assert!((2.0..=8.0).contains(&ratio), "no quadratic scaling: {r1:e} -> {r2:e}");
    }

    #[test]
    fn master_step_matches_run_master() {
        let scenario = two_level_single_photon();
        let steps = Steps::new(1e-3, 10, 10).unwrap();
        let result = run_master(&scenario, &steps).unwrap();
        let mut state = init_joint(&scenario.eta, &scenario.gen).unwrap();
        for _ in 0..10 {
            state = master_step(&state, &scenario.sys, &scenario.gen, 1e-3).unwrap();
        }
        assert!(distance(&state.rho, &result.final_state.rho) < 1e-14);
    }

    #[test]
    fn master_step_rejects_nonpositive_dt() {
        let scenario = two_level_single_photon();
        let state = init_joint(&scenario.eta, &scenario.gen).unwrap();
        assert!(master_step(&state, &scenario.sys, &scenario.gen, 0.0).is_err());
    }

    #[test]
    fn observable_dimension_is_checked() {
        let bad = zeros(3);
        let gen = CmpGenerator::vacuum();
        let scenario = Scenario::new(
            SlhTriple::two_level_atom(1.0),
            gen,
            basis_vector(2, 0),
            vec![("bad".into(), bad)],
        );
        assert!(scenario.is_err());
    }
}
