//! Master equations and quantum trajectories for open systems driven by
//! structured photon fields.
//!
//! A Markovian open system is specified by a triple of operators
//! `(S, L, H)` (scattering, coupling, Hamiltonian). The input field is
//! prepared in a continuous matrix product state: the state written onto the
//! field by a small auxiliary source with coupling `R(t)` and Hamiltonian
//! `H_aux(t)` decaying into the vacuum. Cascading the source into the system
//! turns every question about such an input into a vacuum-input question on
//! the joint system⊗auxiliary space, which this crate integrates
//! deterministically ([`master`]) or conditionally on homodyne / photon
//! counting records ([`trajectory`], [`ensemble`]).
//!
//! Single-photon and time-ordered n-photon inputs are generated exactly by
//! ladder-type sources built from the wavepacket shapes ([`wavepacket`]); the
//! corresponding closed-form solutions live in [`oracle`] and back the
//! verification suite.

pub mod ensemble;
pub mod error;
pub mod master;
pub mod operators;
pub mod oracle;
pub mod quadrature;
pub mod slh;
pub mod trajectory;
pub mod wavepacket;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type Complex64 = num_complex::Complex64;
/// Dense complex matrix; the representation of every operator.
pub type CMatrix = nalgebra::DMatrix<Complex64>;
/// Dense complex column vector; the representation of state vectors.
pub type CVector = nalgebra::DVector<Complex64>;

/// A fully specified simulation scenario: the system triple, the input-field
/// generator, the initial system vector and the observables to record.
#[derive(Clone)]
pub struct Scenario {
    pub sys: slh::SlhTriple,
    pub gen: wavepacket::CmpGenerator,
    pub eta: CVector,
    /// Named system-space observables, reported as conditional or
    /// unconditional expectations.
    pub observables: Vec<(String, CMatrix)>,
}

impl Scenario {
    pub fn new(
        sys: slh::SlhTriple,
        gen: wavepacket::CmpGenerator,
        eta: CVector,
        observables: Vec<(String, CMatrix)>,
    ) -> Result<Self> {
        let norm = eta.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::NotNormalized { norm });
        }
        if eta.len() != sys.dim() {
            return Err(Error::DimensionMismatch(format!(
                "initial vector has dimension {}, system has dimension {}",
                eta.len(),
                sys.dim()
            )));
        }
        for (name, x) in &observables {
            if x.nrows() != sys.dim() || x.ncols() != sys.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "observable '{}' is {}x{}, system has dimension {}",
                    name,
                    x.nrows(),
                    x.ncols(),
                    sys.dim()
                )));
            }
        }
        Ok(Self { sys, gen, eta, observables })
    }

    /// Layout of the joint system⊗auxiliary space.
    pub fn layout(&self) -> operators::SpaceLayout {
        operators::SpaceLayout::new(self.sys.dim(), self.gen.dim())
    }
}
