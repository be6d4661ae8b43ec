//! SLH triples, Evans-Hudson superoperator maps and the series-product
//! cascade of a source feeding a system.

use std::sync::Arc;

use crate::operators::{self, SpaceLayout};
use crate::{CMatrix, Complex64, Error, Result};

/// A possibly time-dependent operator coefficient.
#[derive(Clone)]
pub enum OperatorFn {
    Constant(CMatrix),
    TimeDependent(Arc<dyn Fn(f64) -> CMatrix + Send + Sync>),
}

impl OperatorFn {
    pub fn constant(m: CMatrix) -> Self {
        OperatorFn::Constant(m)
    }

    pub fn from_fn<F: Fn(f64) -> CMatrix + Send + Sync + 'static>(f: F) -> Self {
        OperatorFn::TimeDependent(Arc::new(f))
    }

    pub fn at(&self, t: f64) -> CMatrix {
        match self {
            OperatorFn::Constant(m) => m.clone(),
            OperatorFn::TimeDependent(f) => f(t),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, OperatorFn::Constant(_))
    }
}

impl std::fmt::Debug for OperatorFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OperatorFn::Constant(m) => write!(f, "Constant({}x{})", m.nrows(), m.ncols()),
            OperatorFn::TimeDependent(_) => write!(f, "TimeDependent"),
        }
    }
}

/// Hudson-Parthasarathy parameters `(S, L, H)` of a single-input
/// single-output Markov model, evaluated at grid times.
///
/// `S(t)` must be unitary and `H(t)` Hermitian within [`SlhTriple::TOL`];
/// evaluation maps must be pure so triples can be shared across ensemble
/// workers.
#[derive(Clone, Debug)]
pub struct SlhTriple {
    dim: usize,
    s: OperatorFn,
    l: OperatorFn,
    h: OperatorFn,
}

/// The four Evans-Hudson maps, indexed by the differentials they multiply in
/// the Heisenberg flow: `dt`, `dB*`, `dB`, `dΛ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EhMap {
    /// drift: `½[L*,X]L + ½L*[X,L] − i[X,H]`
    L00,
    /// creation: `S*[X,L]`
    L10,
    /// annihilation: `[L*,X]S`
    L01,
    /// gauge: `S*XS − X`
    L11,
}

impl SlhTriple {
    /// Validation tolerance for unitarity/Hermiticity, sized for coefficients
    /// assembled from double-precision arithmetic.
    pub const TOL: f64 = 1e-10;

    pub fn new(s: OperatorFn, l: OperatorFn, h: OperatorFn) -> Result<Self> {
        let s0 = s.at(0.0);
        let dim = s0.nrows();
        let triple = Self { dim, s, l, h };
        triple.validate_at(&[0.0])?;
        Ok(triple)
    }

    pub fn constant(s: CMatrix, l: CMatrix, h: CMatrix) -> Result<Self> {
        Self::new(OperatorFn::constant(s), OperatorFn::constant(l), OperatorFn::constant(h))
    }

    /// `(I, L, H)` with constant coefficients.
    pub fn passive(l: CMatrix, h: CMatrix) -> Result<Self> {
        let dim = l.nrows();
        Self::constant(operators::identity(dim), l, h)
    }

    /// Decay of a two-level system at rate `kappa`: `(I, √κ σ₋, 0)`.
    pub fn two_level_atom(kappa: f64) -> Self {
        let l = operators::sigma_minus() * Complex64::new(kappa.sqrt(), 0.0);
        Self::passive(l, operators::zeros(2)).expect("two-level preset is valid")
    }

    /// `(I, 0, 0)` on a `dim`-dimensional space.
    pub fn trivial(dim: usize) -> Self {
        Self::constant(operators::identity(dim), operators::zeros(dim), operators::zeros(dim))
            .expect("trivial triple is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn s_at(&self, t: f64) -> CMatrix {
        self.s.at(t)
    }

    pub fn l_at(&self, t: f64) -> CMatrix {
        self.l.at(t)
    }

    pub fn h_at(&self, t: f64) -> CMatrix {
        self.h.at(t)
    }

    pub fn s_is_constant_identity(&self) -> bool {
        match &self.s {
            OperatorFn::Constant(m) => operators::distance(m, &operators::identity(self.dim)) == 0.0,
            OperatorFn::TimeDependent(_) => false,
        }
    }

    /// Check the triple invariants at the given times.
    pub fn validate_at(&self, times: &[f64]) -> Result<()> {
        for &t in times {
            let (s, l, h) = (self.s.at(t), self.l.at(t), self.h.at(t));
            if s.nrows() != self.dim
                || !s.is_square()
                || l.nrows() != self.dim
                || !l.is_square()
                || h.nrows() != self.dim
                || !h.is_square()
            {
                return Err(Error::DimensionMismatch(format!(
                    "S, L, H must all be {0}x{0}",
                    self.dim
                )));
            }
            if !operators::is_unitary(&s, Self::TOL) {
                return Err(Error::InvalidOperator(format!("S(t = {t}) is not unitary")));
            }
            if !operators::is_hermitian(&h, Self::TOL) {
                return Err(Error::InvalidOperator(format!("H(t = {t}) is not Hermitian")));
            }
        }
        Ok(())
    }
}

/// Apply one of the Evans-Hudson maps to a system observable.
pub fn evans_hudson(triple: &SlhTriple, which: EhMap, x: &CMatrix, t: f64) -> CMatrix {
    assert_eq!(x.nrows(), triple.dim(), "evans_hudson: dimension mismatch");
    let l = triple.l_at(t);
    match which {
        EhMap::L00 => {
            let ld = l.adjoint();
            let h = triple.h_at(t);
            let half = Complex64::new(0.5, 0.0);
            (operators::commutator(&ld, x) * &l) * half
                + (&ld * operators::commutator(x, &l)) * half
                - operators::commutator(x, &h) * Complex64::new(0.0, 1.0)
        }
        EhMap::L10 => triple.s_at(t).adjoint() * operators::commutator(x, &l),
        EhMap::L01 => operators::commutator(&l.adjoint(), x) * triple.s_at(t),
        EhMap::L11 => {
            let s = triple.s_at(t);
            s.adjoint() * x * &s - x
        }
    }
}

/// Schrödinger-picture generator `LρL* − ½{ρ, L*L} + i[ρ, H]` for explicit
/// coefficients. Trace-free by construction.
pub fn lindblad_dual_ops(l: &CMatrix, h: &CMatrix, rho: &CMatrix) -> CMatrix {
    let ld = l.adjoint();
    let ldl = &ld * l;
    l * rho * ld
        - operators::anticommutator(rho, &ldl) * Complex64::new(0.5, 0.0)
        + operators::commutator(rho, h) * Complex64::new(0.0, 1.0)
}

/// Schrödinger-picture generator of `triple` applied to a density operator.
pub fn lindblad_dual(triple: &SlhTriple, rho: &CMatrix, t: f64) -> CMatrix {
    assert_eq!(rho.nrows(), triple.dim(), "lindblad_dual: dimension mismatch");
    lindblad_dual_ops(&triple.l_at(t), &triple.h_at(t), rho)
}

/// Series product of a source (`aux`, scattering restricted to the identity)
/// feeding the system, on the joint space `sys ⊗ aux`:
///
/// ```text
/// S~    = S ⊗ I
/// L~(t) = L ⊗ I + S ⊗ R(t)
/// H~(t) = H ⊗ I + I ⊗ H_aux(t) + (1/2i)(L*S ⊗ R(t) − S*L ⊗ R(t)*)
/// ```
pub fn cascade(sys: &SlhTriple, aux: &SlhTriple) -> Result<SlhTriple> {
    if !aux.s_is_constant_identity() {
        let s0 = aux.s_at(0.0);
        if operators::distance(&s0, &operators::identity(aux.dim())) > SlhTriple::TOL {
            return Err(Error::Unsupported(
                "cascade requires the source triple to have identity scattering".into(),
            ));
        }
    }
    let layout = SpaceLayout::new(sys.dim(), aux.dim());
    let sys_a = Arc::new(sys.clone());
    let aux_a = Arc::new(aux.clone());

    let s_tilde = {
        let sys = sys_a.clone();
        let da = layout.dim_aux;
        match &sys.s {
            OperatorFn::Constant(m) => {
                OperatorFn::constant(operators::kron(m, &operators::identity(da)))
            }
            OperatorFn::TimeDependent(_) => OperatorFn::from_fn(move |t| {
                operators::kron(&sys.s_at(t), &operators::identity(da))
            }),
        }
    };

    let l_tilde = {
        let (sys, aux) = (sys_a.clone(), aux_a.clone());
        OperatorFn::from_fn(move |t| {
            let ia = operators::identity(aux.dim());
            operators::kron(&sys.l_at(t), &ia) + operators::kron(&sys.s_at(t), &aux.l_at(t))
        })
    };

    let h_tilde = {
        let (sys, aux) = (sys_a, aux_a);
        OperatorFn::from_fn(move |t| {
            let (s, l, h) = (sys.s_at(t), sys.l_at(t), sys.h_at(t));
            let r = aux.l_at(t);
            let ia = operators::identity(aux.dim());
            let is = operators::identity(sys.dim());
            let half_over_i = Complex64::new(0.0, -0.5); // 1/(2i)
            operators::kron(&h, &ia)
                + operators::kron(&is, &aux.h_at(t))
                + (operators::kron(&(l.adjoint() * &s), &r)
                    - operators::kron(&(s.adjoint() * &l), &r.adjoint()))
                    * half_over_i
        })
    };

    SlhTriple::new(s_tilde, l_tilde, h_tilde)
}

/// Residual of the cascade drift identity at time `t`:
///
/// ```text
/// L~00(X⊗A) = L00 X ⊗ A + L01 X ⊗ AR + L10 X ⊗ R*A + L11 X ⊗ R*AR
///             + X ⊗ L00_aux A
/// ```
///
/// Returns the Frobenius norm of the difference; it must vanish for valid
/// triples, which is the cornerstone correctness check of the cascade
/// construction.
pub fn lindblad_identity_residual(
    sys: &SlhTriple,
    aux: &SlhTriple,
    x: &CMatrix,
    a: &CMatrix,
    t: f64,
) -> Result<f64> {
    assert_eq!(x.nrows(), sys.dim(), "lindblad_identity_residual: X dimension mismatch");
    assert_eq!(a.nrows(), aux.dim(), "lindblad_identity_residual: A dimension mismatch");
    let cascaded = cascade(sys, aux)?;
    let lhs = evans_hudson(&cascaded, EhMap::L00, &operators::kron(x, a), t);

    let r = aux.l_at(t);
    let rd = r.adjoint();
    let rhs = operators::kron(&evans_hudson(sys, EhMap::L00, x, t), a)
        + operators::kron(&evans_hudson(sys, EhMap::L01, x, t), &(a * &r))
        + operators::kron(&evans_hudson(sys, EhMap::L10, x, t), &(&rd * a))
        + operators::kron(&evans_hudson(sys, EhMap::L11, x, t), &(&rd * a * &r))
        + operators::kron(x, &evans_hudson(aux, EhMap::L00, a, t));

    Ok(operators::distance(&lhs, &rhs))
}
