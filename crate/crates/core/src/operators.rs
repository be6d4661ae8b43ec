//! Dense complex operator algebra on finite tensor-product spaces.
//!
//! Operators are plain [`CMatrix`] values (immutable once built, `Send +
//! Sync`); the joint space of a system factor and an auxiliary factor is
//! indexed system-major:
//!
//! ```text
//! index(i_sys, i_aux) = i_sys * dim_aux + i_aux
//! ```
//!
//! so `kron(a_sys, b_aux)` acts on the joint space directly.

use crate::{CMatrix, CVector, Complex64};

/// Tensor factorization of the joint space, system factor first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpaceLayout {
    pub dim_sys: usize,
    pub dim_aux: usize,
}

impl SpaceLayout {
    pub fn new(dim_sys: usize, dim_aux: usize) -> Self {
        assert!(dim_sys > 0 && dim_aux > 0, "factor dimensions must be positive");
        Self { dim_sys, dim_aux }
    }

    pub fn joint_dim(&self) -> usize {
        self.dim_sys * self.dim_aux
    }

    /// Joint-space index of the basis element |i_sys⟩⊗|i_aux⟩.
    pub fn index(&self, i_sys: usize, i_aux: usize) -> usize {
        debug_assert!(i_sys < self.dim_sys && i_aux < self.dim_aux);
        i_sys * self.dim_aux + i_aux
    }
}

/// Kronecker product `a ⊗ b` in the fixed system-major ordering.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn adjoint(a: &CMatrix) -> CMatrix {
    a.adjoint()
}

/// `ab - ba`
pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.nrows(), b.nrows(), "commutator: dimension mismatch");
    a * b - b * a
}

/// `ab + ba`
pub fn anticommutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.nrows(), b.nrows(), "anticommutator: dimension mismatch");
    a * b + b * a
}

/// Partial trace over the auxiliary factor.
///
/// Preserves the full trace: `trace(result) == trace(joint)`.
pub fn partial_trace_aux(joint: &CMatrix, layout: SpaceLayout) -> CMatrix {
    let (ds, da) = (layout.dim_sys, layout.dim_aux);
    assert_eq!(joint.nrows(), layout.joint_dim(), "partial_trace_aux: dimension mismatch");
    CMatrix::from_fn(ds, ds, |i, j| {
        (0..da).map(|a| joint[(i * da + a, j * da + a)]).sum()
    })
}

/// Partial trace over the system factor.
pub fn partial_trace_sys(joint: &CMatrix, layout: SpaceLayout) -> CMatrix {
    let (ds, da) = (layout.dim_sys, layout.dim_aux);
    assert_eq!(joint.nrows(), layout.joint_dim(), "partial_trace_sys: dimension mismatch");
    CMatrix::from_fn(da, da, |a, b| {
        (0..ds).map(|i| joint[(i * da + a, i * da + b)]).sum()
    })
}

/// A joint-space operator decomposed into its D×D grid of system-space
/// blocks: `block(n, m) = (I ⊗ ⟨e_n|) · joint · (I ⊗ |e_m⟩)`.
///
/// Block `(n, m)` is the entry paired with `E_mn = |e_m⟩⟨e_n|` under the
/// trace pairing, so a joint density operator decomposes as
/// `Σ_nm block(n,m) ⊗ E_nm` and reassembly inverts extraction exactly
/// (entries are copied, never recomputed).
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMatrix {
    layout: SpaceLayout,
    blocks: Vec<CMatrix>,
}

impl BlockMatrix {
    pub fn layout(&self) -> SpaceLayout {
        self.layout
    }

    pub fn block(&self, n: usize, m: usize) -> &CMatrix {
        &self.blocks[n * self.layout.dim_aux + m]
    }

    /// Rebuild the joint-space operator. Exact inverse of [`matrix_entries`].
    pub fn reassemble(&self) -> CMatrix {
        let (ds, da) = (self.layout.dim_sys, self.layout.dim_aux);
        let mut joint = CMatrix::zeros(ds * da, ds * da);
        for n in 0..da {
            for m in 0..da {
                let blk = self.block(n, m);
                for i in 0..ds {
                    for j in 0..ds {
                        joint[(i * da + n, j * da + m)] = blk[(i, j)];
                    }
                }
            }
        }
        joint
    }

    /// Sum of diagonal blocks, i.e. the partial trace over the auxiliary
    /// factor.
    pub fn diagonal_sum(&self) -> CMatrix {
        let ds = self.layout.dim_sys;
        let mut acc = CMatrix::zeros(ds, ds);
        for n in 0..self.layout.dim_aux {
            acc += self.block(n, n);
        }
        acc
    }
}

/// Decompose a joint-space operator into its grid of system-space blocks.
pub fn matrix_entries(joint: &CMatrix, layout: SpaceLayout) -> BlockMatrix {
    let (ds, da) = (layout.dim_sys, layout.dim_aux);
    assert_eq!(joint.nrows(), layout.joint_dim(), "matrix_entries: dimension mismatch");
    let mut blocks = Vec::with_capacity(da * da);
    for n in 0..da {
        for m in 0..da {
            blocks.push(CMatrix::from_fn(ds, ds, |i, j| joint[(i * da + n, j * da + m)]));
        }
    }
    BlockMatrix { layout, blocks }
}

/// Frobenius norm of `a - b`.
pub fn distance(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).norm()
}

pub fn is_hermitian(a: &CMatrix, tol: f64) -> bool {
    a.is_square() && distance(a, &a.adjoint()) <= tol
}

pub fn is_unitary(a: &CMatrix, tol: f64) -> bool {
    a.is_square() && distance(&(a.adjoint() * a), &identity(a.nrows())) <= tol
}

/// Smallest eigenvalue of the Hermitian part `(a + a†)/2`.
pub fn min_eigenvalue_hermitian(a: &CMatrix) -> f64 {
    let herm = (a + a.adjoint()) * Complex64::new(0.5, 0.0);
    herm.symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_positive_semidefinite(a: &CMatrix, tol: f64) -> bool {
    is_hermitian(a, tol) && min_eigenvalue_hermitian(a) >= -tol
}

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

pub fn zeros(dim: usize) -> CMatrix {
    CMatrix::zeros(dim, dim)
}

/// Lowering operator on C^2 in the basis (|↑⟩, |↓⟩): maps the first basis
/// vector to the second.
pub fn sigma_minus() -> CMatrix {
    let mut m = zeros(2);
    m[(1, 0)] = Complex64::new(1.0, 0.0);
    m
}

pub fn sigma_plus() -> CMatrix {
    sigma_minus().adjoint()
}

pub fn sigma_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)])
}

pub fn sigma_y() -> CMatrix {
    CMatrix::from_row_slice(
        2,
        2,
        &[c(0.0), Complex64::new(0.0, -1.0), Complex64::new(0.0, 1.0), c(0.0)],
    )
}

pub fn sigma_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(-1.0)])
}

/// `|k⟩⟨k|` on a `dim`-dimensional space.
pub fn projector(dim: usize, k: usize) -> CMatrix {
    assert!(k < dim);
    let mut m = zeros(dim);
    m[(k, k)] = Complex64::new(1.0, 0.0);
    m
}

/// Standard basis vector `|k⟩`.
pub fn basis_vector(dim: usize, k: usize) -> CVector {
    assert!(k < dim);
    let mut v = CVector::zeros(dim);
    v[k] = Complex64::new(1.0, 0.0);
    v
}

/// `|v⟩⟨v|`
pub fn outer(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}
