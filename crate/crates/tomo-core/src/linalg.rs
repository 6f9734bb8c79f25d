//! Dense complex linear-algebra helpers shared across modules.
//!
//! Everything routes through one Hermitian eigendecomposition wrapper so that
//! matrix functions (√ρ, unitaries from generators, propagators) inherit the
//! same determinism and validation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// (A + A†)/2 — projects onto the Hermitian part.
pub fn hermitize(a: &CMat) -> CMat {
    (a + a.adjoint()) * C64::new(0.5, 0.0)
}

/// Largest |A_{mn} − conj(A_{nm})| over all elements.
pub fn hermiticity_defect(a: &CMat) -> f64 {
    let mut worst = 0.0f64;
    for m in 0..a.nrows() {
        for n in 0..a.ncols() {
            worst = worst.max((a[(m, n)] - a[(n, m)].conj()).norm());
        }
    }
    worst
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
pub struct HermEig {
    pub values: Vec<f64>,
    /// Columns are the eigenvectors, in the same order as `values`.
    pub vectors: CMat,
}

impl HermEig {
    /// Reassemble V·f(Λ)·V† for a real function of the eigenvalues.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> CMat {
        self.map_complex(|x| C64::new(f(x), 0.0))
    }

    /// Reassemble V·f(Λ)·V† for a complex function of the eigenvalues.
    pub fn map_complex(&self, f: impl Fn(f64) -> C64) -> CMat {
        let d = self.values.len();
        let diag = CVec::from_iterator(d, self.values.iter().map(|&x| f(x)));
        // V · diag · V† without forming the dense diagonal matrix.
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            let fj = diag[j];
            for v in col.iter_mut() {
                *v *= fj;
            }
        }
        scaled * self.vectors.adjoint()
    }
}

/// Hermitian eigendecomposition with ascending eigenvalue order.
///
/// The input is Hermitized first (cheap, and protects against accumulated
/// round-off in callers); non-finite results are reported as numerical
/// failures rather than propagated as NaN.
pub fn eigh(a: &CMat) -> Result<HermEig> {
    if a.nrows() != a.ncols() {
        return Err(Error::dims(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let eig = hermitize(a).symmetric_eigen();
    let d = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("eigendecomposition produced non-finite eigenvalues"));
    }
    let mut vectors = CMat::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(HermEig { values, vectors })
}

/// √A for Hermitian PSD A, clamping small negative eigenvalues to zero.
pub fn sqrt_psd(a: &CMat) -> Result<CMat> {
    Ok(eigh(a)?.map(|x| x.max(0.0).sqrt()))
}

/// exp(G) for an anti-Hermitian generator G (so iG is Hermitian and the
/// result is unitary on the truncated space).
pub fn expm_antihermitian(g: &CMat) -> Result<CMat> {
    let h = g * C64::new(0.0, 1.0); // iG, Hermitian
    Ok(eigh(&h)?.map_complex(|x| C64::new(0.0, -x).exp()))
}

/// Lowering operator a in the truncated Fock basis: a|n⟩ = √n|n−1⟩.
pub fn lowering(dim: usize) -> CMat {
    let mut a = CMat::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    a
}
