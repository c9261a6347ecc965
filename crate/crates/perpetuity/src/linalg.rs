//! Dense linear-algebra helpers on top of nalgebra: symmetric square roots,
//! positive-definiteness screens and small Lyapunov solves.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative eigenvalue floor used by the positive-definiteness screen:
/// smallest eigenvalue must exceed `SPD_REL_TOL` times the largest.
pub const SPD_REL_TOL: f64 = 1e-10;

pub fn frobenius(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    if a.nrows() != a.ncols() {
        return false;
    }
    let scale = 1.0 + a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            if (a[(i, j)] - a[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Eigenvalues of the symmetrized matrix, ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let sym = 0.5 * (a + a.transpose());
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// Scale-invariant SPD screen: smallest eigenvalue > `SPD_REL_TOL` · largest.
pub fn spd_check(a: &DMatrix<f64>) -> Result<()> {
    if !is_symmetric(a, 1e-9) {
        return Err(Error::InvalidInput("matrix is not symmetric".into()));
    }
    let ev = sym_eigenvalues(a);
    let (min, max) = (ev[0], ev[ev.len() - 1]);
    let threshold = SPD_REL_TOL * max.abs().max(f64::MIN_POSITIVE);
    if !(min > threshold) {
        return Err(Error::NotPositiveDefinite {
            eigenvalue: min,
            threshold,
        });
    }
    Ok(())
}

/// The unique symmetric positive definite square root, via the spectral
/// decomposition. Rejects non-SPD input naming the offending eigenvalue.
pub fn sqrt_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spd_check(a)?;
    let sym = 0.5 * (a + a.transpose());
    let eig = sym.symmetric_eigen();
    let mut d = DMatrix::zeros(a.nrows(), a.ncols());
    for i in 0..a.nrows() {
        d[(i, i)] = eig.eigenvalues[i].sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * d * q.transpose())
}

/// True iff every eigenvalue of `a` has strictly positive real part.
pub fn spectrum_strictly_positive(a: &DMatrix<f64>) -> bool {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .all(|ev| ev.re > 0.0)
}

/// Solves the Lyapunov equation `M' X + X M = C` by the Kronecker-product
/// reduction; intended for the small matrices of the Riccati iteration.
pub fn lyapunov_solve(m: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    if m.ncols() != d || c.nrows() != d || c.ncols() != d {
        return Err(Error::InvalidInput("lyapunov_solve expects square same-size matrices".into()));
    }
    let eye = DMatrix::<f64>::identity(d, d);
    let mt = m.transpose();
    // vec(M'X) = (I ⊗ M') vec(X); vec(XM) = (M' ⊗ I) vec(X).
    let k = eye.kronecker(&mt) + mt.kronecker(&eye);
    let rhs = DVector::from_column_slice(c.as_slice());
    let sol = k.lu().solve(&rhs).ok_or_else(|| {
        Error::Convergence {
            what: "Lyapunov solve".into(),
            residual: f64::NAN,
            iterations: 0,
        }
    })?;
    Ok(DMatrix::from_column_slice(d, d, sol.as_slice()))
}
