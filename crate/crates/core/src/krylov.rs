//! Jacobi-preconditioned conjugate gradients for matrix-free SPD operators.
//!
//! Inner products are accumulated sequentially in index order, so the
//! iterates are bit-identical for a fixed input regardless of how the
//! operator application itself is parallelized.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    /// Final `‖b - Ax‖ / ‖b‖`.
    pub relative_residual: f64,
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for (a, b) in x.iter().zip(y) {
        s += a * b;
    }
    s
}

/// Solves `A x = b` starting from the contents of `x`.
///
/// `apply(x, y)` must write `A x` into `y`; `inv_diag` holds the reciprocal
/// of the diagonal of `A`.
pub fn pcg<F>(
    mut apply: F,
    inv_diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut res = dot(&r, &r).sqrt() / b_norm;
    if res <= tol {
        return Ok(CgOutcome {
            iterations: 0,
            relative_residual: res,
        });
    }
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NonConvergence {
                what: "conjugate gradients (operator not positive definite)",
                iterations: it,
                residual: res,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = dot(&r, &r).sqrt() / b_norm;
        if !res.is_finite() {
            return Err(Error::NonFinite {
                what: "conjugate gradient residual",
                index: it,
            });
        }
        if res <= tol {
            return Ok(CgOutcome {
                iterations: it,
                relative_residual: res,
            });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence {
        what: "conjugate gradients",
        iterations: max_iter,
        residual: res,
    })
}
