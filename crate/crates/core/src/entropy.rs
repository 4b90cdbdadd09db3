//! Fermi-Dirac entropy, relative entropy and entropy dissipation.

use serde::{Deserialize, Serialize};

use crate::coefficients::{apply_tensor_kernel, compute_a_tensor, KernelSet};
use crate::error::{Error, Result};
use crate::grid::{Field, VectorField};
use crate::stencil::{gradient, SIDES};

/// Floor on `f(1-εf)` below which a node is left out of the dissipation.
pub const GUARD_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "H_rel")]
    pub h_rel: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub guards_hit: usize,
}

#[inline]
fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// `φ(r) = r ln r - r + 1 >= 0`.
#[inline]
fn bregman(r: f64) -> f64 {
    xlogx(r) - r + 1.0
}

/// `H_ε[f] = ε^{-1} ∫ εf ln(εf) + (1-εf) ln(1-εf)`, or `∫ f ln f` when
/// `ε = 0`.
pub fn fermi_dirac_entropy(f: &Field) -> Result<f64> {
    f.ensure_distribution()?;
    let eps = f.grid().eps();
    Ok(f.grid().integrate(f.values().iter().map(|&x| {
        if eps > 0.0 {
            (xlogx(eps * x) + xlogx(1.0 - eps * x)) / eps
        } else {
            xlogx(x)
        }
    })))
}

/// `H_ε[f | M]`: the Bregman divergence of the entropy at `M`.
pub fn relative_entropy(f: &Field, m: &Field) -> Result<f64> {
    f.grid().ensure_same(m.grid())?;
    f.ensure_distribution()?;
    let eps = f.grid().eps();
    let upper = f.grid().pauli_bound();
    for (index, &value) in m.values().iter().enumerate() {
        if !(value > 0.0 && value < upper) {
            return Err(Error::OutOfBand {
                index,
                value,
                upper,
            });
        }
    }
    Ok(f.grid()
        .integrate(f.values().iter().zip(m.values()).map(|(&x, &mv)| {
            let mut s = mv * bregman(x / mv);
            if eps > 0.0 {
                let hole = 1.0 - eps * mv;
                s += hole * bregman((1.0 - eps * x) / hole) / eps;
            }
            s
        })))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dissipation {
    pub value: f64,
    /// Nodes where `f(1-εf)` fell below [`GUARD_FLOOR`].
    pub guards_hit: usize,
}

/// Entropy dissipation `D[f] = ∫ A[F] ∇f·∇f / F - ∫ f^2`, `F = f(1-εf)`.
///
/// The second term is written as `∫ ∇f · Ā[∇f]` with `Ā` the matrix
/// kernel acting on vector fields, which makes the discrete value the exact
/// symmetrized double sum
/// `(1/16π) Σ Σ F F_* Π/|v-v_*| (∇f/F - ∇f_*/F_*)^2 h^6`, so `D >= 0`
/// holds to round-off. Gradients are the averaged one-sided families of
/// the stepper.
pub fn dissipation(f: &Field, kernels: &KernelSet) -> Result<Dissipation> {
    let blocked = f.blocked();
    let a = compute_a_tensor(&blocked, kernels)?;
    dissipation_with(f, &blocked, &a, kernels)
}

/// [`dissipation`] with a precomputed `F` and `A[F]`.
pub fn dissipation_with(
    f: &Field,
    blocked: &Field,
    a: &crate::grid::SymTensorField,
    kernels: &KernelSet,
) -> Result<Dissipation> {
    let grid = *f.grid();
    let active: Vec<bool> = blocked.values().iter().map(|&x| x >= GUARD_FLOOR).collect();
    let guards_hit = active.iter().filter(|&&x| !x).count();
    let mut total = 0.0;
    for side in SIDES {
        let mut w = gradient(f.values(), &grid, side);
        for (idx, &on) in active.iter().enumerate() {
            if !on {
                for c in &mut w.comps {
                    c[idx] = 0.0;
                }
            }
        }
        let cross = apply_tensor_kernel(&w, kernels)?;
        let mut local = 0.0;
        for (idx, &on) in active.iter().enumerate() {
            if !on {
                continue;
            }
            let x = w.at(idx);
            let ax = a.apply(idx, x);
            let y = cross.at(idx);
            local += (x[0] * ax[0] + x[1] * ax[1] + x[2] * ax[2]) / blocked.values()[idx]
                - (x[0] * y[0] + x[1] * y[1] + x[2] * y[2]);
        }
        total += 0.5 * local;
    }
    Ok(Dissipation {
        value: total * grid.cell_volume(),
        guards_hit,
    })
}

/// Ratio `∫ A[F] ∇f·∇f / F  /  ∫ f^2`, which must tend to the coefficient of
/// the `∫ f^2` term for an equilibrium `f` (where `D` vanishes).
pub fn self_term_calibration(f: &Field, kernels: &KernelSet) -> Result<f64> {
    let grid = *f.grid();
    let blocked = f.blocked();
    let a = compute_a_tensor(&blocked, kernels)?;
    let mut first = 0.0;
    for side in SIDES {
        let w: VectorField = gradient(f.values(), &grid, side);
        for idx in 0..grid.len() {
            let bl = blocked.values()[idx];
            if bl < GUARD_FLOOR {
                continue;
            }
            let x = w.at(idx);
            let ax = a.apply(idx, x);
            first += 0.5 * (x[0] * ax[0] + x[1] * ax[1] + x[2] * ax[2]) / bl;
        }
    }
    let square: f64 = f.values().iter().map(|x| x * x).sum();
    Ok(first / square)
}

/// Full report for a distribution against a reference equilibrium.
pub fn entropy_report(f: &Field, m: &Field, kernels: &KernelSet) -> Result<EntropyReport> {
    let d = dissipation(f, kernels)?;
    Ok(EntropyReport {
        h: fermi_dirac_entropy(f)?,
        h_rel: relative_entropy(f, m)?,
        d: d.value,
        guards_hit: d.guards_hit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VelocityGrid;

    #[test]
    fn saturated_state_has_zero_entropy() {
        let g = VelocityGrid::new(4.0, 8, 2.0).unwrap();
        let f = Field::from_fn(g, |v| if v[0] > 0.0 { 0.5 } else { 0.0 });
        assert_eq!(fermi_dirac_entropy(&f).unwrap(), 0.0);
    }

    #[test]
    fn half_filling_gives_minus_ln2_per_volume() {
        let g = VelocityGrid::new(4.0, 8, 1.0).unwrap();
        let f = Field::from_fn(g, |v| if v[2] < 0.0 { 0.5 } else { 0.0 });
        let volume = 0.5 * 8f64.powi(3);
        let h = fermi_dirac_entropy(&f).unwrap();
        assert!((h + volume * std::f64::consts::LN_2).abs() < 1e-10);
    }

    #[test]
    fn out_of_band_is_rejected() {
        let g = VelocityGrid::new(4.0, 8, 1.0).unwrap();
        assert!(fermi_dirac_entropy(&Field::constant(g, 1.2)).is_err());
        assert!(fermi_dirac_entropy(&Field::constant(g, -0.1)).is_err());
        let m = Field::constant(g, 1.0);
        assert!(relative_entropy(&Field::constant(g, 0.5), &m).is_err());
    }

    #[test]
    fn classical_entropy_without_pauli_term() {
        let g = VelocityGrid::new(4.0, 8, 0.0).unwrap();
        let f = Field::constant(g, 2.0);
        let h = fermi_dirac_entropy(&f).unwrap();
        assert!((h - 2.0 * 2f64.ln() * 512.0).abs() < 1e-9);
    }
}
