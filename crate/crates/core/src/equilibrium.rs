//! Fermi-Dirac equilibria `M(v) = a e^{-b|v-u|^2} / (1 + ε a e^{-b|v-u|^2})`.
//!
//! The fit works on the continuum moments: after centering, with
//! `s = √b |v - u|`,
//!
//! ```text
//! ρ   = 4π b^{-3/2} J_0(a),   J_n(a) = ∫_0^∞ s^{2+n} φ_a(s) ds,
//! E_c = 4π b^{-5/2} J_2(a),   φ_a(s) = 1 / (e^{s^2}/a + ε),
//! ```
//!
//! and the two radial integrals are evaluated by adaptive quadrature, so the
//! fit does not depend on any simulation grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, MomentVector, VelocityGrid};
use crate::quadrature;

const NEWTON_MAX: usize = 100;
const FIT_TOL: f64 = 1e-13;
const CONTINUATION_STAGES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumParams {
    pub a: f64,
    pub b: f64,
    pub u: [f64; 3],
    pub eps: f64,
}

impl EquilibriumParams {
    /// `M(v)`.
    pub fn value(&self, v: [f64; 3]) -> f64 {
        let d2 =
            (v[0] - self.u[0]).powi(2) + (v[1] - self.u[1]).powi(2) + (v[2] - self.u[2]).powi(2);
        occupation(self.a, self.eps, self.b * d2)
    }

    /// `M(u) = a / (1 + ε a)`.
    pub fn peak(&self) -> f64 {
        self.a / (1.0 + self.eps * self.a)
    }

    /// Continuum moments of `M` on the whole space.
    pub fn moments(&self) -> Result<MomentVector> {
        let j = RadialMoments::new(self.a, self.eps)?;
        let four_pi = 4.0 * std::f64::consts::PI;
        let mass = four_pi * self.b.powf(-1.5) * j.j0;
        let centered = four_pi * self.b.powf(-2.5) * j.j2;
        let u2 = self.u.iter().map(|x| x * x).sum::<f64>();
        Ok(MomentVector {
            mass,
            momentum: self.u.map(|x| mass * x),
            energy: centered + mass * u2,
        })
    }
}

/// `1 / (e^{x}/a + ε)` without overflow for large `x`.
#[inline]
fn occupation(a: f64, eps: f64, x: f64) -> f64 {
    let t = x - a.ln();
    if t > 0.0 {
        let e = (-t).exp();
        e / (1.0 + eps * e)
    } else {
        1.0 / (t.exp() + eps)
    }
}

/// `J_0`, `J_2` and their logarithmic derivatives `K_n = a dJ_n/da`.
struct RadialMoments {
    j0: f64,
    j2: f64,
    k0: f64,
    k2: f64,
}

impl RadialMoments {
    fn new(a: f64, eps: f64) -> Result<Self> {
        let ln_a = a.ln();
        let upper = (ln_a.max(0.0) + 60.0).sqrt();
        // Split at the Fermi edge, where the integrand drops by ~1/ε over a
        // width of order 1/s_F.
        let mut breaks = vec![0.0];
        if eps > 0.0 && eps * a > 1.0 {
            let edge = (eps * a).ln().sqrt();
            let width = 1.0 / edge.max(1.0);
            for x in [edge - 4.0 * width, edge, edge + 4.0 * width] {
                if x > 0.0 && x < upper {
                    breaks.push(x);
                }
            }
        }
        breaks.push(upper);
        let integral = |power: i32, derivative: bool| -> Result<f64> {
            let mut total = 0.0;
            for w in breaks.windows(2) {
                total += quadrature::integrate(
                    |s| {
                        let phi = occupation(a, eps, s * s);
                        let weight = if derivative {
                            phi * (1.0 - eps * phi)
                        } else {
                            phi
                        };
                        s.powi(power) * weight
                    },
                    w[0],
                    w[1],
                    0.0,
                    1e-14,
                )?;
            }
            Ok(total)
        };
        Ok(Self {
            j0: integral(2, false)?,
            j2: integral(4, false)?,
            k0: integral(2, true)?,
            k2: integral(4, true)?,
        })
    }
}

/// `ε` at which the saturated ball `ε^{-1} χ_{|v-u| <= R}` has the given
/// moments; smooth equilibria exist only below it.
pub fn saturation_epsilon(rho: f64, p: [f64; 3], energy: f64) -> Result<f64> {
    let centered = centered_energy(rho, p, energy)?;
    let r = (5.0 * centered / (3.0 * rho)).sqrt();
    Ok(4.0 * std::f64::consts::PI * r.powi(3) / (3.0 * rho))
}

fn centered_energy(rho: f64, p: [f64; 3], energy: f64) -> Result<f64> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "mass must be positive, got {rho}"
        )));
    }
    let centered = energy - p.iter().map(|x| x * x).sum::<f64>() / rho;
    if !(centered > 0.0 && centered.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "centered energy must be positive, got {centered}"
        )));
    }
    Ok(centered)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: EquilibriumParams,
    /// Largest relative mismatch of mass and centered energy.
    pub residual: f64,
    pub iterations: usize,
}

/// Solves for `(a, b, u)` matching mass `rho`, momentum `p` and energy
/// `energy` at the given `eps`.
pub fn fit_fermi_dirac(rho: f64, p: [f64; 3], energy: f64, eps: f64) -> Result<FitReport> {
    let centered = centered_energy(rho, p, energy)?;
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "eps must be nonnegative, got {eps}"
        )));
    }
    let eps_sat = saturation_epsilon(rho, p, energy)?;
    if eps >= eps_sat {
        return Err(Error::AboveSaturation { eps, eps_sat });
    }
    let u = p.map(|x| x / rho);
    let b0 = 1.5 * rho / centered;
    let a0 = rho * (b0 / std::f64::consts::PI).powf(1.5);
    let start = [a0.ln(), b0.ln()];

    let (x, iterations) = match newton(rho, centered, eps, start) {
        Ok(out) => out,
        Err(_) => {
            // Continuation in ε from the classical limit.
            let mut x = start;
            let mut total = 0;
            for stage in 1..=CONTINUATION_STAGES {
                let e = eps * stage as f64 / CONTINUATION_STAGES as f64;
                let (next, it) = newton(rho, centered, e, x)?;
                x = next;
                total += it;
            }
            (x, total)
        }
    };
    let params = EquilibriumParams {
        a: x[0].exp(),
        b: x[1].exp(),
        u,
        eps,
    };
    let r = log_residual(rho, centered, eps, x)?.0;
    let residual = r[0].abs().max(r[1].abs()).exp_m1().abs();
    Ok(FitReport {
        params,
        residual,
        iterations,
    })
}

/// Log-residuals of mass and centered energy and their Jacobian in
/// `(ln a, ln b)`.
fn log_residual(
    rho: f64,
    centered: f64,
    eps: f64,
    x: [f64; 2],
) -> Result<([f64; 2], [[f64; 2]; 2])> {
    let a = x[0].exp();
    let m = RadialMoments::new(a, eps)?;
    let four_pi = 4.0 * std::f64::consts::PI;
    let r = [
        (four_pi * m.j0 / rho).ln() - 1.5 * x[1],
        (four_pi * m.j2 / centered).ln() - 2.5 * x[1],
    ];
    let jac = [[m.k0 / m.j0, -1.5], [m.k2 / m.j2, -2.5]];
    Ok((r, jac))
}

fn newton(rho: f64, centered: f64, eps: f64, mut x: [f64; 2]) -> Result<([f64; 2], usize)> {
    let (mut r, mut jac) = log_residual(rho, centered, eps, x)?;
    let mut norm = r[0].abs().max(r[1].abs());
    for it in 1..=NEWTON_MAX {
        if norm <= FIT_TOL {
            return Ok((x, it - 1));
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let dx = [
            -(jac[1][1] * r[0] - jac[0][1] * r[1]) / det,
            -(-jac[1][0] * r[0] + jac[0][0] * r[1]) / det,
        ];
        // Backtracking on the residual norm, with steps capped at e^2 in a.
        let mut lambda = (2.0 / dx[0].abs().max(dx[1].abs())).min(1.0);
        let mut accepted = false;
        for _ in 0..40 {
            let trial = [x[0] + lambda * dx[0], x[1] + lambda * dx[1]];
            if let Ok((rt, jt)) = log_residual(rho, centered, eps, trial) {
                let nt = rt[0].abs().max(rt[1].abs());
                if nt.is_finite() && nt < norm * (1.0 - 1e-4 * lambda) || nt <= FIT_TOL {
                    x = trial;
                    r = rt;
                    jac = jt;
                    norm = nt;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if norm <= FIT_TOL * 100.0 {
        return Ok((x, NEWTON_MAX));
    }
    Err(Error::NonConvergence {
        what: "Fermi-Dirac moment fit",
        iterations: NEWTON_MAX,
        residual: norm,
    })
}

/// Samples `M` on the grid. The grid must carry the same `ε` as `params`.
pub fn evaluate_equilibrium(params: &EquilibriumParams, grid: &VelocityGrid) -> Result<Field> {
    if params.eps != grid.eps() {
        return Err(Error::GridMismatch(format!(
            "equilibrium has eps = {}, grid has eps = {}",
            params.eps,
            grid.eps()
        )));
    }
    if !(params.a > 0.0 && params.b > 0.0) {
        return Err(Error::InvalidArgument(
            "equilibrium needs a > 0 and b > 0".into(),
        ));
    }
    Ok(Field::from_fn(*grid, |v| params.value(v)))
}

/// Fits the equilibrium sharing the grid moments of `f`.
pub fn equilibrium_for(f: &Field) -> Result<FitReport> {
    let m = crate::grid::moments(f);
    fit_fermi_dirac(m.mass, m.momentum, m.energy, f.grid().eps())
}
