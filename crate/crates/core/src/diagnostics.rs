//! Post-processing of trajectories: distance to equilibrium, algebraic decay
//! fits and moment propagation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{weighted_norm, Field};
use crate::stepper::Trajectory;

/// Nodes where `M(1 - εM)` is below this value are left out of the weighted
/// distance: there the weight is far below the solver's absolute accuracy
/// and `(f - M)²/m` would only measure round-off.
pub const WEIGHT_FLOOR: f64 = 1e-14;

/// Start of the fit window used when none is given.
pub const DEFAULT_TRANSIENT: f64 = 1.0;

/// Minimum number of samples in a decay-fit window.
pub const MIN_FIT_POINTS: usize = 8;

fn weight(m: f64, eps: f64) -> f64 {
    m * (1.0 - eps * m)
}

/// `∫ (f - M)² / (M(1 - εM)) dv`.
pub fn weighted_distance(f: &Field, m: &Field) -> Result<f64> {
    f.grid().ensure_same(m.grid())?;
    let eps = f.grid().eps();
    Ok(f.grid()
        .integrate(f.values().iter().zip(m.values()).map(|(&x, &mv)| {
            let w = weight(mv, eps);
            if w < WEIGHT_FLOOR {
                0.0
            } else {
                (x - mv) * (x - mv) / w
            }
        })))
}

/// `h = (f - M)/(M(1 - εM))`, zero where the weight is below the floor.
pub fn perturbation(f: &Field, m: &Field) -> Result<Field> {
    f.grid().ensure_same(m.grid())?;
    let eps = f.grid().eps();
    let values = f
        .values()
        .iter()
        .zip(m.values())
        .map(|(&x, &mv)| {
            let w = weight(mv, eps);
            if w < WEIGHT_FLOOR {
                0.0
            } else {
                (x - mv) / w
            }
        })
        .collect();
    Field::from_values(*f.grid(), values)
}

/// `∫ h² M(1 - εM) dv`; equals [`weighted_distance`] for `h` from
/// [`perturbation`].
pub fn weighted_h_norm(h: &Field, m: &Field) -> Result<f64> {
    h.grid().ensure_same(m.grid())?;
    let eps = h.grid().eps();
    Ok(h.grid()
        .integrate(h.values().iter().zip(m.values()).map(|(&x, &mv)| {
            let w = weight(mv, eps);
            if w < WEIGHT_FLOOR {
                0.0
            } else {
                x * x * w
            }
        })))
}

/// Least-squares fit `d ≈ C (1 + t)^{-N}` over a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub window: [f64; 2],
    pub exponent: f64,
    pub log_prefactor: f64,
    /// Root-mean-square residual of `ln d` about the fitted line.
    pub residual: f64,
    pub points: usize,
}

/// Fits `ln d` against `ln(1 + t)` for samples with `t` in `window`.
pub fn fit_decay(series: &[(f64, f64)], window: [f64; 2]) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, _)| *t >= window[0] && *t <= window[1])
        .copied()
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::InvalidArgument(format!(
            "decay fit needs at least {MIN_FIT_POINTS} points in [{}, {}], got {}",
            window[0],
            window[1],
            pts.len()
        )));
    }
    if let Some((t, d)) = pts.iter().find(|(_, d)| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "decay fit needs positive values, got {d} at t = {t}"
        )));
    }
    let xy: Vec<(f64, f64)> = pts.iter().map(|(t, d)| ((1.0 + t).ln(), d.ln())).collect();
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument(
            "decay fit window has a single time".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xy
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    Ok(DecayFit {
        window,
        exponent: -slope,
        log_prefactor: intercept,
        residual: (ss / n).sqrt(),
        points: xy.len(),
    })
}

/// `‖f(t)‖_{L¹_s}` for every snapshot.
pub fn moment_series(traj: &Trajectory, s: f64) -> Result<Vec<(f64, f64)>> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "moment order must be nonnegative, got {s}"
        )));
    }
    traj.snapshots
        .iter()
        .map(|(t, f)| Ok((*t, weighted_norm(f, 1.0, s)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let series: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let t = 0.5 * i as f64;
                (t, 3.0 * (1.0 + t).powf(-2.0))
            })
            .collect();
        let fit = fit_decay(&series, [1.0, 20.0]).unwrap();
        assert!((fit.exponent - 2.0).abs() < 1e-10);
        assert!(fit.residual < 1e-12);
        assert!((fit.log_prefactor - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn too_few_points() {
        let series: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 1.0)).collect();
        assert!(fit_decay(&series, [0.0, 10.0]).is_err());
    }
}
