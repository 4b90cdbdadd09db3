use lfd_core::coefficients::KernelSet;
use lfd_core::diagnostics::{
    fit_decay, moment_series, perturbation, weighted_distance, weighted_h_norm, MIN_FIT_POINTS,
    WEIGHT_FLOOR,
};
use lfd_core::equilibrium::{evaluate_equilibrium, fit_fermi_dirac};
use lfd_core::grid::norm_sq;
use lfd_core::stepper::{run, StepConfig};
use lfd_core::{Field, VelocityGrid};
use proptest::prelude::*;

fn equilibrium(grid: VelocityGrid) -> Field {
    let fit = fit_fermi_dirac(1.0, [0.0; 3], 1.5, grid.eps()).unwrap();
    evaluate_equilibrium(&fit.params, &grid).unwrap()
}

fn series(times: impl Iterator<Item = f64>, d: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    times.map(|t| (t, d(t))).collect()
}

#[test]
fn distance_agrees_with_the_perturbation_norm() {
    let grid = VelocityGrid::new(6.0, 16, 0.7).unwrap();
    let m = equilibrium(grid);
    let f = Field::from_fn(grid, |v| {
        let s = 1.0 + 0.2 * (v[0] - 0.5 * v[1]).sin();
        0.7 * s / (1.0 + (norm_sq(v) - 1.0).exp())
    });
    let direct = weighted_distance(&f, &m).unwrap();
    let h = perturbation(&f, &m).unwrap();
    let via_h = weighted_h_norm(&h, &m).unwrap();
    assert!(direct > 0.0);
    assert!(
        (direct - via_h).abs() <= 1e-12 * direct,
        "{direct} vs {via_h}"
    );
}

#[test]
fn distance_is_quadratic_in_the_amplitude() {
    let grid = VelocityGrid::new(6.0, 16, 1.0).unwrap();
    let m = equilibrium(grid);
    let eps = grid.eps();
    let phi = |v: [f64; 3]| v[0] * v[1] - 0.3 * v[2];
    let base = grid.integrate(m.values().iter().enumerate().map(|(i, &mv)| {
        let w = mv * (1.0 - eps * mv);
        if w < WEIGHT_FLOOR {
            0.0
        } else {
            phi(grid.node(i)).powi(2) * w
        }
    }));
    for alpha in [1e-1, 1e-2, 1e-3] {
        let values = m
            .values()
            .iter()
            .enumerate()
            .map(|(i, &mv)| mv + alpha * mv * (1.0 - eps * mv) * phi(grid.node(i)))
            .collect();
        let f = Field::from_values(grid, values).unwrap();
        let d = weighted_distance(&f, &m).unwrap();
        assert!(
            (d - alpha * alpha * base).abs() <= 1e-10 * alpha * alpha * base,
            "alpha {alpha}"
        );
    }
}

#[test]
fn equilibrium_has_zero_distance() {
    let grid = VelocityGrid::new(6.0, 12, 0.5).unwrap();
    let m = equilibrium(grid);
    assert_eq!(weighted_distance(&m, &m).unwrap(), 0.0);
    assert!(perturbation(&m, &m)
        .unwrap()
        .values()
        .iter()
        .all(|&x| x == 0.0));
}

#[test]
fn mismatched_grids_are_rejected() {
    let a = VelocityGrid::new(6.0, 12, 0.5).unwrap();
    let b = VelocityGrid::new(6.0, 12, 1.0).unwrap();
    assert!(weighted_distance(&Field::zeros(a), &Field::zeros(b)).is_err());
}

#[test]
fn power_law_is_recovered() {
    let s = series((0..200).map(|i| 0.1 * i as f64), |t| {
        0.4 * (1.0 + t).powi(-2)
    });
    let fit = fit_decay(&s, [1.0, 19.9]).unwrap();
    assert!((fit.exponent - 2.0).abs() < 1e-6, "{fit:?}");
    assert!(fit.residual < 1e-10);
}

#[test]
fn exponential_decay_steepens_with_the_window() {
    let s = series((0..400).map(|i| 0.05 * i as f64), |t| (-t).exp());
    let early = fit_decay(&s, [1.0, 5.0]).unwrap();
    let late = fit_decay(&s, [10.0, 19.0]).unwrap();
    assert!(late.exponent > early.exponent + 1.0, "{early:?} {late:?}");
    assert!(early.residual > 0.0);
}

#[test]
fn short_or_nonpositive_series_are_rejected() {
    let s = series((0..MIN_FIT_POINTS - 1).map(|i| i as f64), |t| {
        1.0 / (1.0 + t)
    });
    assert!(fit_decay(&s, [0.0, 100.0]).is_err());
    let mut s = series((0..20).map(|i| i as f64), |t| 1.0 / (1.0 + t));
    s[5].1 = 0.0;
    assert!(fit_decay(&s, [0.0, 100.0]).is_err());
}

#[test]
fn moment_series_follows_the_trajectory() {
    let grid = VelocityGrid::new(6.0, 12, 1.0).unwrap();
    let kernels = KernelSet::new(&grid);
    let f0 = Field::from_fn(grid, |v| {
        0.5 * (-norm_sq([v[0] - 0.8, v[1], v[2]])).exp()
            + 0.3 * (-norm_sq([v[0] + 0.8, v[1], v[2]])).exp()
    });
    let cfg = StepConfig::for_grid(&grid);
    let traj = run(&f0, 4.0 * cfg.tau, &cfg, &kernels, 1).unwrap();
    let zeroth = moment_series(&traj, 0.0).unwrap();
    assert_eq!(zeroth.len(), traj.records.len());
    for ((t, m), rec) in zeroth.iter().zip(&traj.records) {
        assert_eq!(*t, rec.t);
        assert_eq!(*m, rec.moments.mass);
    }
    for s in [2.0, 3.0] {
        let values = moment_series(&traj, s).unwrap();
        let first = values[0].1;
        assert!(
            values
                .iter()
                .all(|(_, x)| x.is_finite() && *x <= 1.01 * first),
            "s {s}: {values:?}"
        );
    }
    assert!(moment_series(&traj, -1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fitted_exponent_matches_a_pure_power(exponent in 0.1f64..5.0, prefactor in 1e-6f64..1e3) {
        let s = series((0..60).map(|i| 0.25 * i as f64), |t| prefactor * (1.0 + t).powf(-exponent));
        let fit = fit_decay(&s, [1.0, 15.0]).unwrap();
        prop_assert!((fit.exponent - exponent).abs() < 1e-9 * exponent.max(1.0));
        prop_assert!((fit.log_prefactor - prefactor.ln()).abs() < 1e-8 * prefactor.ln().abs().max(1.0));
    }
}
