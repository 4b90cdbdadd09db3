use lfd_core::equilibrium::{
    equilibrium_for, evaluate_equilibrium, fit_fermi_dirac, saturation_epsilon, EquilibriumParams,
};
use lfd_core::grid::{moments, VelocityGrid};
use std::f64::consts::PI;

/// Continuum moments by composite Simpson on a fine uniform radial mesh.
fn simpson_moments(p: &EquilibriumParams) -> (f64, f64) {
    let s_max = (p.a.ln().max(0.0) + 60.0).sqrt() / p.b.sqrt();
    let n = 400_000;
    let dr = s_max / n as f64;
    let (mut m0, mut m2) = (0.0, 0.0);
    for i in 0..=n {
        let r = i as f64 * dr;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let f = p.value([p.u[0] + r, p.u[1], p.u[2]]);
        m0 += w * r * r * f;
        m2 += w * r.powi(4) * f;
    }
    (4.0 * PI * m0 * dr / 3.0, 4.0 * PI * m2 * dr / 3.0)
}

#[test]
fn round_trip_across_eps_sweep() {
    let (rho, e) = (1.0, 1.5);
    let eps_sat = saturation_epsilon(rho, [0.0; 3], e).unwrap();
    let mut last_scaled_peak = 0.0;
    for eps in [1e-6, 0.1, 0.5, 0.9 * eps_sat] {
        let fit = fit_fermi_dirac(rho, [0.0; 3], e, eps).unwrap();
        assert!(fit.residual <= 1e-10, "eps {eps}: {fit:?}");
        let (m0, m2) = simpson_moments(&fit.params);
        assert!((m0 - rho).abs() <= 1e-10 * rho, "eps {eps}: mass {m0}");
        assert!((m2 - e).abs() <= 1e-10 * e, "eps {eps}: energy {m2}");
        let scaled = eps * fit.params.peak();
        assert!(scaled > last_scaled_peak && scaled < 1.0);
        last_scaled_peak = scaled;
    }
}

#[test]
fn polylog_series_agrees_with_quadrature() {
    let params = EquilibriumParams {
        a: 0.4,
        b: 1.3,
        u: [0.0; 3],
        eps: 0.1,
    };
    let m = params.moments().unwrap();
    let (mut j0, mut j2) = (0.0, 0.0);
    for k in 1..200 {
        let kf = k as f64;
        let c = (-params.eps).powi(k - 1) * params.a.powi(k);
        j0 += c * PI.sqrt() / 4.0 * kf.powf(-1.5);
        j2 += c * 3.0 * PI.sqrt() / 8.0 * kf.powf(-2.5);
    }
    let rho = 4.0 * PI * params.b.powf(-1.5) * j0;
    let ec = 4.0 * PI * params.b.powf(-2.5) * j2;
    assert!((m.mass - rho).abs() < 1e-13 * rho);
    assert!((m.energy - ec).abs() < 1e-13 * ec);
}

#[test]
fn galilean_shift_recovers_bulk_velocity() {
    let u0 = [0.3, -0.75, 1.25];
    let rho = 2.0;
    let p = u0.map(|x| rho * x);
    let e = 3.0 + rho * u0.iter().map(|x| x * x).sum::<f64>();
    let fit = fit_fermi_dirac(rho, p, e, 0.5).unwrap();
    assert_eq!(fit.params.u, u0);
    let centered = fit_fermi_dirac(rho, [0.0; 3], 3.0, 0.5).unwrap();
    assert!((fit.params.a - centered.params.a).abs() < 1e-12 * centered.params.a);
    assert!((fit.params.b - centered.params.b).abs() < 1e-12 * centered.params.b);
}

#[test]
fn saturation_closed_form() {
    let eps = saturation_epsilon(4.0 * PI / 3.0, [0.0; 3], 4.0 * PI / 5.0).unwrap();
    assert!((eps - 1.0).abs() < 1e-10);
    // Doubling the mass at fixed centered energy: R shrinks by 2^{-1/2}.
    let base = saturation_epsilon(1.0, [0.0; 3], 1.5).unwrap();
    let doubled = saturation_epsilon(2.0, [0.0; 3], 1.5).unwrap();
    let r = (5.0 * 1.5 / 6.0f64).sqrt();
    assert!((doubled - 4.0 * PI * r.powi(3) / 6.0).abs() < 1e-12);
    assert!((doubled / base - 2f64.powf(-2.5)).abs() < 1e-12);
    let p = [0.4, 0.1, -0.2];
    let shifted = saturation_epsilon(1.0, p, 1.5 + p.iter().map(|x| x * x).sum::<f64>()).unwrap();
    assert!((shifted - base).abs() < 1e-12);
    assert!(saturation_epsilon(1.0, [2.0, 0.0, 0.0], 1.0).is_err());
}

#[test]
fn evaluated_equilibrium_matches_targets_on_grid() {
    let fit = fit_fermi_dirac(1.0, [0.0; 3], 1.5, 1.0).unwrap();
    let grid = VelocityGrid::new(8.0, 64, 1.0).unwrap();
    let m = evaluate_equilibrium(&fit.params, &grid).unwrap();
    let mom = moments(&m);
    assert!((mom.mass - 1.0).abs() < 1e-4);
    assert!((mom.energy - 1.5).abs() < 1e-4);
    assert!(mom.momentum.iter().all(|p| p.abs() < 1e-12));
    assert!(m.values().iter().all(|&x| x > 0.0 && x < 1.0));
    let peak = fit.params.value(fit.params.u);
    assert!((peak - fit.params.a / (1.0 + fit.params.a)).abs() < 1e-15);
    let v = [0.3, -1.1, 2.0];
    let mirror = v.map(|x| -x);
    assert_eq!(fit.params.value(v), fit.params.value(mirror));
    let refit = equilibrium_for(&m).unwrap();
    assert!((refit.params.b - fit.params.b).abs() < 1e-6);
}

#[test]
fn eps_mismatch_is_rejected() {
    let fit = fit_fermi_dirac(1.0, [0.0; 3], 1.5, 0.5).unwrap();
    let grid = VelocityGrid::new(8.0, 16, 1.0).unwrap();
    assert!(evaluate_equilibrium(&fit.params, &grid).is_err());
}
