use std::sync::Arc;

use phonon_kinetics::collision::{build_kernel_1d, evaluate_collision};
use phonon_kinetics::dispersion::DispersionSpec;
use phonon_kinetics::grid::MomentumGrid;
use phonon_kinetics::invariants::{
    audit_invariant, fit_invariant, merger_invariant_residual, pair_invariant_residual, sample_merger_manifold,
    stationary_from_invariant, InvariantCandidate, MergerResidual,
};
use phonon_kinetics::kinetic::equilibrium_wigner;

fn fpu_kernel(n: usize) -> phonon_kinetics::Kernel {
    let grid = Arc::new(MomentumGrid::torus(1, n).unwrap());
    build_kernel_1d(grid, &DispersionSpec::fpu_chain(), 1e-12).unwrap()
}

#[test]
fn constants_and_frequency_are_pair_invariants() {
    let kernel = fpu_kernel(64);
    let one = pair_invariant_residual(&InvariantCandidate::constant(1.0), &kernel).unwrap();
    assert_eq!(one, 0.0);
    let omega = pair_invariant_residual(&InvariantCandidate::omega(), &kernel).unwrap();
    assert!(omega <= 1e-11, "{omega}");
}

#[test]
fn sine_is_not_a_pair_invariant() {
    let kernel = fpu_kernel(64);
    let r = pair_invariant_residual(&InvariantCandidate::sine(), &kernel).unwrap();
    assert!(r > 0.01, "{r}");
}

#[test]
fn optical_lattice_has_no_merger_manifold() {
    let spec = DispersionSpec::optical(1.0, 1).unwrap();
    let samples = sample_merger_manifold(&spec, 64, 0, 1, 1e-10).unwrap();
    assert!(samples.is_empty());
    let r = merger_invariant_residual(&InvariantCandidate::omega(), &spec, &samples).unwrap();
    assert_eq!(r, MergerResidual::ManifoldEmpty);
    let spec3 = DispersionSpec::optical(1.0, 3).unwrap();
    assert!(sample_merger_manifold(&spec3, 16, 200, 1, 1e-10).unwrap().is_empty());
}

#[test]
fn merger_residuals_on_a_nonempty_manifold() {
    let spec = DispersionSpec::<f64>::nls(1, 3.0).unwrap();
    let samples = sample_merger_manifold(&spec, 24, 0, 1, 1e-10).unwrap();
    assert!(!samples.is_empty());
    let MergerResidual::Residual(omega) =
        merger_invariant_residual(&InvariantCandidate::omega(), &spec, &samples).unwrap()
    else {
        panic!("manifold reported empty");
    };
    assert!(omega <= 1e-9, "{omega}");
    let MergerResidual::Residual(one) =
        merger_invariant_residual(&InvariantCandidate::constant(1.0), &spec, &samples).unwrap()
    else {
        panic!("manifold reported empty");
    };
    // 1 + 1 + 1 - 1 over max |psi| = 1
    assert!((one - 2.0).abs() < 1e-12);
}

#[test]
fn affine_fit_recovers_coefficients() {
    let grid = MomentumGrid::<f64>::torus(1, 64).unwrap();
    let spec = DispersionSpec::fpu_chain();
    let fit = fit_invariant(&InvariantCandidate::affine(3.0, 2.0), &grid, &spec).unwrap();
    assert!((fit.a - 3.0).abs() < 1e-12 && (fit.c - 2.0).abs() < 1e-12 && fit.residual <= 1e-12);
}

/// Normal equations for the projection of `omega^2` on `{1, omega}`.
#[test]
fn squared_frequency_fit_matches_normal_equations() {
    let n = 128;
    let grid = MomentumGrid::<f64>::torus(1, n).unwrap();
    let spec = DispersionSpec::fpu_chain();
    let om: Vec<f64> = (0..n).map(|i| spec.omega_1d(grid.coord(i))).collect();
    let psi: Vec<f64> = om.iter().map(|w| w * w).collect();
    let nf = n as f64;
    let (s1, s2) = (om.iter().sum::<f64>(), om.iter().map(|w| w * w).sum::<f64>());
    let (p0, p1) = (psi.iter().sum::<f64>(), psi.iter().zip(&om).map(|(p, w)| p * w).sum::<f64>());
    let det = nf * s2 - s1 * s1;
    let a = (p0 * s2 - p1 * s1) / det;
    let c = (nf * p1 - s1 * p0) / det;
    let res = psi.iter().zip(&om).map(|(p, w)| (p - a - c * w).powi(2)).sum::<f64>().sqrt()
        / psi.iter().map(|p| p * p).sum::<f64>().sqrt();
    let fit = fit_invariant(&InvariantCandidate::omega_squared(), &grid, &spec).unwrap();
    assert!((fit.a - a).abs() < 1e-10 && (fit.c - c).abs() < 1e-10);
    assert!((fit.residual - res).abs() < 1e-10 && fit.residual > 0.05, "{} vs {res}", fit.residual);
}

#[test]
fn stationary_states_from_invariants() {
    let grid = Arc::new(MomentumGrid::<f64>::torus(1, 48).unwrap());
    let spec = DispersionSpec::optical(1.0, 1).unwrap();
    let w = stationary_from_invariant(0.0, 1.5, grid.clone(), &spec).unwrap();
    let eq = equilibrium_wigner(1.5, grid.clone(), &spec).unwrap();
    for (x, y) in w.values().iter().zip(eq.values()) {
        assert!((x - y).abs() < 1e-15);
    }
    let kernel = build_kernel_1d(grid.clone(), &spec, 1e-12).unwrap();
    let flat = stationary_from_invariant(1.0, 0.0, grid.clone(), &spec).unwrap();
    let r = evaluate_collision(&kernel, &flat).unwrap();
    let loss = r.loss.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(r.total.iter().all(|x| x.abs() <= 1e-10 * loss));
    assert!(stationary_from_invariant(-1.0, 0.0, grid, &spec).is_err());
}

#[test]
fn audit_reports_fit_and_manifold() {
    let grid = Arc::new(MomentumGrid::<f64>::torus(1, 48).unwrap());
    let spec = DispersionSpec::optical(1.0, 1).unwrap();
    let kernel = build_kernel_1d(grid, &spec, 1e-12).unwrap();
    let samples = sample_merger_manifold(&spec, 48, 0, 1, 1e-10).unwrap();
    let audit = audit_invariant(&InvariantCandidate::affine(0.5, 2.0), &kernel, &samples).unwrap();
    assert!((audit.a - 0.5).abs() < 1e-12 && (audit.c - 2.0).abs() < 1e-12);
    assert!(audit.max_pair_residual.unwrap() < 1e-11);
    assert_eq!(audit.merger_manifold, "empty");
    let json = serde_json::to_value(&audit).unwrap();
    for key in ["candidate", "a", "c", "residual", "max_pair_residual", "merger_manifold"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
}
