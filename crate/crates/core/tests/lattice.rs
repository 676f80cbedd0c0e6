use std::f64::consts::PI;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use phonon_kinetics::dispersion::{build_custom_dispersion, Coupling, DispersionSpec};
use phonon_kinetics::lattice::{
    estimate_power_spectrum, free_evolve, from_normal_modes, hamiltonian, mode_momentum, mode_to_grid_index,
    run_microscopic_experiment, sample_gibbs_ensemble, spectrum_covariance, to_normal_modes, ChainState,
    ComplexField, EnsembleSpec, InitialSpectrum, Potential,
};
use phonon_kinetics::Error;

fn optical() -> DispersionSpec<f64> {
    DispersionSpec::optical(1.0, 1).unwrap()
}

fn random_chain(l: usize, seed: u64) -> ChainState<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
    let p = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
    ChainState::new(q, p, 0.0, Potential::OnsiteQuartic, optical()).unwrap()
}

fn direct_dft(x: &[f64], j: usize) -> Complex<f64> {
    let l = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(s, &v)| v * Complex::from_polar(1.0, -2.0 * PI * j as f64 * s as f64 / l))
        .sum()
}

#[test]
fn two_site_harmonic_energy_matches_quadratic_form() {
    let couplings = [(0, 2.0), (1, -1.0), (-1, -1.0)]
        .iter()
        .map(|&(o, v)| Coupling { offset: vec![o], value: v })
        .collect();
    let disp = build_custom_dispersion(couplings, 1).unwrap();
    let chain = ChainState::new(vec![1.0, -1.0], vec![0.0, 0.0], 0.0, Potential::OnsiteQuartic, disp).unwrap();
    // on two sites both neighbours of x are the other site
    let q = [1.0f64, -1.0];
    let mut quad = 0.0f64;
    for x in 0..2 {
        quad += 2.0 * q[x] * q[x];
        quad += -1.0 * q[x] * q[(x + 1) % 2];
        quad += -1.0 * q[x] * q[(x + 1) % 2];
    }
    let e = hamiltonian(&chain);
    assert!((e.harmonic - 0.5 * quad).abs() < 1e-14);
    assert_eq!(e.harmonic, 4.0);
    assert_eq!(e.anharmonic, 0.0);
}

#[test]
fn rest_state_is_a_fixed_point() {
    let mut chain = ChainState::at_rest(16, 0.3, Potential::OnsiteQuartic, optical()).unwrap();
    chain.verlet(0.01, 100);
    assert!(chain.q.iter().chain(&chain.p).all(|&x| x == 0.0));
    let a = to_normal_modes(&chain).unwrap();
    assert!(a.a.iter().all(|z| z.norm() == 0.0));
}

#[test]
fn harmonic_energy_equals_mode_sum() {
    let chain = random_chain(64, 3);
    let a = to_normal_modes(&chain).unwrap();
    let l = 64.0;
    let mode_sum: f64 = a
        .a
        .iter()
        .enumerate()
        .map(|(j, z)| optical().omega_1d(mode_momentum(j, 64)) * z.norm_sqr() / l)
        .sum();
    let e = hamiltonian(&chain).harmonic;
    assert!((mode_sum - e).abs() <= 1e-10 * e, "{mode_sum} vs {e}");
}

#[test]
fn single_site_excitation_matches_direct_transform() {
    let l = 8;
    let mut q = vec![0.0; l];
    q[0] = 1.0;
    let chain = ChainState::new(q.clone(), vec![0.0; l], 0.0, Potential::OnsiteQuartic, optical()).unwrap();
    let a = to_normal_modes(&chain).unwrap();
    for j in 0..l {
        let omega = optical().omega_1d(mode_momentum(j, l));
        let expected = direct_dft(&q, j) * omega.sqrt() / 2f64.sqrt();
        assert!((a.a[j] - expected).norm() < 1e-13);
        assert!((a.a[j].norm_sqr() - omega / 2.0).abs() < 1e-13);
    }
}

#[test]
fn single_mode_reconstructs_a_plane_wave() {
    let l = 8;
    let j0 = 3;
    let mut a = vec![Complex::new(0.0, 0.0); l];
    a[j0] = Complex::new(1.0, 0.0);
    let chain = from_normal_modes(&ComplexField::new(a, optical()).unwrap()).unwrap();
    let k0 = mode_momentum::<f64>(j0, l);
    let omega = optical().omega_1d(k0);
    for x in 0..l {
        let theta = 2.0 * PI * k0 * x as f64;
        let q = 2f64.sqrt() * theta.cos() / (l as f64 * omega.sqrt());
        let p = (2.0 * omega).sqrt() * theta.sin() / l as f64;
        assert!((chain.q[x] - q).abs() < 1e-14 && (chain.p[x] - p).abs() < 1e-14);
    }
}

#[test]
fn normal_mode_round_trip() {
    for seed in 0..5 {
        let chain = random_chain(32, seed);
        let back = from_normal_modes(&to_normal_modes(&chain).unwrap()).unwrap();
        for (x, y) in chain.q.iter().zip(&back.q).chain(chain.p.iter().zip(&back.p)) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn harmonic_dynamics_rotates_the_mode_phase() {
    let l = 16;
    let j0 = 2;
    let mut a = vec![Complex::new(0.0, 0.0); l];
    a[j0] = Complex::new(1.0, 0.0);
    let mut chain = from_normal_modes(&ComplexField::new(a, optical()).unwrap()).unwrap();
    chain.verlet(1e-3, 1000);
    let after = to_normal_modes(&chain).unwrap();
    let omega = optical().omega_1d(mode_momentum(j0, l));
    let expected = Complex::from_polar(1.0, -omega);
    assert!((after.a[j0] - expected).norm() < 1e-4, "{:?} vs {expected:?}", after.a[j0]);
}

#[test]
fn free_evolution_identities() {
    let a = to_normal_modes(&random_chain(32, 9)).unwrap();
    let same = free_evolve(&a, 0.0);
    assert_eq!(same.a, a.a);
    let (t1, t2) = (0.7, 2.3);
    let composed = free_evolve(&free_evolve(&a, t1), t2);
    let direct = free_evolve(&a, t1 + t2);
    for ((x, y), z) in composed.a.iter().zip(&direct.a).zip(&a.a) {
        assert!((x - y).norm() < 1e-12);
        assert!((y.norm() - z.norm()).abs() < 1e-14);
    }
}

#[test]
fn cold_ensemble_has_vanishing_variance() {
    let spectra: Vec<f64> = [1.0, 1e3, 1e6]
        .iter()
        .map(|&beta| {
            let spec = EnsembleSpec {
                beta,
                realizations: 200,
                seed: 5,
                l: 16,
            };
            let fields = sample_gibbs_ensemble(&spec, &optical()).unwrap();
            estimate_power_spectrum(&fields).unwrap().state.values().iter().sum()
        })
        .collect();
    assert!(spectra[1] < 1e-2 * spectra[0] && spectra[2] < 1e-2 * spectra[1], "{spectra:?}");
}

#[test]
fn zero_fields_give_zero_spectrum() {
    let fields: Vec<_> = (0..3)
        .map(|_| ComplexField::new(vec![Complex::new(0.0, 0.0); 8], optical()).unwrap())
        .collect();
    let est = estimate_power_spectrum(&fields).unwrap();
    assert!(est.state.values().iter().all(|&w| w == 0.0));
}

#[test]
fn covariance_preconditions_and_degenerate_ensembles() {
    let field = to_normal_modes(&random_chain(8, 1)).unwrap();
    let copies = vec![field.clone(); 10];
    assert_eq!(spectrum_covariance(&copies, 1, 2).unwrap(), 0.0);
    assert!(spectrum_covariance(&copies, 3, 3).is_err());
}

#[test]
fn gibbs_spectrum_matches_inverse_frequency() {
    let spec = EnsembleSpec {
        beta: 2.0,
        realizations: 4000,
        seed: 11,
        l: 32,
    };
    let fields = sample_gibbs_ensemble(&spec, &optical()).unwrap();
    let est = estimate_power_spectrum(&fields).unwrap();
    let grid = est.state.grid().clone();
    // aggregate chi-square over modes, robust against a single 3-sigma excursion
    let chi2: f64 = (0..32)
        .map(|g| {
            let target = 1.0 / (2.0 * optical().omega(&grid.point(g)));
            ((est.state.values()[g] - target) / est.stderr[g]).powi(2)
        })
        .sum();
    assert!(chi2 < 32.0 + 5.0 * 64f64.sqrt(), "chi2 = {chi2}");
}

#[test]
fn harmonic_run_preserves_any_spectrum() {
    let l = 32;
    let spec = EnsembleSpec {
        beta: 1.0,
        realizations: 200,
        seed: 3,
        l,
    };
    let grid = phonon_kinetics::grid::MomentumGrid::<f64>::torus(1, l).unwrap();
    let w: Vec<f64> = (0..l).map(|g| 1.0 + 0.8 * (2.0 * PI * grid.coord(g)).cos().powi(2)).collect();
    let run = run_microscopic_experiment(
        &spec,
        &optical(),
        0.0,
        Potential::OnsiteQuartic,
        &InitialSpectrum::Custom(w),
        &[0.0, 5.0, 10.0],
        0.01,
    )
    .unwrap();
    let first = &run.snapshots[0];
    for snap in &run.snapshots[1..] {
        for g in 0..l {
            let d = (snap.state.values()[g] - first.state.values()[g]).abs();
            assert!(d <= 3.0 * first.stderr[g], "mode {g}: {d}");
            assert!(d <= 1e-3 * first.state.values()[g], "mode {g}: {d}");
        }
    }
}

fn energy_matched_distance(snap: &phonon_kinetics::lattice::SpectrumEstimate<f64>) -> f64 {
    let w = snap.state.values();
    let grid = snap.state.grid();
    let omega: Vec<f64> = (0..w.len()).map(|g| optical().omega(&grid.point(g))).collect();
    let mean_energy: f64 = w.iter().zip(&omega).map(|(a, b)| a * b).sum::<f64>() / w.len() as f64;
    let beta = 1.0 / mean_energy;
    let target: Vec<f64> = omega.iter().map(|o| 1.0 / (beta * o)).collect();
    let num: f64 = w.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = target.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

#[test]
fn anharmonic_gibbs_run_stays_near_equilibrium() {
    let l = 32;
    let spec = EnsembleSpec {
        beta: 1.0,
        realizations: 400,
        seed: 8,
        l,
    };
    let run = run_microscopic_experiment(
        &spec,
        &optical(),
        0.1,
        Potential::OnsiteQuartic,
        &InitialSpectrum::Gibbs,
        &[0.0, 20.0],
        0.02,
    )
    .unwrap();
    let grid = run.snapshots[0].state.grid().clone();
    for snap in &run.snapshots {
        for g in 0..l {
            let target = 1.0 / optical().omega(&grid.point(g));
            let d = (snap.state.values()[g] - target).abs();
            // 4 sigma statistical band plus a sqrt(lambda) anharmonic shift
            assert!(d <= 4.0 * snap.stderr[g] + 0.1f64.sqrt() * 0.3 * target, "mode {g}: {d}");
        }
    }
}

#[test]
fn anharmonic_run_drifts_toward_equilibrium() {
    let l = 32;
    let spec = EnsembleSpec {
        beta: 1.0,
        realizations: 200,
        seed: 21,
        l,
    };
    let grid = phonon_kinetics::grid::MomentumGrid::<f64>::torus(1, l).unwrap();
    let w: Vec<f64> = (0..l)
        .map(|g| 0.2 + 2.0 * (-(grid.coord(g) - 0.25).powi(2) * 40.0).exp())
        .collect();
    let run = run_microscopic_experiment(
        &spec,
        &optical(),
        1.0,
        Potential::OnsiteQuartic,
        &InitialSpectrum::Custom(w),
        &[0.0, 100.0],
        0.02,
    )
    .unwrap();
    let d0 = energy_matched_distance(&run.snapshots[0]);
    let d1 = energy_matched_distance(&run.snapshots[1]);
    assert!(d1 < 0.7 * d0, "{d0} -> {d1}");
}

#[test]
fn energy_drift_aborts_coarse_runs() {
    let spec = EnsembleSpec {
        beta: 0.05,
        realizations: 2,
        seed: 1,
        l: 16,
    };
    let r = run_microscopic_experiment(&spec, &optical(), 1.0, Potential::OnsiteQuartic, &InitialSpectrum::Gibbs, &[5.0], 0.5);
    assert!(matches!(r, Err(Error::EnergyDrift { .. })), "{r:?}");
}

#[test]
fn acoustic_chain_has_no_normal_modes() {
    let chain = ChainState::at_rest(8, 0.0, Potential::OnsiteQuartic, DispersionSpec::fpu_chain()).unwrap();
    assert!(matches!(to_normal_modes(&chain), Err(Error::ZeroFrequency(_))));
}

#[test]
fn grid_index_places_zero_mode_at_the_center() {
    assert_eq!(mode_to_grid_index(0, 8), 4);
    let grid = phonon_kinetics::grid::MomentumGrid::<f64>::torus(1, 8).unwrap();
    for j in 0..8 {
        assert!((grid.coord(mode_to_grid_index(j, 8)) - mode_momentum::<f64>(j, 8)).abs() < 1e-15);
    }
}
