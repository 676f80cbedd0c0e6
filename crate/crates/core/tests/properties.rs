use std::sync::{Arc, OnceLock};

use proptest::prelude::*;

use phonon_kinetics::collision::{build_kernel_1d, evaluate_collision, CollisionKernel};
use phonon_kinetics::dispersion::DispersionSpec;
use phonon_kinetics::grid::{MomentumGrid, WignerState};
use phonon_kinetics::kinetic::{entropy_production, free_transport_step_with, PhaseSpaceState, SpaceGrid, TransportScheme};
use phonon_kinetics::lattice::{free_evolve, from_normal_modes, to_normal_modes, ChainState, Potential};

const N: usize = 24;

fn kernels() -> &'static [CollisionKernel<f64>; 2] {
    static K: OnceLock<[CollisionKernel<f64>; 2]> = OnceLock::new();
    K.get_or_init(|| {
        let grid = Arc::new(MomentumGrid::torus(1, N).unwrap());
        [
            build_kernel_1d(grid.clone(), &DispersionSpec::optical(1.0, 1).unwrap(), 1e-12).unwrap(),
            build_kernel_1d(grid, &DispersionSpec::optical(0.3, 1).unwrap(), 1e-12).unwrap(),
        ]
    })
}

fn state(kernel: &CollisionKernel<f64>, vals: Vec<f64>) -> WignerState<f64> {
    WignerState::new(kernel.grid().clone(), vals).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn collisions_conserve_number_and_energy(vals in prop::collection::vec(0.05f64..5.0, N), which in 0usize..2) {
        let kernel = &kernels()[which];
        let w = state(kernel, vals);
        let r = evaluate_collision(kernel, &w).unwrap();
        let scale = r.loss.iter().chain(&r.gain).fold(0.0f64, |m, x| m.max(x.abs()));
        let number: f64 = r.total.iter().sum();
        let energy: f64 = r.total.iter().zip(kernel.omega()).map(|(c, o)| c * o).sum();
        prop_assert!(number.abs() <= 1e-12 * scale * N as f64);
        prop_assert!(energy.abs() <= 1e-12 * scale * N as f64);
    }

    #[test]
    fn entropy_production_is_nonnegative_and_consistent(vals in prop::collection::vec(0.05f64..5.0, N), which in 0usize..2) {
        let kernel = &kernels()[which];
        let w = state(kernel, vals);
        let sigma = entropy_production(kernel, &w).unwrap();
        prop_assert!(sigma >= 0.0);
        let c = evaluate_collision(kernel, &w).unwrap().total;
        let h = kernel.grid().weight();
        let via_rates: f64 = c.iter().zip(w.values()).map(|(c, v)| h * c / v).sum();
        prop_assert!((via_rates - sigma).abs() <= 1e-9 * sigma.max(1e-12));
    }

    #[test]
    fn affine_inverse_states_are_stationary(a in -0.5f64..3.0, c in 0.0f64..3.0, which in 0usize..2) {
        let kernel = &kernels()[which];
        let min_omega = kernel.omega().iter().fold(f64::MAX, |m, &o| m.min(o));
        prop_assume!(a + c * min_omega > 0.05 && a + c * 3.0 > 0.05);
        let w = state(kernel, kernel.omega().iter().map(|o| 1.0 / (a + c * o)).collect());
        let r = evaluate_collision(kernel, &w).unwrap();
        let loss = r.loss.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!(r.total.iter().all(|x| x.abs() <= 1e-10 * loss));
    }

    #[test]
    fn dispersion_is_even_and_periodic(k in -2.0f64..2.0, omega0 in 0.1f64..3.0) {
        let spec = DispersionSpec::optical(omega0, 1).unwrap();
        let w = spec.omega_1d(k);
        prop_assert!(w >= omega0 * (1.0 - 1e-15));
        prop_assert!((spec.omega_1d(-k) - w).abs() <= 1e-13);
        prop_assert!((spec.omega_1d(k + 1.0) - w).abs() <= 1e-12);
        let fpu = DispersionSpec::<f64>::fpu_chain();
        prop_assert!((fpu.omega_1d(-k) - fpu.omega_1d(k)).abs() <= 1e-13);
    }

    #[test]
    fn normal_modes_round_trip(q in prop::collection::vec(-2.0f64..2.0, 16), p in prop::collection::vec(-2.0f64..2.0, 16)) {
        let chain = ChainState::new(q, p, 0.0, Potential::OnsiteQuartic, DispersionSpec::optical(1.0, 1).unwrap()).unwrap();
        let back = from_normal_modes(&to_normal_modes(&chain).unwrap()).unwrap();
        for (x, y) in chain.q.iter().zip(&back.q).chain(chain.p.iter().zip(&back.p)) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn free_evolution_preserves_occupations(q in prop::collection::vec(-2.0f64..2.0, 16), t in -50.0f64..50.0) {
        let chain = ChainState::new(q, vec![0.0; 16], 0.0, Potential::OnsiteQuartic, DispersionSpec::optical(1.0, 1).unwrap()).unwrap();
        let a = to_normal_modes(&chain).unwrap();
        let moved = free_evolve(&a, t);
        for (x, y) in a.a.iter().zip(&moved.a) {
            prop_assert!((x.norm_sqr() - y.norm_sqr()).abs() <= 1e-12 * x.norm_sqr().max(1e-12));
        }
    }

    #[test]
    fn transport_conserves_cell_sums(vals in prop::collection::vec(0.0f64..3.0, 8 * 12), dt in 0.0f64..5.0, spectral in any::<bool>()) {
        let grid = Arc::new(MomentumGrid::torus(1, 12).unwrap());
        let spec = DispersionSpec::optical(1.0, 1).unwrap();
        let s = PhaseSpaceState::new(SpaceGrid::new(2.0, 8).unwrap(), grid, vals).unwrap();
        let scheme = if spectral { TransportScheme::Spectral } else { TransportScheme::SemiLagrangianLinear };
        let moved = free_transport_step_with(&s, &spec, dt, scheme).unwrap();
        for ik in 0..12 {
            let before: f64 = (0..8).map(|ir| s.get(ir, ik)).sum();
            let after: f64 = (0..8).map(|ir| moved.get(ir, ik)).sum();
            prop_assert!((before - after).abs() <= 1e-12 * before.max(1.0));
        }
        if !spectral {
            prop_assert!(moved.values().iter().all(|&v| v >= 0.0));
        }
    }
}
