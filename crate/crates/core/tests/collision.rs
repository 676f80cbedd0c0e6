use std::f64::consts::PI;
use std::sync::Arc;

use phonon_kinetics::collision::{
    build_kernel_1d, build_kernel_1d_cached, build_kernel_1d_with, evaluate_collision, evaluate_collision_nls, Channel,
    KernelOptions,
};
use phonon_kinetics::dispersion::{build_custom_dispersion, Coupling, DispersionSpec};
use phonon_kinetics::grid::{MomentumGrid, WignerState};

fn omega_optical(k: f64) -> f64 {
    (1.0 + 4.0 * (PI * k).sin().powi(2)).sqrt()
}

fn smooth_w(k: f64) -> f64 {
    1.0 + 0.5 * (2.0 * PI * k).cos() + 0.3 * (6.0 * PI * k).sin()
}

fn test_fn(k: f64) -> f64 {
    (4.0 * PI * k).cos() + 0.5 * (2.0 * PI * k).sin()
}

fn wrap(x: f64) -> f64 {
    x - (x + 0.5).floor()
}

/// Pair part of the continuum collision integral at `k` for the optical
/// chain: the energy delta is resolved in `k2` by scan and bisection, `k1`
/// by the midpoint rule.
fn continuum_pair_rate(k: f64, m1: usize, m2: usize) -> f64 {
    let (w, o) = (smooth_w(k), omega_optical(k));
    let mut total = 0.0;
    for (s1, s2, s3) in [(1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
        for a in 0..m1 {
            let k1 = -0.5 + (a as f64 + 0.5) / m1 as f64;
            let k3 = |k2: f64| wrap(-s3 * (k + s1 * k1 + s2 * k2));
            let g = |k2: f64| o + s1 * omega_optical(k1) + s2 * omega_optical(k2) + s3 * omega_optical(k3(k2));
            let mut prev = g(-0.5);
            for b in 1..=m2 {
                let hi = -0.5 + b as f64 / m2 as f64;
                let cur = g(hi);
                if prev.signum() != cur.signum() {
                    let (mut l, mut r) = (hi - 1.0 / m2 as f64, hi);
                    for _ in 0..60 {
                        let mid = 0.5 * (l + r);
                        if g(mid).signum() == g(l).signum() {
                            l = mid;
                        } else {
                            r = mid;
                        }
                    }
                    let k2 = 0.5 * (l + r);
                    let d = 1e-7;
                    let slope = (g(k2 + d) - g(k2 - d)) / (2.0 * d);
                    let q3 = k3(k2);
                    let (w1, w2, w3) = (smooth_w(k1), smooth_w(k2), smooth_w(q3));
                    let bracket = w1 * w2 * w3 + w * (s1 * w2 * w3 + s2 * w1 * w3 + s3 * w1 * w2);
                    total += bracket / (omega_optical(k1) * omega_optical(k2) * omega_optical(q3) * slope.abs()) / m1 as f64;
                }
                prev = cur;
            }
        }
    }
    12.0 * PI / (16.0 * o) * total
}

#[test]
fn kernel_matches_continuum_integral_in_weak_form() {
    let mk = 128;
    let oracle: f64 = (0..mk)
        .map(|a| {
            let k = -0.5 + (a as f64 + 0.5) / mk as f64;
            test_fn(k) * continuum_pair_rate(k, 1000, 200)
        })
        .sum::<f64>()
        / mk as f64;
    let spec = DispersionSpec::optical(1.0, 1).unwrap();
    let n = 256;
    let grid = Arc::new(MomentumGrid::<f64>::torus(1, n).unwrap());
    let w = WignerState::new(grid.clone(), (0..n).map(|i| smooth_w(grid.coord(i))).collect()).unwrap();
    let kernel = build_kernel_1d(grid.clone(), &spec, 1e-12).unwrap();
    let c = evaluate_collision(&kernel, &w).unwrap().total;
    let weak: f64 = (0..n).map(|i| test_fn(grid.coord(i)) * c[i]).sum::<f64>() / n as f64;
    assert!((weak - oracle).abs() <= 0.05 * oracle.abs(), "kernel {weak} vs quadrature {oracle}");
}

#[test]
fn fpu_chain_has_pair_collisions() {
    let grid = Arc::new(MomentumGrid::torus(1, 64).unwrap());
    let kernel = build_kernel_1d(grid, &DispersionSpec::<f64>::fpu_chain(), 1e-12).unwrap();
    assert!(kernel.diagnostics().pair_entries > 0);
    assert!(kernel.entries().iter().any(|e| e.channel == Channel::Pair));
}

#[test]
fn entries_are_on_shell_positive_and_nondegenerate() {
    for spec in [DispersionSpec::optical(1.0, 1).unwrap(), DispersionSpec::fpu_chain()] {
        let grid = Arc::new(MomentumGrid::torus(1, 48).unwrap());
        let kernel = build_kernel_1d(grid, &spec, 1e-12).unwrap();
        for e in kernel.entries() {
            let om: Vec<f64> = e.momenta.iter().map(|&k| spec.omega_1d(k)).collect();
            let signs = e.channel.signs();
            let residual: f64 = (0..4).map(|s| signs[s] as f64 * om[s]).sum();
            assert!(residual.abs() <= 1e-10, "{e:?}");
            assert!(e.weight.is_finite() && e.weight > 0.0);
            // exchange roots would repeat an incoming momentum among the outgoing ones
            if e.channel == Channel::Pair {
                for out in [e.momenta[2], e.momenta[3]] {
                    for inc in [e.momenta[0], e.momenta[1]] {
                        assert!(wrap(out - inc).abs() > 1e-9, "{e:?}");
                    }
                }
            }
        }
        assert_eq!(kernel.diagnostics().all_plus_roots, 0);
        assert_eq!(kernel.diagnostics().sigma_channels["(+1,+1,+1)"], 0);
    }
}

#[test]
fn label_order_does_not_change_rates() {
    let spec = DispersionSpec::optical(0.7, 1).unwrap();
    let grid = Arc::new(MomentumGrid::<f64>::torus(1, 40).unwrap());
    let w = WignerState::new(grid.clone(), (0..40).map(|i| smooth_w(grid.coord(i))).collect()).unwrap();
    let plain = build_kernel_1d(grid.clone(), &spec, 1e-12).unwrap();
    let swapped = build_kernel_1d_with(
        grid,
        &spec,
        KernelOptions {
            swap_pair_labels: true,
            ..KernelOptions::default()
        },
    )
    .unwrap();
    let a = evaluate_collision(&plain, &w).unwrap().total;
    let b = evaluate_collision(&swapped, &w).unwrap().total;
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-12 * scale);
    }
}

#[test]
fn single_precision_kernel_annihilates_equilibrium() {
    let spec = DispersionSpec::<f32>::optical(1.0, 1).unwrap();
    let grid = Arc::new(MomentumGrid::<f32>::torus(1, 32).unwrap());
    let kernel = build_kernel_1d(grid.clone(), &spec, 1e-5).unwrap();
    assert!(!kernel.is_empty());
    let w = WignerState::new(grid, kernel.omega().iter().map(|o| 1.0 / o).collect()).unwrap();
    let r = evaluate_collision(&kernel, &w).unwrap();
    let loss = r.loss.iter().fold(0.0f32, |m, x| m.max(x.abs()));
    let total = r.total.iter().fold(0.0f32, |m, x| m.max(x.abs()));
    assert!(total <= 1e-5 * loss, "{total} vs {loss}");
}

#[test]
fn next_nearest_neighbour_chain_conserves_and_annihilates() {
    let couplings = [(0, 3.5), (1, -1.0), (-1, -1.0), (2, -0.25), (-2, -0.25)]
        .iter()
        .map(|&(o, v)| Coupling { offset: vec![o], value: v })
        .collect();
    let spec = build_custom_dispersion(couplings, 1).unwrap();
    let grid = Arc::new(MomentumGrid::<f64>::torus(1, 48).unwrap());
    let kernel = build_kernel_1d(grid.clone(), &spec, 1e-12).unwrap();
    let omega = kernel.omega().to_vec();
    let w = WignerState::new(grid.clone(), (0..48).map(|i| smooth_w(grid.coord(i))).collect()).unwrap();
    let c = evaluate_collision(&kernel, &w).unwrap().total;
    let h = grid.weight();
    let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let number: f64 = c.iter().map(|x| x * h).sum();
    let energy: f64 = c.iter().zip(&omega).map(|(x, o)| x * o * h).sum();
    assert!(number.abs() <= 1e-12 * scale && energy.abs() <= 1e-12 * scale);
    let eq = WignerState::new(grid, omega.iter().map(|o| 1.0 / (0.3 + 2.0 * o)).collect()).unwrap();
    let r = evaluate_collision(&kernel, &eq).unwrap();
    let loss = r.loss.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(r.total.iter().all(|x| x.abs() <= 1e-10 * loss));
}

#[test]
fn cached_kernel_is_identical_to_fresh_build() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DispersionSpec::fpu_chain();
    let grid = Arc::new(MomentumGrid::<f64>::torus(1, 32).unwrap());
    let fresh = build_kernel_1d_with(grid.clone(), &spec, KernelOptions::default()).unwrap();
    let (first, hit1) = build_kernel_1d_cached(grid.clone(), &spec, KernelOptions::default(), dir.path()).unwrap();
    let (second, hit2) = build_kernel_1d_cached(grid, &spec, KernelOptions::default(), dir.path()).unwrap();
    assert!(!hit1 && hit2);
    assert_eq!(fresh, first);
    assert_eq!(fresh, second);
}

/// Frozen output of the three-dimensional NLS operator; guards against
/// unintended changes in quadrature, prefactor or box handling.
#[test]
fn nls_three_dimensional_regression() {
    let grid = MomentumGrid::<f64>::continuum(3, 6, 2.0).unwrap();
    let vals = (0..grid.len())
        .map(|i| 1.0 / (0.5 * grid.point(i).iter().map(|x| x * x).sum::<f64>() + 1.0))
        .collect();
    let w = WignerState::new(Arc::new(grid.clone()), vals).unwrap();
    let theta = |q: &[f64]| (-q.iter().map(|x| x * x).sum::<f64>() / 2.0).exp();
    let c = evaluate_collision_nls(&grid, &w, theta, 0.5).unwrap();
    let golden = [
        (43, -9.28042781945875417e-1),
        (107, -2.99325350380966138e-1),
        (129, -5.48559964578119121e1),
        (215, 9.14724813477227616e-2),
    ];
    for (i, v) in golden {
        assert!((c[i] - v).abs() <= 1e-12 * v.abs(), "index {i}: {} vs {v}", c[i]);
    }
    let sum: f64 = c.iter().sum();
    assert!((sum - -9.40971207290689108e2).abs() <= 1e-11 * sum.abs());
}
