//! Collision operator of the kinetic equation for the nonlinear Schroedinger
//! field, `omega = |k|^2 / 2` on a truncated continuum box.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::kernel::{build_kernel_1d_with, evaluate_collision, KernelOptions};
use crate::dispersion::DispersionSpec;
use crate::error::{Error, Result};
use crate::grid::{GridDomain, MomentumGrid, WignerState};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlsOptions<T> {
    pub epsilon: T,
    /// Skip `k3 = k1` and `k3 = k2`, where the bracket vanishes anyway.
    pub exclude_exchange: bool,
    pub rate_scale: T,
    pub max_operations: f64,
}

impl<T: Real> NlsOptions<T> {
    pub fn new(epsilon: T) -> Self {
        Self {
            epsilon,
            exclude_exchange: false,
            rate_scale: T::one(),
            max_operations: 5e9,
        }
    }
}

fn check_grid<T: Real>(grid: &MomentumGrid<T>, w: &WignerState<T>) -> Result<T> {
    let GridDomain::Continuum { cutoff } = grid.domain() else {
        return Err(Error::InvalidInput("NLS collisions need a continuum grid with cutoff".into()));
    };
    if w.grid().as_ref() != grid {
        return Err(Error::InvalidInput("Wigner function lives on a different grid".into()));
    }
    Ok(cutoff)
}

/// `C_NS(W)` with the default strategy: exact root resolution in one
/// dimension (only exchange roots exist, so the result is identically zero)
/// and the mollified sum in higher dimensions.
pub fn evaluate_collision_nls<T: Real>(
    grid: &MomentumGrid<T>,
    w: &WignerState<T>,
    theta_hat: impl Fn(&[T]) -> T + Sync,
    epsilon: T,
) -> Result<Vec<T>> {
    let cutoff = check_grid(grid, w)?;
    if grid.dim() == 1 {
        let spec = DispersionSpec::nls(1, cutoff)?;
        let kernel = build_kernel_1d_with(
            Arc::new(grid.clone()),
            &spec,
            KernelOptions {
                include_mergers: false,
                ..KernelOptions::default()
            },
        )?;
        if !kernel.is_empty() {
            return Err(Error::InvalidInput(format!(
                "unexpected non-exchange roots for omega = k^2/2: {} entries",
                kernel.entries().len()
            )));
        }
        return Ok(evaluate_collision(&kernel, w)?.total);
    }
    evaluate_collision_nls_mollified(grid, w, theta_hat, &NlsOptions::new(epsilon))
}

/// Direct mollified quadrature of `C_NS`: every grid pair `(k2, k3)`, with
/// `k4 = k1 + k2 - k3` dropped when it leaves the box.
pub fn evaluate_collision_nls_mollified<T: Real>(
    grid: &MomentumGrid<T>,
    w: &WignerState<T>,
    theta_hat: impl Fn(&[T]) -> T + Sync,
    opts: &NlsOptions<T>,
) -> Result<Vec<T>> {
    check_grid(grid, w)?;
    let eps = opts.epsilon;
    if !(eps > T::zero()) || !eps.is_finite() {
        return Err(Error::InvalidInput(format!("epsilon must be > 0, got {eps}")));
    }
    let len = grid.len();
    let estimated = (len as f64).powi(3) * 12.0;
    if estimated > opts.max_operations {
        return Err(Error::CostGuard {
            estimated,
            budget: opts.max_operations,
        });
    }
    let dim = grid.dim();
    let n = grid.n();
    let idx: Vec<Vec<usize>> = (0..len).map(|i| grid.unflatten(i)).collect();
    let pts: Vec<Vec<T>> = (0..len).map(|i| grid.point(i)).collect();
    let omega: Vec<T> = pts.iter().map(|k| k.iter().map(|&x| x * x).sum::<T>() * T::half()).collect();
    let vals = w.values();

    // |theta_hat(k1 - k2)|^2 depends only on the index difference, offset by n - 1
    let span = 2 * n - 1;
    let h = grid.spacing();
    let diffs = span.pow(dim as u32);
    let mut theta2 = vec![T::zero(); diffs];
    for (d, slot) in theta2.iter_mut().enumerate() {
        let mut rem = d;
        let mut q = vec![T::zero(); dim];
        for c in q.iter_mut().rev() {
            *c = h * (T::from_usize_lossy(rem % span) - T::from_usize_lossy(n - 1));
            rem /= span;
        }
        let t = theta_hat(&q);
        *slot = t * t;
    }
    let diff_index = |a: &[usize], b: &[usize]| -> usize {
        a.iter().zip(b).fold(0, |acc, (&x, &y)| acc * span + (x + n - 1 - y))
    };

    let norm = T::one() / (T::two_pi().sqrt() * eps);
    let inv2e2 = T::one() / (T::lit(2.0) * eps * eps);
    let cutoff_exp = T::lit(-40.0);
    let mut out = vec![T::zero(); len];
    let mut k4 = vec![0usize; dim];
    for i1 in 0..len {
        let mut acc = T::zero();
        for i2 in 0..len {
            let th = theta2[diff_index(&idx[i1], &idx[i2])];
            if th == T::zero() {
                continue;
            }
            let mut inner = T::zero();
            'k3: for i3 in 0..len {
                if opts.exclude_exchange && (i3 == i1 || i3 == i2) {
                    continue;
                }
                for a in 0..dim {
                    let s = idx[i1][a] + idx[i2][a];
                    if s < idx[i3][a] || s - idx[i3][a] >= n {
                        continue 'k3;
                    }
                    k4[a] = s - idx[i3][a];
                }
                let i4 = grid.flatten(&k4);
                let r = omega[i1] + omega[i2] - omega[i3] - omega[i4];
                let e = -r * r * inv2e2;
                if e < cutoff_exp {
                    continue;
                }
                let (w1, w2, w3, w4) = (vals[i1], vals[i2], vals[i3], vals[i4]);
                let bracket = w2 * w3 * w4 - w1 * (w2 * w3 + w2 * w4 - w3 * w4);
                inner += e.exp() * bracket;
            }
            acc += th * inner;
        }
        out[i1] = acc;
    }
    let pref = T::lit(12.0 * PI) * opts.rate_scale * norm * h.powi(2 * dim as i32);
    out.iter_mut().for_each(|x| *x *= pref);
    Ok(out)
}
