//! Root-resolved collision kernel for one-dimensional lattices.
//!
//! Every physical four-phonon quadruple is stored once. Two momenta sit on
//! grid points; the energy root and the momentum-balance partner generally
//! fall between grid points and are represented by two-point stencils whose
//! weights reproduce both `1` and `omega` exactly. The same stencil is used to
//! read `1/W` at the off-grid momenta and to scatter rates back onto the grid,
//! which makes
//!
//! * number and energy conservation exact up to the root tolerance,
//! * `C(1/(a + c omega)) = 0` exact up to rounding, and
//! * `sum_i C_i / W_i dk` identical to the nonnegative entropy-production sum.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispersion::{DispersionSpec, KinematicsScanner, RootScanOptions};
use crate::error::{Error, Result};
use crate::grid::{MomentumGrid, WignerState};
use crate::scalar::Real;

/// Number-conserving pair collisions (`sigma` sums to -1) or number-changing
/// three-phonon mergers and their time reversal (`sigma` sums to +1 or -3).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Pair,
    Merger,
}

impl Channel {
    /// Orientation of each slot: `+1` on the incoming side.
    pub fn signs(self) -> [i8; 4] {
        match self {
            Channel::Pair => [1, 1, -1, -1],
            Channel::Merger => [1, 1, 1, -1],
        }
    }

    fn code(self) -> u8 {
        match self {
            Channel::Pair => 0,
            Channel::Merger => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Channel::Pair),
            1 => Some(Channel::Merger),
            _ => None,
        }
    }
}

/// Which anharmonicity the kernel describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    /// Quartic on-site potential; the cubic four-phonon operator.
    OnsiteQuartic,
    /// Cubic bond potential (FPU-alpha analogue). It has no four-phonon
    /// channels, and its three-wave operator is not modelled, so the kernel
    /// is empty.
    CubicBond,
}

/// Two-point representation of an off-grid momentum. On-grid momenta have
/// `lo == hi` and `w_lo == 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stencil<T> {
    pub lo: u32,
    pub hi: u32,
    pub w_lo: T,
    pub w_hi: T,
}

impl<T: Real> Stencil<T> {
    pub fn on_grid(i: usize) -> Self {
        Self {
            lo: i as u32,
            hi: i as u32,
            w_lo: T::one(),
            w_hi: T::zero(),
        }
    }

    pub fn is_on_grid(&self) -> bool {
        self.w_hi == T::zero()
    }

    /// Interpolate a grid function with the stencil weights.
    #[inline]
    pub fn interpolate(&self, f: &[T]) -> T {
        if self.is_on_grid() {
            f[self.lo as usize]
        } else {
            self.w_lo * f[self.lo as usize] + self.w_hi * f[self.hi as usize]
        }
    }

    /// `W` at the stencil: the reciprocal of the interpolated `1/W`.
    #[inline]
    fn occupation(&self, w: &[T]) -> T {
        if self.is_on_grid() {
            return w[self.lo as usize];
        }
        let (a, b) = (w[self.lo as usize], w[self.hi as usize]);
        if (self.w_lo > T::zero() && a == T::zero()) || (self.w_hi > T::zero() && b == T::zero()) {
            return T::zero();
        }
        let mut psi = T::zero();
        if self.w_lo != T::zero() {
            psi += self.w_lo / a;
        }
        if self.w_hi != T::zero() {
            psi += self.w_hi / b;
        }
        T::one() / psi
    }

    #[inline]
    fn scatter(&self, acc: &mut [T], x: T) {
        if self.is_on_grid() {
            acc[self.lo as usize] += x;
        } else {
            acc[self.lo as usize] += self.w_lo * x;
            acc[self.hi as usize] += self.w_hi * x;
        }
    }
}

/// One stored collision quadruple.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelEntry<T> {
    pub channel: Channel,
    /// Momenta of the four slots, ordered as in [`Channel::signs`].
    pub momenta: [T; 4],
    pub slots: [Stencil<T>; 4],
    /// Rate weight including prefactor, measure and delta jacobian.
    pub weight: T,
}

/// Counts gathered while building a kernel.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelDiagnostics {
    pub pairs_scanned: usize,
    pub pair_entries: usize,
    pub merger_entries: usize,
    /// Roots found for the all-plus sign vector (always zero when `omega > 0`).
    pub all_plus_roots: usize,
    /// Simple roots with `|F'|` under the degeneracy floor, left out.
    pub excised_degenerate: usize,
    /// Included roots with small but nonzero `|F'|`.
    pub near_degenerate: usize,
    /// Stencils that fell back to linear weights (energy not exactly kept).
    pub nonconservative_stencils: usize,
    /// Grid points or roots skipped because `omega = 0` there.
    pub skipped_zero_modes: usize,
    /// Entries contributing to each sign vector `(s1, s2, s3)`.
    pub sigma_channels: BTreeMap<String, usize>,
}

/// Options for [`build_kernel_1d_with`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelOptions<T> {
    /// Root tolerance `|F| <= tol`.
    pub tol: T,
    pub scan: RootScanOptions<T>,
    /// Global multiplier on every rate.
    pub rate_scale: T,
    pub interaction: Interaction,
    pub include_pairs: bool,
    pub include_mergers: bool,
    /// Store pairs as `(k2, k1)` instead of `(k1, k2)`; evaluation must not care.
    pub swap_pair_labels: bool,
}

impl<T: Real> Default for KernelOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-12),
            scan: RootScanOptions::default(),
            rate_scale: T::one(),
            interaction: Interaction::OnsiteQuartic,
            include_pairs: true,
            include_mergers: true,
            swap_pair_labels: false,
        }
    }
}

/// Precomputed collision manifold for repeated evaluation of `C(W)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionKernel<T> {
    pub(crate) grid: Arc<MomentumGrid<T>>,
    pub(crate) dispersion: DispersionSpec<T>,
    pub(crate) options: KernelOptions<T>,
    pub(crate) omega: Vec<T>,
    pub(crate) entries: Vec<KernelEntry<T>>,
    pub(crate) diagnostics: KernelDiagnostics,
}

/// Collision rate split into gain (terms free of the receiving `W`) and loss.
#[derive(Clone, Debug, PartialEq)]
pub struct CollisionRates<T> {
    pub total: Vec<T>,
    pub gain: Vec<T>,
    pub loss: Vec<T>,
}

/// Quartic on-site prefactor `12 pi / 16` times the number of sign vectors
/// per channel, divided by the number of slots sharing each stored quadruple.
fn channel_prefactor<T: Real>(channel: Channel) -> T {
    match channel {
        // three pair sign vectors, rate split over four slots
        Channel::Pair => T::lit(12.0 * PI / 16.0 * 3.0 / 4.0),
        // three (+,+,-) vectors plus (-,-,-), each quadruple counted once
        Channel::Merger => T::lit(12.0 * PI / 16.0),
    }
}

/// Build the root-resolved kernel with default options and root tolerance `tol`.
pub fn build_kernel_1d<T: Real>(
    grid: Arc<MomentumGrid<T>>,
    spec: &DispersionSpec<T>,
    tol: T,
) -> Result<CollisionKernel<T>> {
    build_kernel_1d_with(
        grid,
        spec,
        KernelOptions {
            tol,
            ..KernelOptions::default()
        },
    )
}

struct RowOutput<T> {
    entries: Vec<KernelEntry<T>>,
    diag: KernelDiagnostics,
}

pub fn build_kernel_1d_with<T: Real>(
    grid: Arc<MomentumGrid<T>>,
    spec: &DispersionSpec<T>,
    options: KernelOptions<T>,
) -> Result<CollisionKernel<T>> {
    if grid.dim() != 1 || spec.dim() != 1 {
        return Err(Error::InvalidInput("root-resolved kernels are one-dimensional".into()));
    }
    if !(options.rate_scale > T::zero()) {
        return Err(Error::InvalidInput("rate_scale must be > 0".into()));
    }
    let omega = grid.omega_table(spec)?;
    let scanner = KinematicsScanner::new(spec, options.scan)?;
    let n = grid.n();
    let h = grid.spacing();

    let rows: Vec<RowOutput<T>> = if options.interaction == Interaction::CubicBond {
        Vec::new()
    } else {
        (0..n)
            .into_par_iter()
            .map(|i1| build_row(i1, &grid, spec, &scanner, &omega, &options, h))
            .collect::<Result<_>>()?
    };

    let mut entries = Vec::new();
    let mut diag = KernelDiagnostics::default();
    for row in rows {
        entries.extend(row.entries);
        diag.pairs_scanned += row.diag.pairs_scanned;
        diag.pair_entries += row.diag.pair_entries;
        diag.merger_entries += row.diag.merger_entries;
        diag.all_plus_roots += row.diag.all_plus_roots;
        diag.excised_degenerate += row.diag.excised_degenerate;
        diag.near_degenerate += row.diag.near_degenerate;
        diag.nonconservative_stencils += row.diag.nonconservative_stencils;
        diag.skipped_zero_modes += row.diag.skipped_zero_modes;
    }
    for s1 in [1i8, -1] {
        for s2 in [1i8, -1] {
            for s3 in [1i8, -1] {
                let count = match s1 + s2 + s3 {
                    -1 => diag.pair_entries,
                    1 | -3 => diag.merger_entries,
                    _ => diag.all_plus_roots,
                };
                diag.sigma_channels.insert(format!("({s1:+},{s2:+},{s3:+})"), count);
            }
        }
    }
    Ok(CollisionKernel {
        grid,
        dispersion: spec.clone(),
        options,
        omega,
        entries,
        diagnostics: diag,
    })
}

fn build_row<T: Real>(
    i1: usize,
    grid: &MomentumGrid<T>,
    spec: &DispersionSpec<T>,
    scanner: &KinematicsScanner<'_, T>,
    omega: &[T],
    options: &KernelOptions<T>,
    h: T,
) -> Result<RowOutput<T>> {
    let n = grid.n();
    let mut out = RowOutput {
        entries: Vec::new(),
        diag: KernelDiagnostics::default(),
    };
    if omega[i1] == T::zero() {
        out.diag.skipped_zero_modes += 1;
        return Ok(out);
    }
    let floor = options.scan.degeneracy_floor;
    let wrap = |x: T| if grid.is_torus() { x.wrap_torus() } else { x };
    for i2 in i1..n {
        if omega[i2] == T::zero() {
            continue;
        }
        out.diag.pairs_scanned += 1;
        let (k1, k2) = (grid.coord(i1), grid.coord(i2));
        let (w1, w2) = (omega[i1], omega[i2]);
        let mult = if i1 == i2 { T::one() } else { T::lit(2.0) };
        let base = options.rate_scale * mult * h * h;
        let (a, b) = if options.swap_pair_labels { (i2, i1) } else { (i1, i2) };
        let (ka, kb) = (grid.coord(a), grid.coord(b));

        if options.include_pairs {
            for root in scanner.pair_roots(k1, k2, options.tol)? {
                if root.degenerate {
                    if root.jacobian < floor {
                        out.diag.excised_degenerate += 1;
                    }
                    continue;
                }
                let k3 = root.k3;
                let k4 = wrap(k1 + k2 - k3);
                let (w3, w4) = (spec.omega_1d(k3), spec.omega_1d(k4));
                let (Some(s3), Some(s4)) = (
                    stencil(grid, omega, spec, k3, &mut out.diag),
                    stencil(grid, omega, spec, k4, &mut out.diag),
                ) else {
                    out.diag.skipped_zero_modes += 1;
                    continue;
                };
                if root.near_degenerate {
                    out.diag.near_degenerate += 1;
                }
                let weight = channel_prefactor::<T>(Channel::Pair) * base / (root.jacobian * w1 * w2 * w3 * w4);
                out.entries.push(KernelEntry {
                    channel: Channel::Pair,
                    momenta: [ka, kb, k3, k4],
                    slots: [Stencil::on_grid(a), Stencil::on_grid(b), s3, s4],
                    weight,
                });
                out.diag.pair_entries += 1;
            }
        }

        if options.include_mergers {
            for root in scanner.merger_roots(k1, k2, options.tol)? {
                if root.degenerate {
                    out.diag.excised_degenerate += 1;
                    continue;
                }
                let k3 = root.k3;
                let k4 = wrap(k1 + k2 + k3);
                let (w3, w4) = (spec.omega_1d(k3), spec.omega_1d(k4));
                let (Some(s3), Some(s4)) = (
                    stencil(grid, omega, spec, k3, &mut out.diag),
                    stencil(grid, omega, spec, k4, &mut out.diag),
                ) else {
                    out.diag.skipped_zero_modes += 1;
                    continue;
                };
                if w3 == T::zero() || w4 == T::zero() {
                    out.diag.skipped_zero_modes += 1;
                    continue;
                }
                if root.near_degenerate {
                    out.diag.near_degenerate += 1;
                }
                let weight = channel_prefactor::<T>(Channel::Merger) * base / (root.jacobian * w1 * w2 * w3 * w4);
                out.entries.push(KernelEntry {
                    channel: Channel::Merger,
                    momenta: [ka, kb, k3, k4],
                    slots: [Stencil::on_grid(a), Stencil::on_grid(b), s3, s4],
                    weight,
                });
                out.diag.merger_entries += 1;
            }
            out.diag.all_plus_roots += scanner.all_plus_roots(k1, k2, options.tol)?.len();
        }
    }
    Ok(out)
}

/// Two-point stencil whose weights reproduce `1` and `omega` at `k`. Falls
/// back to linear-in-`k` weights where `omega` is not monotone across the
/// cell. `None` when a zero-frequency point would be touched.
fn stencil<T: Real>(
    grid: &MomentumGrid<T>,
    omega: &[T],
    spec: &DispersionSpec<T>,
    k: T,
    diag: &mut KernelDiagnostics,
) -> Option<Stencil<T>> {
    let n = grid.n();
    let (i, frac) = grid.locate(k);
    let snap = T::lit(1e-12);
    if frac <= snap {
        return (omega[i] > T::zero()).then(|| Stencil::on_grid(i));
    }
    if frac >= T::one() - snap {
        let j = (i + 1) % n;
        return (omega[j] > T::zero()).then(|| Stencil::on_grid(j));
    }
    let j = (i + 1) % n;
    if !grid.is_torus() && j == 0 {
        return None;
    }
    let (wl, wh) = (omega[i], omega[j]);
    if wl == T::zero() || wh == T::zero() {
        return None;
    }
    let wk = spec.omega_1d(k);
    let d = wh - wl;
    let slack = T::lit(1e-9);
    if d.abs() > slack * wk {
        let a = (wh - wk) / d;
        if a >= -slack && a <= T::one() + slack {
            let a = a.max(T::zero()).min(T::one());
            return Some(Stencil {
                lo: i as u32,
                hi: j as u32,
                w_lo: a,
                w_hi: T::one() - a,
            });
        }
    }
    diag.nonconservative_stencils += 1;
    Some(Stencil {
        lo: i as u32,
        hi: j as u32,
        w_lo: T::one() - frac,
        w_hi: frac,
    })
}

impl<T: Real> CollisionKernel<T> {
    pub fn grid(&self) -> &Arc<MomentumGrid<T>> {
        &self.grid
    }

    pub fn dispersion(&self) -> &DispersionSpec<T> {
        &self.dispersion
    }

    pub fn options(&self) -> &KernelOptions<T> {
        &self.options
    }

    pub fn entries(&self) -> &[KernelEntry<T>] {
        &self.entries
    }

    pub fn diagnostics(&self) -> &KernelDiagnostics {
        &self.diagnostics
    }

    /// `omega` on the grid points.
    pub fn omega(&self) -> &[T] {
        &self.omega
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_pair_only(&self) -> bool {
        self.entries.iter().all(|e| e.channel == Channel::Pair)
    }

    pub fn rate_scale(&self) -> T {
        self.options.rate_scale
    }

    /// Same kernel with every weight multiplied by `factor / rate_scale`.
    pub fn with_rate_scale(&self, factor: T) -> Result<Self> {
        if !(factor > T::zero()) {
            return Err(Error::InvalidInput("rate_scale must be > 0".into()));
        }
        let ratio = factor / self.options.rate_scale;
        let mut k = self.clone();
        k.options.rate_scale = factor;
        for e in &mut k.entries {
            e.weight *= ratio;
        }
        Ok(k)
    }

    /// Indices of grid points with `omega = 0`, which the kernel never touches.
    pub fn zero_modes(&self) -> Vec<usize> {
        (0..self.omega.len()).filter(|&i| self.omega[i] == T::zero()).collect()
    }

    pub(crate) fn check_state(&self, w: &WignerState<T>) -> Result<()> {
        if w.grid().as_ref() != self.grid.as_ref() {
            return Err(Error::InvalidInput("Wigner function lives on a different grid".into()));
        }
        Ok(())
    }

    /// Occupations at the four slots of `e`.
    #[inline]
    pub(crate) fn slot_values(e: &KernelEntry<T>, w: &[T]) -> [T; 4] {
        [
            e.slots[0].occupation(w),
            e.slots[1].occupation(w),
            e.slots[2].occupation(w),
            e.slots[3].occupation(w),
        ]
    }

    /// Total collision rate only (the hot path of the time integrators).
    pub fn rate(&self, w: &[T]) -> Vec<T> {
        let mut acc = vec![T::zero(); self.omega.len()];
        self.rate_into(w, &mut acc);
        acc
    }

    pub(crate) fn rate_into(&self, w: &[T], acc: &mut [T]) {
        acc.iter_mut().for_each(|x| *x = T::zero());
        for e in &self.entries {
            let v = Self::slot_values(e, w);
            let p = others_products(&v);
            let signs = e.channel.signs();
            let mut b = T::zero();
            for s in 0..4 {
                if signs[s] > 0 {
                    b += p[s];
                } else {
                    b -= p[s];
                }
            }
            let flux = e.weight * b;
            for s in 0..4 {
                e.slots[s].scatter(acc, if signs[s] > 0 { flux } else { -flux });
            }
        }
        let inv_h = T::one() / self.grid.weight();
        acc.iter_mut().for_each(|x| *x *= inv_h);
    }

    /// Entropy production `sum_e weight prod(W) (sum_s sign_s / W_s)^2`.
    pub fn entropy_production(&self, w: &[T]) -> T {
        let mut acc = T::zero();
        for e in &self.entries {
            let v = Self::slot_values(e, w);
            let signs = e.channel.signs();
            let mut dpsi = T::zero();
            let mut prod = T::one();
            for s in 0..4 {
                let inv = T::one() / v[s];
                if signs[s] > 0 {
                    dpsi += inv;
                } else {
                    dpsi -= inv;
                }
                prod *= v[s];
            }
            acc += e.weight * prod * dpsi * dpsi;
        }
        acc
    }
}

#[inline]
fn others_products<T: Real>(v: &[T; 4]) -> [T; 4] {
    let (a, b, c, d) = (v[0], v[1], v[2], v[3]);
    let ab = a * b;
    let cd = c * d;
    [b * cd, a * cd, ab * d, ab * c]
}

/// `C(W)` split into gain and loss on the kernel's grid.
pub fn evaluate_collision<T: Real>(kernel: &CollisionKernel<T>, w: &WignerState<T>) -> Result<CollisionRates<T>> {
    kernel.check_state(w)?;
    let values = w.values();
    let len = kernel.omega.len();
    let mut total = vec![T::zero(); len];
    let mut gain = vec![T::zero(); len];
    let mut loss = vec![T::zero(); len];
    for e in &kernel.entries {
        let v = CollisionKernel::slot_values(e, values);
        let p = others_products(&v);
        let signs = e.channel.signs();
        let b = (0..4).fold(T::zero(), |acc, s| if signs[s] > 0 { acc + p[s] } else { acc - p[s] });
        for s in 0..4 {
            let flux = if signs[s] > 0 { e.weight * b } else { -e.weight * b };
            let g = e.weight * p[s];
            e.slots[s].scatter(&mut total, flux);
            e.slots[s].scatter(&mut gain, g);
            e.slots[s].scatter(&mut loss, flux - g);
        }
    }
    let inv_h = T::one() / kernel.grid.weight();
    for x in total.iter_mut().chain(gain.iter_mut()).chain(loss.iter_mut()) {
        *x *= inv_h;
    }
    Ok(CollisionRates { total, gain, loss })
}

pub(crate) fn channel_to_code(c: Channel) -> u8 {
    c.code()
}

pub(crate) fn channel_from_code(c: u8) -> Option<Channel> {
    Channel::from_code(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optical_kernel(n: usize) -> CollisionKernel<f64> {
        let spec = DispersionSpec::optical(1.0, 1).unwrap();
        let grid = Arc::new(MomentumGrid::torus(1, n).unwrap());
        build_kernel_1d(grid, &spec, 1e-12).unwrap()
    }

    #[test]
    fn optical_chain_has_pair_collisions_only() {
        let k = optical_kernel(32);
        assert!(k.diagnostics().pair_entries > 0);
        assert_eq!(k.diagnostics().merger_entries, 0);
        assert_eq!(k.diagnostics().all_plus_roots, 0);
        assert_eq!(k.diagnostics().sigma_channels["(+1,+1,+1)"], 0);
        assert!(k.is_pair_only());
    }

    #[test]
    fn entries_sit_on_the_energy_shell() {
        let k = optical_kernel(32);
        let spec = k.dispersion().clone();
        for e in k.entries() {
            let [a, b, c, d] = e.momenta;
            let r = spec.omega_1d(a) + spec.omega_1d(b) - spec.omega_1d(c) - spec.omega_1d(d);
            assert!(r.abs() <= 1e-12, "{r}");
            assert!(e.weight.is_finite() && e.weight > 0.0);
            assert!(((a + b - c - d) - (a + b - c - d).round()).abs() < 1e-12);
        }
    }

    #[test]
    fn stencils_reproduce_omega() {
        let k = optical_kernel(16);
        assert_eq!(k.diagnostics().nonconservative_stencils, 0);
        for e in k.entries() {
            for s in 2..4 {
                let interp = e.slots[s].interpolate(k.omega());
                let exact = k.dispersion().omega_1d(e.momenta[s]);
                assert!((interp - exact).abs() < 1e-13);
                assert!((e.slots[s].w_lo + e.slots[s].w_hi - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_state_has_zero_rate() {
        let k = optical_kernel(16);
        let w = WignerState::zeros(k.grid().clone());
        let c = evaluate_collision(&k, &w).unwrap();
        assert!(c.total.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn flat_dispersion_gives_empty_kernel() {
        use crate::dispersion::{build_custom_dispersion, Coupling};
        let spec = build_custom_dispersion(
            vec![Coupling {
                offset: vec![0],
                value: 1.0,
            }],
            1,
        )
        .unwrap();
        let grid = Arc::new(MomentumGrid::torus(1, 16).unwrap());
        let k = build_kernel_1d(grid, &spec, 1e-12).unwrap();
        assert!(k.is_empty());
    }

    #[test]
    fn cubic_bond_kernel_is_empty() {
        let spec = DispersionSpec::optical(1.0, 1).unwrap();
        let grid = Arc::new(MomentumGrid::torus(1, 16).unwrap());
        let k = build_kernel_1d_with(
            grid,
            &spec,
            KernelOptions {
                interaction: Interaction::CubicBond,
                ..KernelOptions::default()
            },
        )
        .unwrap();
        assert!(k.is_empty());
    }

    #[test]
    fn rejects_foreign_grid() {
        let k = optical_kernel(16);
        let other = Arc::new(MomentumGrid::torus(1, 8).unwrap());
        let w = WignerState::zeros(other);
        assert!(evaluate_collision(&k, &w).is_err());
    }

    #[test]
    fn rate_matches_split_evaluation() {
        let k = optical_kernel(16);
        let vals: Vec<f64> = (0..16).map(|i| 1.0 + 0.3 * (i as f64).sin()).collect();
        let w = WignerState::new(k.grid().clone(), vals.clone()).unwrap();
        let split = evaluate_collision(&k, &w).unwrap();
        let fast = k.rate(&vals);
        for i in 0..16 {
            assert!((split.total[i] - fast[i]).abs() <= 1e-14 * (1.0 + fast[i].abs()));
            assert!((split.gain[i] + split.loss[i] - split.total[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn equilibrium_and_stationary_family_are_annihilated() {
        let k = optical_kernel(32);
        for (a, c) in [(0.0, 1.0), (0.7, 0.3), (2.0, 0.0)] {
            let vals: Vec<f64> = k.omega().iter().map(|w| 1.0 / (a + c * w)).collect();
            let w = WignerState::new(k.grid().clone(), vals).unwrap();
            let r = evaluate_collision(&k, &w).unwrap();
            let scale = r.loss.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let worst = r.total.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(worst <= 1e-12 * scale, "{worst} vs {scale}");
        }
    }

    #[test]
    fn number_energy_and_entropy_identities_hold() {
        let k = optical_kernel(32);
        let h = k.grid().weight();
        let vals: Vec<f64> = (0..32).map(|i| 1.0 + 0.5 * (0.7 * i as f64).cos().powi(2)).collect();
        let c = k.rate(&vals);
        let number: f64 = c.iter().sum::<f64>() * h;
        let energy: f64 = c.iter().zip(k.omega()).map(|(x, w)| x * w).sum::<f64>() * h;
        let scale: f64 = c.iter().map(|x| x.abs()).sum::<f64>() * h;
        assert!(number.abs() <= 1e-13 * scale);
        assert!(energy.abs() <= 1e-12 * scale);
        let ds: f64 = c.iter().zip(&vals).map(|(x, w)| x / w).sum::<f64>() * h;
        let sigma = k.entropy_production(&vals);
        assert!(sigma > 0.0);
        assert!((ds - sigma).abs() <= 1e-11 * sigma, "{ds} {sigma}");
    }
}
