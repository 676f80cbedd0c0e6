//! Collisional invariants and the stationary states built from them.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collision::{Channel, CollisionKernel};
use crate::dispersion::{DispersionSpec, KinematicsScanner, RootScanOptions};
use crate::error::{Error, Result};
use crate::grid::{MomentumGrid, WignerState};
use crate::scalar::Real;

type PsiFn<T> = Arc<dyn Fn(&[T], T) -> T + Send + Sync>;

#[derive(Clone)]
enum CandidateKind<T> {
    /// `psi(k, omega(k))` in closed form.
    Closed(PsiFn<T>),
    /// Values on a grid; off-grid momenta use the kernel stencils when
    /// available and periodic linear interpolation otherwise.
    Tabulated { grid: Arc<MomentumGrid<T>>, values: Vec<T> },
}

/// A function `psi(k)` to be tested against the invariant equations.
#[derive(Clone)]
pub struct InvariantCandidate<T> {
    name: String,
    kind: CandidateKind<T>,
}

impl<T> fmt::Debug for InvariantCandidate<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InvariantCandidate").field("name", &self.name).finish()
    }
}

impl<T: Real> InvariantCandidate<T> {
    /// Closed form in terms of `k` and `omega(k)`.
    pub fn closed(name: impl Into<String>, f: impl Fn(&[T], T) -> T + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            kind: CandidateKind::Closed(Arc::new(f)),
        }
    }

    pub fn constant(a: T) -> Self {
        Self::closed(format!("{a}"), move |_, _| a)
    }

    pub fn omega() -> Self {
        Self::closed("omega", |_, w| w)
    }

    pub fn affine(a: T, c: T) -> Self {
        Self::closed(format!("{a} + {c} omega"), move |_, w| a + c * w)
    }

    pub fn omega_squared() -> Self {
        Self::closed("omega^2", |_, w| w * w)
    }

    /// `sin(2 pi k_1)`.
    pub fn sine() -> Self {
        Self::closed("sin(2 pi k)", |k, _| (T::two_pi() * k[0]).sin())
    }

    /// Tabulated values; non-finite entries are treated as missing.
    pub fn tabulated(name: impl Into<String>, grid: Arc<MomentumGrid<T>>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        Ok(Self {
            name: name.into(),
            kind: CandidateKind::Tabulated { grid, values },
        })
    }

    /// `1/W` on the state's grid; excluded and zero points are missing.
    pub fn reciprocal_of(w: &WignerState<T>) -> Result<Self> {
        let values = w
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| if w.is_active(i) && v > T::zero() { T::one() / v } else { T::nan() })
            .collect();
        Self::tabulated("1/W", w.grid().clone(), values)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Values on the grid points.
    pub fn on_grid(&self, grid: &MomentumGrid<T>, spec: &DispersionSpec<T>) -> Result<Vec<T>> {
        match &self.kind {
            CandidateKind::Closed(f) => Ok((0..grid.len())
                .map(|i| {
                    let k = grid.point(i);
                    f(&k, spec.omega(&k))
                })
                .collect()),
            CandidateKind::Tabulated { grid: g, values } => {
                if g.as_ref() != grid {
                    return Err(Error::InvalidInput("tabulated candidate lives on a different grid".into()));
                }
                Ok(values.clone())
            }
        }
    }

    /// `psi` at a 1D momentum `k`.
    fn at_1d(&self, spec: &DispersionSpec<T>, k: T) -> T {
        match &self.kind {
            CandidateKind::Closed(f) => f(&[k], spec.omega_1d(k)),
            CandidateKind::Tabulated { grid, values } => {
                let (i, frac) = grid.locate(k);
                let j = (i + 1) % grid.n();
                if frac == T::zero() {
                    values[i]
                } else {
                    (T::one() - frac) * values[i] + frac * values[j]
                }
            }
        }
    }

    /// `psi` at a momentum of any dimension.
    fn at(&self, spec: &DispersionSpec<T>, k: &[T]) -> Result<T> {
        match &self.kind {
            CandidateKind::Closed(f) => Ok(f(k, spec.omega(k))),
            CandidateKind::Tabulated { grid, .. } if grid.dim() == 1 => Ok(self.at_1d(spec, k[0])),
            CandidateKind::Tabulated { .. } => Err(Error::InvalidInput(
                "tabulated candidates are interpolated in one dimension only".into(),
            )),
        }
    }
}

fn max_abs<T: Real>(values: impl IntoIterator<Item = T>) -> T {
    values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold(T::zero(), |m, v| m.max(v.abs()))
}

/// `max |psi1 + psi2 - psi3 - psi4| / max|psi|` over the pair entries of the
/// kernel.
pub fn pair_invariant_residual<T: Real>(psi: &InvariantCandidate<T>, kernel: &CollisionKernel<T>) -> Result<T> {
    let spec = kernel.dispersion();
    let grid_vals = psi.on_grid(kernel.grid(), spec)?;
    let scale = max_abs(grid_vals.iter().copied());
    let mut worst = T::zero();
    let mut seen = false;
    for e in kernel.entries().iter().filter(|e| e.channel == Channel::Pair) {
        let v: [T; 4] = match &psi.kind {
            CandidateKind::Closed(_) => std::array::from_fn(|s| psi.at_1d(spec, e.momenta[s])),
            CandidateKind::Tabulated { .. } => std::array::from_fn(|s| e.slots[s].interpolate(&grid_vals)),
        };
        let r = v[0] + v[1] - v[2] - v[3];
        if r.is_finite() {
            worst = worst.max(r.abs());
            seen = true;
        }
    }
    if !seen {
        return Err(Error::UndefinedResidual("kernel has no pair entries".into()));
    }
    if scale == T::zero() {
        return Ok(worst);
    }
    Ok(worst / scale)
}

/// One near-solution `(k1, k2, k3)` of `omega1 + omega2 + omega3 = omega(k1 + k2 + k3)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergerSample<T> {
    pub k: [Vec<T>; 3],
    pub residual: T,
}

/// Merger solutions found by root scanning. In one dimension every `(k1, k2)`
/// on an `n`-point grid is scanned for `k3`; in higher dimensions `lines`
/// random lines parallel to a coordinate axis are scanned for `k3`.
pub fn sample_merger_manifold<T: Real>(
    spec: &DispersionSpec<T>,
    n: usize,
    lines: usize,
    seed: u64,
    tol: T,
) -> Result<Vec<MergerSample<T>>> {
    let opts = RootScanOptions::default();
    let mut out = Vec::new();
    let wrap = |x: T| if spec.is_torus() { x.wrap_torus() } else { x };
    if spec.dim() == 1 {
        let grid = MomentumGrid::for_dispersion(spec, n)?;
        let scanner = KinematicsScanner::new(spec, opts)?;
        for i in 0..n {
            for j in 0..n {
                let (k1, k2) = (grid.coord(i), grid.coord(j));
                for r in scanner.merger_roots(k1, k2, tol)? {
                    out.push(MergerSample {
                        k: [vec![k1], vec![k2], vec![r.k3]],
                        residual: r.residual,
                    });
                }
            }
        }
        return Ok(out);
    }
    if !spec.is_torus() {
        return Err(Error::InvalidInput("line sampling needs a torus dispersion".into()));
    }
    let d = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = opts.points;
    for _ in 0..lines {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<T> { (0..d).map(|_| T::lit(rng.random::<f64>() - 0.5)).collect() };
        let k1 = draw(&mut rng);
        let k2 = draw(&mut rng);
        let base = draw(&mut rng);
        let axis = rng.random_range(0..d);
        let g = |t: T| -> T {
            let mut k3 = base.clone();
            k3[axis] = wrap(base[axis] + t);
            let k4: Vec<T> = (0..d).map(|q| wrap(k1[q] + k2[q] + k3[q])).collect();
            spec.omega(&k1) + spec.omega(&k2) + spec.omega(&k3) - spec.omega(&k4)
        };
        let step = T::one() / T::from_usize_lossy(m);
        let mut prev = g(T::zero());
        for s in 1..=m {
            let t = step * T::from_usize_lossy(s);
            let cur = g(t);
            if prev.signum() != cur.signum() {
                let (mut a, mut b, mut fa) = (t - step, t, prev);
                for _ in 0..200 {
                    let mid = (a + b) * T::half();
                    let fm = g(mid);
                    if fm.abs() <= tol {
                        a = mid;
                        b = mid;
                        break;
                    }
                    if fm.signum() == fa.signum() {
                        a = mid;
                        fa = fm;
                    } else {
                        b = mid;
                    }
                }
                let root = (a + b) * T::half();
                let mut k3 = base.clone();
                k3[axis] = wrap(base[axis] + root);
                let res = g(root);
                if res.abs() <= tol {
                    out.push(MergerSample {
                        k: [k1.clone(), k2.clone(), k3],
                        residual: res,
                    });
                }
            }
            prev = cur;
        }
    }
    Ok(out)
}

/// Outcome of testing the merger equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergerResidual<T> {
    /// No merger solutions: three-into-one processes are forbidden.
    ManifoldEmpty,
    Residual(T),
}

/// `max |psi1 + psi2 + psi3 - psi(k1 + k2 + k3)| / max|psi|` over the samples.
pub fn merger_invariant_residual<T: Real>(
    psi: &InvariantCandidate<T>,
    spec: &DispersionSpec<T>,
    samples: &[MergerSample<T>],
) -> Result<MergerResidual<T>> {
    if samples.is_empty() {
        return Ok(MergerResidual::ManifoldEmpty);
    }
    let wrap = |x: T| if spec.is_torus() { x.wrap_torus() } else { x };
    let mut worst = T::zero();
    let mut scale = T::zero();
    for s in samples {
        let k4: Vec<T> = (0..spec.dim()).map(|q| wrap(s.k[0][q] + s.k[1][q] + s.k[2][q])).collect();
        let v = [psi.at(spec, &s.k[0])?, psi.at(spec, &s.k[1])?, psi.at(spec, &s.k[2])?, psi.at(spec, &k4)?];
        scale = scale.max(max_abs(v));
        worst = worst.max((v[0] + v[1] + v[2] - v[3]).abs());
    }
    Ok(MergerResidual::Residual(if scale > T::zero() { worst / scale } else { worst }))
}

/// Least-squares projection of `psi` onto `span{1, omega}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantFit<T> {
    pub a: T,
    pub c: T,
    /// `|psi - a - c omega|_2 / |psi|_2` over the grid.
    pub residual: T,
}

pub fn fit_invariant<T: Real>(psi: &InvariantCandidate<T>, grid: &MomentumGrid<T>, spec: &DispersionSpec<T>) -> Result<InvariantFit<T>> {
    let values = psi.on_grid(grid, spec)?;
    let omega = grid.omega_table(spec)?;
    fit_values(&values, &omega)
}

/// [`fit_invariant`] on raw samples; non-finite values are skipped.
pub fn fit_values<T: Real>(values: &[T], omega: &[T]) -> Result<InvariantFit<T>> {
    let (mut n, mut sw, mut sww, mut sp, mut swp, mut spp) =
        (T::zero(), T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    for (&p, &w) in values.iter().zip(omega) {
        if !p.is_finite() {
            continue;
        }
        n += T::one();
        sw += w;
        sww += w * w;
        sp += p;
        swp += w * p;
        spp += p * p;
    }
    if n < T::lit(2.0) {
        return Err(Error::InvalidInput("need at least two samples".into()));
    }
    // centred normal equations
    let mw = sw / n;
    let var = sww / n - mw * mw;
    if !(var > T::lit(1e-14) * (sww / n).max(T::lit(1e-300))) {
        return Err(Error::CollinearBasis);
    }
    let mp = sp / n;
    let cov = swp / n - mw * mp;
    let c = cov / var;
    let a = mp - c * mw;
    let mut res = T::zero();
    for (&p, &w) in values.iter().zip(omega) {
        if p.is_finite() {
            let r = p - a - c * w;
            res += r * r;
        }
    }
    let residual = if spp > T::zero() { (res / spp).sqrt() } else { res.sqrt() };
    Ok(InvariantFit { a, c, residual })
}

/// `W = 1/(a + c omega)`; every grid point must have `a + c omega > 0`.
pub fn stationary_from_invariant<T: Real>(a: T, c: T, grid: Arc<MomentumGrid<T>>, spec: &DispersionSpec<T>) -> Result<WignerState<T>> {
    let omega = grid.omega_table(spec)?;
    let mut values = Vec::with_capacity(omega.len());
    for (i, &w) in omega.iter().enumerate() {
        let psi = a + c * w;
        if !(psi > T::zero()) {
            return Err(Error::NonPositiveInvariant {
                k: grid.point(i).iter().map(|x| x.to_f64_lossy()).collect(),
                value: psi.to_f64_lossy(),
            });
        }
        values.push(T::one() / psi);
    }
    WignerState::new(grid, values)
}

/// `(a, c)` such that `1/(a + c omega)` has the given number and energy on the
/// active points of `template`'s grid.
///
/// Maximizes the concave `sum h log(a + c omega) - a N - c E` by damped Newton
/// steps; `guess` must satisfy `a + c omega > 0`.
pub fn stationary_for_moments<T: Real>(
    template: &WignerState<T>,
    omega: &[T],
    number: T,
    energy: T,
    guess: (T, T),
) -> Result<(T, T)> {
    let h = template.grid().weight();
    let active: Vec<usize> = (0..omega.len()).filter(|&i| template.is_active(i)).collect();
    let phi = |a: T, c: T| -> Option<T> {
        let mut s = T::zero();
        for &i in &active {
            let p = a + c * omega[i];
            if !(p > T::zero()) {
                return None;
            }
            s += p.ln();
        }
        Some(s * h - a * number - c * energy)
    };
    let (mut a, mut c) = guess;
    let mut f = phi(a, c).ok_or_else(|| Error::InvalidInput("initial guess makes a + c omega <= 0".into()))?;
    for _ in 0..200 {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
        for &i in &active {
            let w = omega[i];
            let p = T::one() / (a + c * w);
            g0 += p;
            g1 += w * p;
            h00 += p * p;
            h01 += w * p * p;
            h11 += w * w * p * p;
        }
        let (g0, g1) = (g0 * h - number, g1 * h - energy);
        let (h00, h01, h11) = (h00 * h, h01 * h, h11 * h);
        if g0.abs() <= T::lit(1e-15) * number.abs() && g1.abs() <= T::lit(1e-15) * energy.abs() {
            return Ok((a, c));
        }
        // Newton direction solves (-H) d = g
        let det = h00 * h11 - h01 * h01;
        if !(det > T::zero()) {
            return Err(Error::CollinearBasis);
        }
        let da = (h11 * g0 - h01 * g1) / det;
        let dc = (h00 * g1 - h01 * g0) / det;
        let mut step = T::one();
        let mut accepted = false;
        for _ in 0..60 {
            let (na, nc) = (a + step * da, c + step * dc);
            if let Some(nf) = phi(na, nc) {
                if nf >= f {
                    a = na;
                    c = nc;
                    f = nf;
                    accepted = true;
                    break;
                }
            }
            step *= T::half();
        }
        if !accepted {
            return Ok((a, c));
        }
    }
    Ok((a, c))
}

/// Serializable summary of one candidate's audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantAudit<T> {
    pub candidate: String,
    pub a: T,
    pub c: T,
    pub residual: T,
    pub max_pair_residual: Option<T>,
    /// `"empty"` or the number of merger samples tested.
    pub merger_manifold: String,
    pub max_merger_residual: Option<T>,
}

/// Fit, pair residual (when the kernel has pair entries) and merger residual.
pub fn audit_invariant<T: Real>(
    psi: &InvariantCandidate<T>,
    kernel: &CollisionKernel<T>,
    merger_samples: &[MergerSample<T>],
) -> Result<InvariantAudit<T>> {
    let fit = fit_invariant(psi, kernel.grid(), kernel.dispersion())?;
    let pair = match pair_invariant_residual(psi, kernel) {
        Ok(r) => Some(r),
        Err(Error::UndefinedResidual(_)) => None,
        Err(e) => return Err(e),
    };
    let merger = merger_invariant_residual(psi, kernel.dispersion(), merger_samples)?;
    let (manifold, mres) = match merger {
        MergerResidual::ManifoldEmpty => ("empty".to_string(), None),
        MergerResidual::Residual(r) => (merger_samples.len().to_string(), Some(r)),
    };
    Ok(InvariantAudit {
        candidate: psi.name().to_string(),
        a: fit.a,
        c: fit.c,
        residual: fit.residual,
        max_pair_residual: pair,
        merger_manifold: manifold,
        max_merger_residual: mres,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_candidates_fit_exactly() {
        let grid = MomentumGrid::<f64>::torus(1, 32).unwrap();
        let spec = DispersionSpec::optical(1.0, 1).unwrap();
        let fit = fit_invariant(&InvariantCandidate::affine(3.0, 2.0), &grid, &spec).unwrap();
        assert!((fit.a - 3.0).abs() < 1e-12 && (fit.c - 2.0).abs() < 1e-12);
        assert!(fit.residual <= 1e-12);
    }

    #[test]
    fn flat_dispersion_has_collinear_basis() {
        use crate::dispersion::{build_custom_dispersion, Coupling};
        let spec = build_custom_dispersion(
            vec![Coupling {
                offset: vec![0],
                value: 2.0,
            }],
            1,
        )
        .unwrap();
        let grid = MomentumGrid::<f64>::torus(1, 16).unwrap();
        assert!(matches!(
            fit_invariant(&InvariantCandidate::omega(), &grid, &spec),
            Err(Error::CollinearBasis)
        ));
    }

    #[test]
    fn stationary_state_rejects_nonpositive_psi() {
        let grid = Arc::new(MomentumGrid::<f64>::torus(1, 8).unwrap());
        let spec = DispersionSpec::optical(1.0, 1).unwrap();
        assert!(stationary_from_invariant(-1.0, 0.0, grid.clone(), &spec).is_err());
        let w = stationary_from_invariant(0.0, 2.0, grid.clone(), &spec).unwrap();
        let omega = grid.omega_table(&spec).unwrap();
        for (v, o) in w.values().iter().zip(&omega) {
            assert!((v - 1.0 / (2.0 * o)).abs() < 1e-15);
        }
    }

    #[test]
    fn moment_matching_recovers_known_parameters() {
        let grid = Arc::new(MomentumGrid::<f64>::torus(1, 64).unwrap());
        let spec = DispersionSpec::optical(1.0, 1).unwrap();
        let target = stationary_from_invariant(0.4, 0.7, grid.clone(), &spec).unwrap();
        let omega = grid.omega_table(&spec).unwrap();
        let (a, c) =
            stationary_for_moments(&target, &omega, target.number(), target.energy(&omega), (0.0, 1.0)).unwrap();
        assert!((a - 0.4).abs() < 1e-10 && (c - 0.7).abs() < 1e-10, "{a} {c}");
    }
}
