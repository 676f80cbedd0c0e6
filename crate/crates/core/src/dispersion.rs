//! Dispersion relations, group velocities and collision kinematics.
//!
//! Lattice dispersions live on the Brillouin torus `[-1/2, 1/2)^d` with all
//! momentum arithmetic taken modulo 1, so umklapp processes need no special
//! treatment. The nonlinear Schroedinger dispersion `|k|^2 / 2` lives on a
//! truncated continuum box `[-cutoff, cutoff)^d`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{torus_distance, Real};

/// Which closed form the dispersion follows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DispersionKind<T> {
    /// `omega^2 = omega0^2 + 2 sum_j (1 - cos 2 pi k_j)`.
    OpticalNearestNeighbor { omega0: T, dim: usize },
    /// Acoustic chain, `omega = (1 - cos 2 pi k)^{1/2}`.
    FpuChain1D,
    /// `omega = |k|^2 / 2` on continuum momenta.
    NlsQuadratic { dim: usize },
    /// `omega = sqrt(alpha_hat(k))` for finitely supported elastic constants.
    CustomElastic { alpha: Vec<Coupling<T>>, dim: usize },
}

/// One elastic constant `alpha(offset)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling<T> {
    pub offset: Vec<i64>,
    pub value: T,
}

/// Momentum space the dispersion is defined on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Domain<T> {
    Torus { dim: usize },
    Continuum { dim: usize, cutoff: T },
}

impl<T: Real> Domain<T> {
    pub fn dim(&self) -> usize {
        match *self {
            Domain::Torus { dim } | Domain::Continuum { dim, .. } => dim,
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self, Domain::Torus { .. })
    }
}

/// A dispersion relation together with its momentum domain. Immutable once
/// built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionSpec<T> {
    pub kind: DispersionKind<T>,
    pub domain: Domain<T>,
}

/// Solution `k3` of an energy constraint along one free momentum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicRoot<T> {
    pub k3: T,
    /// `|dF/dk3|` at the root; zero for roots under the degeneracy floor.
    pub jacobian: T,
    /// Exchange root (`k3` equal to `k1` or `k2`) or vanishing derivative.
    pub degenerate: bool,
    /// Simple root whose derivative is small enough to deserve a warning.
    pub near_degenerate: bool,
    /// Constraint value at `k3`.
    pub residual: T,
}

/// Knobs for the scan-and-bisect root finder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootScanOptions<T> {
    /// Sample points per period (or across the continuum box).
    pub points: usize,
    /// Roots with `|F'|` below this are degenerate.
    pub degeneracy_floor: T,
    /// Roots with `|F'|` below this carry a warning.
    pub near_degenerate_floor: T,
}

impl<T: Real> Default for RootScanOptions<T> {
    fn default() -> Self {
        Self {
            points: 4096,
            degeneracy_floor: T::lit(1e-8),
            near_degenerate_floor: T::lit(1e-4),
        }
    }
}

/// Outcome of a random search over the three-phonon merger constraint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport<T> {
    pub min_residual: T,
    pub argmin: [Vec<T>; 3],
    pub samples: usize,
    pub seed: u64,
}

impl<T: Real> DispersionSpec<T> {
    pub fn optical(omega0: T, dim: usize) -> Result<Self> {
        if !(omega0 >= T::zero()) || !omega0.is_finite() {
            return Err(Error::InvalidInput(format!("omega0 must be finite and >= 0, got {omega0}")));
        }
        check_dim(dim)?;
        Ok(Self {
            kind: DispersionKind::OpticalNearestNeighbor { omega0, dim },
            domain: Domain::Torus { dim },
        })
    }

    pub fn fpu_chain() -> Self {
        Self {
            kind: DispersionKind::FpuChain1D,
            domain: Domain::Torus { dim: 1 },
        }
    }

    pub fn nls(dim: usize, cutoff: T) -> Result<Self> {
        check_dim(dim)?;
        if !(cutoff > T::zero()) || !cutoff.is_finite() {
            return Err(Error::InvalidInput(format!("cutoff must be finite and > 0, got {cutoff}")));
        }
        Ok(Self {
            kind: DispersionKind::NlsQuadratic { dim },
            domain: Domain::Continuum { dim, cutoff },
        })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn is_torus(&self) -> bool {
        self.domain.is_torus()
    }

    /// True when the dispersion is constant, i.e. every group velocity vanishes.
    pub fn is_flat(&self) -> bool {
        match &self.kind {
            DispersionKind::CustomElastic { alpha, .. } => alpha
                .iter()
                .all(|c| c.offset.iter().all(|&x| x == 0) || c.value == T::zero()),
            _ => false,
        }
    }

    /// Evaluate `omega(k)` after validating `k` against the domain.
    pub fn eval_omega(&self, k: &[T]) -> Result<T> {
        self.check_momentum(k)?;
        Ok(self.omega(k))
    }

    /// `omega(k)` without domain validation.
    pub fn omega(&self, k: &[T]) -> T {
        match &self.kind {
            DispersionKind::OpticalNearestNeighbor { omega0, .. } => {
                let s: T = k.iter().map(|&kj| four_sin2(kj)).sum();
                (*omega0 * *omega0 + s).sqrt()
            }
            DispersionKind::FpuChain1D => (four_sin2(k[0]) * T::half()).sqrt(),
            DispersionKind::NlsQuadratic { .. } => {
                k.iter().map(|&kj| kj * kj).sum::<T>() * T::half()
            }
            DispersionKind::CustomElastic { alpha, .. } => alpha_hat(alpha, k).max(T::zero()).sqrt(),
        }
    }

    /// Fast path for one-dimensional dispersions.
    #[inline]
    pub fn omega_1d(&self, k: T) -> T {
        self.omega(std::slice::from_ref(&k))
    }

    /// Transport velocity: `(2 pi)^{-1} grad omega` on lattices, `k` for the
    /// Schroedinger dispersion.
    pub fn group_velocity(&self, k: &[T]) -> Result<Vec<T>> {
        self.check_momentum(k)?;
        let singular = || Error::SingularPoint(k.iter().map(|x| x.to_f64_lossy()).collect());
        let tiny = T::lit(1e-12);
        match &self.kind {
            DispersionKind::OpticalNearestNeighbor { .. } => {
                let w = self.omega(k);
                if w <= tiny {
                    return Err(singular());
                }
                Ok(k.iter().map(|&kj| (T::two_pi() * kj).sin() / w).collect())
            }
            DispersionKind::FpuChain1D => {
                let w = self.omega(k);
                if w <= tiny {
                    return Err(singular());
                }
                Ok(vec![(T::two_pi() * k[0]).sin() / (T::lit(2.0) * w)])
            }
            DispersionKind::NlsQuadratic { .. } => Ok(k.to_vec()),
            DispersionKind::CustomElastic { alpha, .. } => {
                let w = self.omega(k);
                if w <= tiny {
                    if self.is_flat() && w > T::zero() {
                        return Ok(vec![T::zero(); k.len()]);
                    }
                    return Err(singular());
                }
                let mut v = vec![T::zero(); k.len()];
                for c in alpha {
                    let phase = T::two_pi() * dot(&c.offset, k);
                    let s = phase.sin() * c.value;
                    for (vj, &xj) in v.iter_mut().zip(&c.offset) {
                        *vj -= s * T::from_i64(xj).unwrap();
                    }
                }
                let denom = T::lit(2.0) * w;
                Ok(v.into_iter().map(|x| x / denom).collect())
            }
        }
    }

    /// Derivative `d omega / dk` in one dimension (no `2 pi` factor).
    pub fn omega_derivative_1d(&self, k: T) -> Result<T> {
        if self.dim() != 1 {
            return Err(Error::InvalidInput("one-dimensional dispersion required".into()));
        }
        let v = self.group_velocity(std::slice::from_ref(&k))?[0];
        Ok(match self.kind {
            DispersionKind::NlsQuadratic { .. } => v,
            _ => v * T::two_pi(),
        })
    }

    /// Elastic constants for one-dimensional lattice kinds, `(offset, alpha)`.
    pub fn lattice_couplings_1d(&self) -> Result<Vec<(i64, T)>> {
        let one = T::one();
        match &self.kind {
            DispersionKind::OpticalNearestNeighbor { omega0, dim: 1 } => Ok(vec![
                (-1, -one),
                (0, *omega0 * *omega0 + T::lit(2.0)),
                (1, -one),
            ]),
            DispersionKind::FpuChain1D => Ok(vec![(-1, -T::half()), (0, one), (1, -T::half())]),
            DispersionKind::CustomElastic { alpha, dim: 1 } => {
                Ok(alpha.iter().map(|c| (c.offset[0], c.value)).collect())
            }
            _ => Err(Error::InvalidInput(
                "lattice simulation needs a one-dimensional lattice dispersion".into(),
            )),
        }
    }

    fn check_momentum(&self, k: &[T]) -> Result<()> {
        if k.len() != self.dim() {
            return Err(Error::DomainMismatch(format!(
                "momentum has {} components, dispersion is {}-dimensional",
                k.len(),
                self.dim()
            )));
        }
        if k.iter().any(|x| !x.is_finite()) {
            return Err(Error::DomainMismatch("non-finite momentum component".into()));
        }
        if let Domain::Continuum { cutoff, .. } = self.domain {
            if k.iter().any(|x| x.abs() > cutoff) {
                return Err(Error::DomainMismatch(format!(
                    "momentum {:?} outside the cutoff box of half-width {cutoff}",
                    k.iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>()
                )));
            }
        }
        Ok(())
    }

    /// All roots `k3` of `omega(k3) + omega(k1+k2-k3) - omega(k1) - omega(k2)`
    /// in one period, exchange roots included and flagged.
    pub fn solve_pair_kinematics(&self, k1: T, k2: T, tol: T) -> Result<Vec<KinematicRoot<T>>> {
        KinematicsScanner::new(self, RootScanOptions::default())?.pair_roots(k1, k2, tol)
    }

    /// Random search for solutions of the merger constraint
    /// `omega(k1)+omega(k2)+omega(k3) = omega(k1+k2+k3)`.
    ///
    /// Sample `i` is drawn from a ChaCha stream selected by `i / BLOCK`, so the
    /// result does not depend on how blocks are scheduled across threads.
    pub fn scan_merger_kinematics(&self, samples: usize, seed: u64) -> Result<ScanReport<T>> {
        const BLOCK: usize = 4096;
        if !self.is_torus() {
            return Err(Error::InvalidInput("merger scan requires a torus dispersion".into()));
        }
        if samples == 0 {
            return Err(Error::InvalidInput("samples must be >= 1".into()));
        }
        let d = self.dim();
        let blocks = samples.div_ceil(BLOCK);
        let best = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(b as u64);
                let count = BLOCK.min(samples - b * BLOCK);
                let mut k = vec![T::zero(); 3 * d];
                let mut sum = vec![T::zero(); d];
                let mut best: Option<(T, Vec<T>)> = None;
                for _ in 0..count {
                    for x in k.iter_mut() {
                        *x = T::lit(rng.random::<f64>() - 0.5);
                    }
                    for j in 0..d {
                        sum[j] = (k[j] + k[d + j] + k[2 * d + j]).wrap_torus();
                    }
                    let r = self.omega(&k[..d]) + self.omega(&k[d..2 * d]) + self.omega(&k[2 * d..])
                        - self.omega(&sum);
                    if best.as_ref().is_none_or(|(b, _)| r < *b) {
                        best = Some((r, k.clone()));
                    }
                }
                best.expect("non-empty block")
            })
            .collect::<Vec<_>>()
            .into_iter()
            .reduce(|a, b| if b.0 < a.0 { b } else { a })
            .expect("at least one block");
        let (min_residual, k) = best;
        Ok(ScanReport {
            min_residual,
            argmin: [k[..d].to_vec(), k[d..2 * d].to_vec(), k[2 * d..].to_vec()],
            samples,
            seed,
        })
    }
}

/// Build a dispersion from finitely supported elastic constants.
///
/// Rejects `alpha(x) != alpha(-x)` and any negative Fourier transform found
/// on a dense check grid (1024 points per axis, capped at 2^21 points total).
pub fn build_custom_dispersion<T: Real>(alpha: Vec<Coupling<T>>, dim: usize) -> Result<DispersionSpec<T>> {
    check_dim(dim)?;
    if alpha.is_empty() {
        return Err(Error::InvalidInput("no elastic constants given".into()));
    }
    for c in &alpha {
        if c.offset.len() != dim {
            return Err(Error::InvalidInput(format!(
                "offset {:?} does not have {dim} components",
                c.offset
            )));
        }
        if !c.value.is_finite() {
            return Err(Error::InvalidInput(format!("alpha{:?} is not finite", c.offset)));
        }
    }
    let lookup = |x: &[i64]| -> T {
        alpha
            .iter()
            .filter(|c| c.offset == x)
            .fold(T::zero(), |acc, c| acc + c.value)
    };
    for c in &alpha {
        let neg: Vec<i64> = c.offset.iter().map(|x| -x).collect();
        let (a, b) = (lookup(&c.offset), lookup(&neg));
        if (a - b).abs() > T::epsilon() * (a.abs() + b.abs()) {
            return Err(Error::AsymmetricCoupling(c.offset.clone()));
        }
    }

    let per_axis = (1usize << (21 / dim)).min(1024);
    let total = per_axis.pow(dim as u32);
    let scale: T = alpha.iter().map(|c| c.value.abs()).sum();
    let floor = -T::lit(1e-12) * scale;
    let mut k = vec![T::zero(); dim];
    for flat in 0..total {
        let mut rem = flat;
        for kj in k.iter_mut() {
            *kj = T::from_usize_lossy(rem % per_axis) / T::from_usize_lossy(per_axis) - T::half();
            rem /= per_axis;
        }
        let value = alpha_hat(&alpha, &k);
        if value < floor {
            return Err(Error::NegativeFourierTransform {
                k: k.iter().map(|x| x.to_f64_lossy()).collect(),
                value: value.to_f64_lossy(),
            });
        }
    }

    let mut alpha = alpha;
    alpha.sort_by(|a, b| a.offset.cmp(&b.offset));
    Ok(DispersionSpec {
        kind: DispersionKind::CustomElastic { alpha, dim },
        domain: Domain::Torus { dim },
    })
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > 3 {
        return Err(Error::InvalidInput(format!("dimension must be 1, 2 or 3, got {dim}")));
    }
    Ok(())
}

/// `2 (1 - cos 2 pi k) = 4 sin^2(pi k)`.
#[inline]
fn four_sin2<T: Real>(k: T) -> T {
    let s = (T::PI() * k.wrap_torus()).sin();
    T::lit(4.0) * s * s
}

#[inline]
fn dot<T: Real>(x: &[i64], k: &[T]) -> T {
    x.iter()
        .zip(k)
        .map(|(&xi, &ki)| T::from_i64(xi).unwrap() * ki)
        .sum()
}

fn alpha_hat<T: Real>(alpha: &[Coupling<T>], k: &[T]) -> T {
    alpha
        .iter()
        .map(|c| c.value * (T::two_pi() * dot(&c.offset, k)).cos())
        .sum()
}

/// Scan-and-bisect solver for the one-dimensional energy constraints used by
/// the collision kernel.
///
/// On the torus the dispersion is tabulated once on the scan grid; queries
/// whose total momentum is commensurate with that grid reuse the table for
/// both terms of the constraint.
pub struct KinematicsScanner<'a, T> {
    spec: &'a DispersionSpec<T>,
    opts: RootScanOptions<T>,
    lo: T,
    width: T,
    table: Vec<T>,
}

enum Constraint {
    /// `omega(x) + omega(P - x) = omega1 + omega2`
    Pair,
    /// `omega1 + omega2 + omega(x) = omega(P + x)`
    Merger,
    /// `omega1 + omega2 + omega(x) + omega(-P - x) = 0`
    AllPlus,
}

impl<'a, T: Real> KinematicsScanner<'a, T> {
    pub fn new(spec: &'a DispersionSpec<T>, opts: RootScanOptions<T>) -> Result<Self> {
        if spec.dim() != 1 {
            return Err(Error::InvalidInput(
                "collision kinematics are resolved by root finding in one dimension only".into(),
            ));
        }
        if opts.points < 8 {
            return Err(Error::InvalidInput("scan needs at least 8 points".into()));
        }
        let (lo, width) = match spec.domain {
            Domain::Torus { .. } => (-T::half(), T::one()),
            Domain::Continuum { cutoff, .. } => (-cutoff, cutoff + cutoff),
        };
        let n = opts.points;
        let table = (0..n)
            .map(|j| spec.omega_1d(lo + width * T::from_usize_lossy(j) / T::from_usize_lossy(n)))
            .collect();
        Ok(Self {
            spec,
            opts,
            lo,
            width,
            table,
        })
    }

    pub fn options(&self) -> &RootScanOptions<T> {
        &self.opts
    }

    fn periodic(&self) -> bool {
        self.spec.is_torus()
    }

    fn x_at(&self, j: usize) -> T {
        self.lo + self.width * T::from_usize_lossy(j) / T::from_usize_lossy(self.opts.points)
    }

    /// Table index offset `m` with `lo + m h = P - lo` (mod period), when `P`
    /// is commensurate with the scan grid.
    fn table_shift(&self, p: T) -> Option<usize> {
        if !self.periodic() {
            return None;
        }
        let n = T::from_usize_lossy(self.opts.points);
        let s = (p - self.lo - self.lo) * n;
        let r = s.round();
        if (s - r).abs() < T::lit(1e-9) {
            let m = r.to_i64()?.rem_euclid(self.opts.points as i64) as usize;
            Some(m)
        } else {
            None
        }
    }

    fn constraint_value(&self, c: &Constraint, p: T, e: T, x: T) -> T {
        let w = |k: T| self.spec.omega_1d(k);
        match c {
            Constraint::Pair => w(x) + w(p - x) - e,
            Constraint::Merger => e + w(x) - w(p + x),
            Constraint::AllPlus => e + w(x) + w(-p - x),
        }
    }

    fn derivative(&self, c: &Constraint, p: T, e: T, x: T) -> T {
        let h = T::epsilon().cbrt() * T::one().max(x.abs());
        (self.constraint_value(c, p, e, x + h) - self.constraint_value(c, p, e, x - h)) / (h + h)
    }

    fn scan(&self, c: &Constraint, p: T, e: T, tol: T) -> Vec<T> {
        let n = self.opts.points;
        let tab = &self.table;
        let values: Vec<T> = match (c, self.table_shift(match c {
            Constraint::Pair => p,
            Constraint::Merger | Constraint::AllPlus => -p,
        })) {
            // P - x_j = x_{(m - j) mod n}
            (Constraint::Pair, Some(m)) => (0..n).map(|j| tab[j] + tab[(m + n - j) % n] - e).collect(),
            // P + x_j = x_{(j - m) mod n} when -P - 2 lo = m h
            (Constraint::Merger, Some(m)) => (0..n).map(|j| e + tab[j] - tab[(j + n - m) % n]).collect(),
            (Constraint::AllPlus, Some(m)) => (0..n).map(|j| e + tab[j] + tab[(m + n - j) % n]).collect(),
            _ => (0..n).map(|j| self.constraint_value(c, p, e, self.x_at(j))).collect(),
        };
        let f = |x: T| self.constraint_value(c, p, e, x);
        let periodic = self.periodic();
        let cells = if periodic { n } else { n - 1 };
        let value_at = |j: usize| -> T {
            if j == n {
                // continuum right edge, or wrapped first point on the torus
                if periodic {
                    values[0]
                } else {
                    f(self.lo + self.width)
                }
            } else {
                values[j]
            }
        };
        let mut roots = Vec::new();
        for j in 0..n {
            let fj = values[j];
            if fj == T::zero() {
                let prev = if j > 0 {
                    Some(values[j - 1])
                } else if periodic {
                    Some(values[n - 1])
                } else {
                    None
                };
                let next = if j + 1 < n || periodic { Some(value_at(j + 1)) } else { None };
                if let (Some(a), Some(b)) = (prev, next) {
                    if a * b < T::zero() {
                        roots.push(self.x_at(j));
                    }
                }
                continue;
            }
            if j >= cells {
                continue;
            }
            let fn_ = value_at(j + 1);
            if fj * fn_ < T::zero() {
                let (a, b) = (self.x_at(j), self.x_at(j) + self.width / T::from_usize_lossy(n));
                roots.push(bisect(&f, a, b, fj, tol));
            }
        }
        if periodic {
            for r in roots.iter_mut() {
                *r = r.wrap_torus();
            }
        }
        roots
    }

    fn same_point(&self, a: T, b: T) -> bool {
        let tol = T::lit(1e-7) * self.width;
        if self.periodic() {
            torus_distance(a, b) < tol
        } else {
            (a - b).abs() < tol
        }
    }

    fn classify(&self, c: &Constraint, p: T, e: T, x: T, exchange: bool) -> KinematicRoot<T> {
        let jac = self.derivative(c, p, e, x).abs();
        let residual = self.constraint_value(c, p, e, x);
        if exchange {
            return KinematicRoot {
                k3: x,
                jacobian: jac,
                degenerate: true,
                near_degenerate: false,
                residual,
            };
        }
        let degenerate = jac < self.opts.degeneracy_floor;
        KinematicRoot {
            k3: x,
            jacobian: if degenerate { T::zero() } else { jac },
            degenerate,
            near_degenerate: !degenerate && jac < self.opts.near_degenerate_floor,
            residual,
        }
    }

    /// Pair-collision roots for incoming `(k1, k2)`.
    pub fn pair_roots(&self, k1: T, k2: T, tol: T) -> Result<Vec<KinematicRoot<T>>> {
        self.check_tol(tol)?;
        let (k1, k2) = self.normalize(k1, k2)?;
        let p = k1 + k2;
        let e = self.spec.omega_1d(k1) + self.spec.omega_1d(k2);
        let c = Constraint::Pair;
        let mut out = vec![self.classify(&c, p, e, k1, true)];
        if !self.same_point(k1, k2) {
            out.push(self.classify(&c, p, e, k2, true));
        }
        for r in self.scan(&c, p, e, tol) {
            if self.same_point(r, k1) || self.same_point(r, k2) {
                continue;
            }
            out.push(self.classify(&c, p, e, r, false));
        }
        out.sort_by(|a, b| a.k3.partial_cmp(&b.k3).unwrap());
        Ok(out)
    }

    /// Merger roots `k3` of `omega(k1)+omega(k2)+omega(k3) = omega(k1+k2+k3)`.
    pub fn merger_roots(&self, k1: T, k2: T, tol: T) -> Result<Vec<KinematicRoot<T>>> {
        self.check_tol(tol)?;
        let (k1, k2) = self.normalize(k1, k2)?;
        let p = k1 + k2;
        let e = self.spec.omega_1d(k1) + self.spec.omega_1d(k2);
        let c = Constraint::Merger;
        let mut out: Vec<_> = self
            .scan(&c, p, e, tol)
            .into_iter()
            .map(|r| self.classify(&c, p, e, r, false))
            .collect();
        out.sort_by(|a, b| a.k3.partial_cmp(&b.k3).unwrap());
        Ok(out)
    }

    /// Roots of the all-plus sign channel; empty whenever `omega > 0`.
    pub fn all_plus_roots(&self, k1: T, k2: T, tol: T) -> Result<Vec<KinematicRoot<T>>> {
        self.check_tol(tol)?;
        let (k1, k2) = self.normalize(k1, k2)?;
        let p = k1 + k2;
        let e = self.spec.omega_1d(k1) + self.spec.omega_1d(k2);
        let c = Constraint::AllPlus;
        Ok(self
            .scan(&c, p, e, tol)
            .into_iter()
            .map(|r| self.classify(&c, p, e, r, false))
            .collect())
    }

    fn check_tol(&self, tol: T) -> Result<()> {
        if !(tol > T::zero()) {
            return Err(Error::InvalidInput(format!("root tolerance must be > 0, got {tol}")));
        }
        Ok(())
    }

    fn normalize(&self, k1: T, k2: T) -> Result<(T, T)> {
        if self.periodic() {
            if !k1.is_finite() || !k2.is_finite() {
                return Err(Error::DomainMismatch("non-finite momentum".into()));
            }
            Ok((k1.wrap_torus(), k2.wrap_torus()))
        } else {
            self.spec.check_momentum(std::slice::from_ref(&k1))?;
            self.spec.check_momentum(std::slice::from_ref(&k2))?;
            Ok((k1, k2))
        }
    }
}

fn bisect<T: Real>(f: &impl Fn(T) -> T, mut a: T, mut b: T, fa: T, tol: T) -> T {
    let mut sa = fa.signum();
    let mut best = (a, fa.abs());
    for _ in 0..200 {
        let m = (a + b) * T::half();
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm.abs() < best.1 {
            best = (m, fm.abs());
        }
        if fm.abs() <= tol {
            return m;
        }
        if fm.signum() == sa {
            a = m;
            sa = fm.signum();
        } else {
            b = m;
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coupling(offset: i64, value: f64) -> Coupling<f64> {
        Coupling {
            offset: vec![offset],
            value,
        }
    }

    #[test]
    fn optical_3d_closed_form_values() {
        let d = DispersionSpec::optical(1.0f64, 3).unwrap();
        assert!((d.eval_omega(&[0.0, 0.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((d.eval_omega(&[0.5, 0.5, 0.5]).unwrap() - 13f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn fpu_chain_at_zone_boundary() {
        let d = DispersionSpec::<f64>::fpu_chain();
        assert!((d.eval_omega(&[0.5]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(d.eval_omega(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn nls_is_half_square() {
        let d = DispersionSpec::nls(3, 10.0f64).unwrap();
        assert!((d.eval_omega(&[1.0, 2.0, 3.0]).unwrap() - 7.0).abs() < 1e-15);
        assert_eq!(d.group_velocity(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn domain_mismatches_are_rejected() {
        let torus = DispersionSpec::optical(1.0, 3).unwrap();
        assert!(matches!(torus.eval_omega(&[0.1]), Err(Error::DomainMismatch(_))));
        assert!(matches!(torus.eval_omega(&[f64::NAN, 0.0, 0.0]), Err(Error::DomainMismatch(_))));
        let nls = DispersionSpec::nls(1, 2.0).unwrap();
        assert!(matches!(nls.eval_omega(&[2.5]), Err(Error::DomainMismatch(_))));
    }

    #[test]
    fn group_velocity_at_optical_minimum_vanishes() {
        let d = DispersionSpec::optical(1.0, 3).unwrap();
        assert_eq!(d.group_velocity(&[0.0, 0.0, 0.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn acoustic_conical_point_is_singular() {
        let d = DispersionSpec::<f64>::fpu_chain();
        assert!(matches!(d.group_velocity(&[0.0]), Err(Error::SingularPoint(_))));
        assert!(matches!(d.group_velocity(&[1.0]), Err(Error::SingularPoint(_))));
    }

    #[test]
    fn fpu_group_velocity_matches_finite_difference() {
        let d = DispersionSpec::<f64>::fpu_chain();
        let h = 1e-6;
        let fd = (d.omega_1d(0.25 + h) - d.omega_1d(0.25 - h)) / (2.0 * h) / std::f64::consts::TAU;
        let v = d.group_velocity(&[0.25]).unwrap()[0];
        // (2 pi)^{-1} pi sin(pi/2) / sqrt(1 - cos(pi/2)) = 1/2
        assert!((v - 0.5).abs() < 1e-14);
        assert!((v - fd).abs() < 1e-8);
    }

    #[test]
    fn custom_reproduces_shifted_chain() {
        let w0: f64 = 0.7;
        let spec = build_custom_dispersion(
            vec![coupling(-1, -1.0), coupling(0, 2.0 + w0 * w0), coupling(1, -1.0)],
            1,
        )
        .unwrap();
        for &k in &[-0.5, -0.31, 0.0, 0.12, 0.4] {
            let expect = (w0 * w0 + 2.0 - 2.0 * (std::f64::consts::TAU * k).cos()).sqrt();
            assert!((spec.omega_1d(k) - expect).abs() < 1e-14);
        }
        let optical = DispersionSpec::optical(w0, 1).unwrap();
        assert!((spec.omega_1d(0.3) - optical.omega_1d(0.3)).abs() < 1e-14);
    }

    #[test]
    fn custom_constant_is_flat() {
        let spec = build_custom_dispersion(vec![coupling(0, 1.0)], 1).unwrap();
        assert!(spec.is_flat());
        assert_eq!(spec.omega_1d(0.37), 1.0);
        assert_eq!(spec.group_velocity(&[0.2]).unwrap(), vec![0.0]);
    }

    #[test]
    fn unstable_couplings_rejected_with_witness() {
        let err = build_custom_dispersion(vec![coupling(-1, -1.0), coupling(0, 1.0), coupling(1, -1.0)], 1)
            .unwrap_err();
        match err {
            Error::NegativeFourierTransform { k, value } => {
                assert!(value < 0.0);
                // 1 - 2 cos(2 pi k) < 0 for |k| < 1/6
                assert!(k[0].abs() < 1.0 / 6.0);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn asymmetric_couplings_rejected() {
        let err = build_custom_dispersion(vec![coupling(0, 3.0), coupling(1, -1.0)], 1).unwrap_err();
        assert!(matches!(err, Error::AsymmetricCoupling(x) if x == vec![1]));
    }

    #[test]
    fn pair_kinematics_contains_exchange_roots() {
        let d = DispersionSpec::<f64>::fpu_chain();
        let roots = d.solve_pair_kinematics(0.1, 0.3, 1e-12).unwrap();
        for k in [0.1, 0.3] {
            assert!(roots.iter().any(|r| r.degenerate && (r.k3 - k).abs() < 1e-12));
        }
        assert!(roots.iter().any(|r| !r.degenerate), "{roots:?}");
        for r in &roots {
            assert!(r.residual.abs() <= 1e-12);
        }
    }

    #[test]
    fn nls_1d_has_only_exchange_roots() {
        let d = DispersionSpec::nls(1, 2.0).unwrap();
        let roots = d.solve_pair_kinematics(0.1, 0.3, 1e-12).unwrap();
        assert_eq!(roots.len(), 2);
        assert!(roots.iter().all(|r| r.degenerate));
    }

    #[test]
    fn flat_dispersion_reports_no_simple_roots() {
        let spec = build_custom_dispersion(vec![coupling(0, 1.0)], 1).unwrap();
        let roots = spec.solve_pair_kinematics(0.1, 0.3, 1e-12).unwrap();
        assert!(roots.iter().all(|r| r.degenerate));
    }

    #[test]
    fn optical_1d_has_no_mergers() {
        let d = DispersionSpec::optical(1.0, 1).unwrap();
        let s = KinematicsScanner::new(&d, RootScanOptions::default()).unwrap();
        assert!(s.merger_roots(0.1, -0.2, 1e-12).unwrap().is_empty());
        assert!(s.all_plus_roots(0.1, -0.2, 1e-12).unwrap().is_empty());
    }

    #[test]
    fn nls_1d_has_merger_roots() {
        // k1 = k2 = 1: 1 + k3^2/2 = (2 + k3)^2 / 2  =>  k3 = -1/2
        let d = DispersionSpec::nls(1, 4.0f64).unwrap();
        let s = KinematicsScanner::new(&d, RootScanOptions::default()).unwrap();
        let roots = s.merger_roots(1.0, 1.0, 1e-12).unwrap();
        assert!(roots.iter().any(|r| (r.k3 + 0.5).abs() < 1e-10), "{roots:?}");
    }

    #[test]
    fn merger_scan_is_deterministic() {
        let d = DispersionSpec::optical(1.0, 3).unwrap();
        let a = d.scan_merger_kinematics(5000, 7).unwrap();
        let b = d.scan_merger_kinematics(5000, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.min_residual > 0.0);
    }

    #[test]
    fn strongly_optical_merger_bound() {
        let d = DispersionSpec::optical(10.0, 3).unwrap();
        let r = d.scan_merger_kinematics(20_000, 1).unwrap();
        assert!(r.min_residual >= 30.0 - (100f64 + 12.0).sqrt());
    }

    #[test]
    fn invalid_constructors() {
        assert!(DispersionSpec::optical(-1.0, 3).is_err());
        assert!(DispersionSpec::optical(1.0, 0).is_err());
        assert!(DispersionSpec::nls(3, 0.0).is_err());
        assert!(d_scan_zero().is_err());
    }

    fn d_scan_zero() -> Result<ScanReport<f64>> {
        DispersionSpec::optical(1.0, 3).unwrap().scan_merger_kinematics(0, 1)
    }
}
