//! Uniform momentum grids and Wigner functions sampled on them.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dispersion::DispersionSpec;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Where the grid points live.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GridDomain<T> {
    /// `k_i = -1/2 + i/N` per axis.
    Torus,
    /// `k_i = -cutoff + 2 cutoff i / N` per axis.
    Continuum { cutoff: T },
}

/// Uniform tensor-product grid with equal quadrature weights.
///
/// Flat index `i` of a `d`-dimensional grid is row-major: the last axis
/// varies fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentumGrid<T> {
    dim: usize,
    n: usize,
    domain: GridDomain<T>,
}

impl<T: Real> MomentumGrid<T> {
    pub fn torus(dim: usize, n: usize) -> Result<Self> {
        Self::new(dim, n, GridDomain::Torus)
    }

    pub fn continuum(dim: usize, n: usize, cutoff: T) -> Result<Self> {
        if !(cutoff > T::zero()) || !cutoff.is_finite() {
            return Err(Error::InvalidInput(format!("cutoff must be > 0, got {cutoff}")));
        }
        Self::new(dim, n, GridDomain::Continuum { cutoff })
    }

    /// Grid matching the domain of `spec`.
    pub fn for_dispersion(spec: &DispersionSpec<T>, n: usize) -> Result<Self> {
        match spec.domain {
            crate::dispersion::Domain::Torus { dim } => Self::torus(dim, n),
            crate::dispersion::Domain::Continuum { dim, cutoff } => Self::continuum(dim, n, cutoff),
        }
    }

    fn new(dim: usize, n: usize, domain: GridDomain<T>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidInput(format!("grid dimension must be 1..=3, got {dim}")));
        }
        if n < 4 || n % 2 != 0 {
            return Err(Error::InvalidInput(format!("points per axis must be even and >= 4, got {n}")));
        }
        Ok(Self { dim, n, domain })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn domain(&self) -> GridDomain<T> {
        self.domain
    }

    pub fn is_torus(&self) -> bool {
        matches!(self.domain, GridDomain::Torus)
    }

    /// Lower edge and period/extent along one axis.
    pub fn axis_span(&self) -> (T, T) {
        match self.domain {
            GridDomain::Torus => (-T::half(), T::one()),
            GridDomain::Continuum { cutoff } => (-cutoff, cutoff + cutoff),
        }
    }

    /// Spacing along one axis.
    pub fn spacing(&self) -> T {
        self.axis_span().1 / T::from_usize_lossy(self.n)
    }

    /// Quadrature weight of every point.
    pub fn weight(&self) -> T {
        self.spacing().powi(self.dim as i32)
    }

    /// Coordinate of axis index `i`.
    #[inline]
    pub fn coord(&self, i: usize) -> T {
        let (lo, _) = self.axis_span();
        lo + self.spacing() * T::from_usize_lossy(i)
    }

    /// Per-axis indices of flat index `flat`.
    pub fn unflatten(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        let mut rem = flat;
        for slot in idx.iter_mut().rev() {
            *slot = rem % self.n;
            rem /= self.n;
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    /// Momentum of flat index `flat`.
    pub fn point(&self, flat: usize) -> Vec<T> {
        self.unflatten(flat).into_iter().map(|i| self.coord(i)).collect()
    }

    pub fn points(&self) -> Vec<Vec<T>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// `omega` at every grid point.
    pub fn omega_table(&self, spec: &DispersionSpec<T>) -> Result<Vec<T>> {
        if spec.dim() != self.dim {
            return Err(Error::InvalidInput(format!(
                "grid is {}-dimensional, dispersion {}-dimensional",
                self.dim,
                spec.dim()
            )));
        }
        if spec.is_torus() != self.is_torus() {
            return Err(Error::InvalidInput("grid and dispersion domains differ".into()));
        }
        Ok((0..self.len()).map(|i| spec.omega(&self.point(i))).collect())
    }

    /// Axis index of the grid point closest to torus coordinate `k` from below
    /// and the fractional offset toward the next point.
    pub fn locate(&self, k: T) -> (usize, T) {
        let (lo, width) = self.axis_span();
        let nf = T::from_usize_lossy(self.n);
        let mut t = (k - lo) / width * nf;
        if self.is_torus() {
            t = t - (t / nf).floor() * nf;
        }
        let base = t.floor();
        let frac = t - base;
        let i = base.to_i64().unwrap_or(0).rem_euclid(self.n as i64) as usize;
        (i, frac)
    }
}

/// Non-negative phonon occupation `W(k)` sampled on a grid.
///
/// Points listed in `excluded` (for instance the `omega = 0` mode of an
/// acoustic chain) carry no quadrature weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WignerState<T> {
    grid: Arc<MomentumGrid<T>>,
    values: Vec<T>,
    #[serde(default)]
    excluded: Vec<usize>,
}

impl<T: Real> WignerState<T> {
    pub fn new(grid: Arc<MomentumGrid<T>>, values: Vec<T>) -> Result<Self> {
        Self::with_exclusions(grid, values, Vec::new())
    }

    pub fn with_exclusions(grid: Arc<MomentumGrid<T>>, values: Vec<T>, mut excluded: Vec<usize>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::InvalidInput(format!(
                "W must be finite and >= 0; W[{i}] = {}",
                values[i]
            )));
        }
        excluded.sort_unstable();
        excluded.dedup();
        if excluded.last().is_some_and(|&i| i >= grid.len()) {
            return Err(Error::InvalidInput("excluded index out of range".into()));
        }
        Ok(Self {
            grid,
            values,
            excluded,
        })
    }

    pub fn zeros(grid: Arc<MomentumGrid<T>>) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![T::zero(); n],
            excluded: Vec::new(),
        }
    }

    pub fn grid(&self) -> &Arc<MomentumGrid<T>> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn excluded(&self) -> &[usize] {
        &self.excluded
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.excluded.binary_search(&i).is_err()
    }

    /// Same grid and exclusions, new values (validated).
    pub fn with_values(&self, values: Vec<T>) -> Result<Self> {
        Self::with_exclusions(self.grid.clone(), values, self.excluded.clone())
    }

    /// Quadrature `sum_i f(i, W_i) dk` over active points.
    pub fn integrate(&self, mut f: impl FnMut(usize, T) -> T) -> T {
        let w = self.grid.weight();
        let mut acc = T::zero();
        for (i, &v) in self.values.iter().enumerate() {
            if self.is_active(i) {
                acc += f(i, v);
            }
        }
        acc * w
    }

    /// Phonon number `int W dk`.
    pub fn number(&self) -> T {
        self.integrate(|_, v| v)
    }

    /// Harmonic energy `int omega W dk`.
    pub fn energy(&self, omega: &[T]) -> T {
        self.integrate(|i, v| omega[i] * v)
    }

    /// Weighted L2 norm.
    pub fn l2_norm(&self) -> T {
        self.integrate(|_, v| v * v).sqrt()
    }

    /// Weighted L2 distance to another state on the same grid.
    pub fn l2_distance(&self, other: &[T]) -> T {
        self.integrate(|i, v| (v - other[i]) * (v - other[i])).sqrt()
    }
}
