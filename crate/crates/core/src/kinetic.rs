//! Time integration of the kinetic equation, entropy and entropy production.

use std::sync::Arc;

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::collision::CollisionKernel;
use crate::dispersion::DispersionSpec;
use crate::error::{Error, Result};
use crate::grid::{MomentumGrid, WignerState};
use crate::scalar::Real;

/// `W_beta = 1 / (beta omega)` on every grid point.
pub fn equilibrium_wigner<T: Real>(beta: T, grid: Arc<MomentumGrid<T>>, spec: &DispersionSpec<T>) -> Result<WignerState<T>> {
    equilibrium_wigner_excluding(beta, grid, spec, false)
}

/// Like [`equilibrium_wigner`]; with `exclude_zero_modes` the `omega = 0`
/// points are set to zero and excluded from quadrature instead of rejected.
pub fn equilibrium_wigner_excluding<T: Real>(
    beta: T,
    grid: Arc<MomentumGrid<T>>,
    spec: &DispersionSpec<T>,
    exclude_zero_modes: bool,
) -> Result<WignerState<T>> {
    if !(beta > T::zero()) || !beta.is_finite() {
        return Err(Error::InvalidInput(format!("beta must be > 0, got {beta}")));
    }
    let omega = grid.omega_table(spec)?;
    let mut excluded = Vec::new();
    let mut values = Vec::with_capacity(omega.len());
    for (i, &w) in omega.iter().enumerate() {
        if w > T::zero() {
            values.push(T::one() / (beta * w));
        } else if exclude_zero_modes {
            excluded.push(i);
            values.push(T::zero());
        } else {
            return Err(Error::ZeroFrequency(grid.point(i).iter().map(|x| x.to_f64_lossy()).collect()));
        }
    }
    WignerState::with_exclusions(grid, values, excluded)
}

/// Entropy `int log W dk`; `-inf` with `finite = false` when some active
/// point has `W <= 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entropy<T> {
    pub value: T,
    pub finite: bool,
}

pub fn entropy<T: Real>(w: &WignerState<T>) -> Entropy<T> {
    let mut bad = false;
    let value = w.integrate(|_, v| {
        if v > T::zero() {
            v.ln()
        } else {
            bad = true;
            T::zero()
        }
    });
    if bad {
        Entropy {
            value: T::neg_infinity(),
            finite: false,
        }
    } else {
        Entropy { value, finite: true }
    }
}

/// Nonnegative entropy production `sum W1 W2 W3 W4 (sum sigma_j / W_j)^2` over
/// the kernel's collision manifold.
pub fn entropy_production<T: Real>(kernel: &CollisionKernel<T>, w: &WignerState<T>) -> Result<T> {
    if w.grid().as_ref() != kernel.grid().as_ref() {
        return Err(Error::InvalidInput("Wigner function lives on a different grid".into()));
    }
    let zero_modes = kernel.zero_modes();
    if let Some(i) = (0..w.values().len()).find(|&i| w.values()[i] <= T::zero() && zero_modes.binary_search(&i).is_err())
    {
        return Err(Error::InvalidInput(format!("entropy production needs W > 0; W[{i}] = {}", w.values()[i])));
    }
    Ok(kernel.entropy_production(w.values()))
}

/// Largest `|loss_i| / W_i`, the fastest relaxation rate at `w`.
pub fn max_relaxation_rate<T: Real>(kernel: &CollisionKernel<T>, w: &WignerState<T>) -> Result<T> {
    let rates = crate::collision::evaluate_collision(kernel, w)?;
    let mut m = T::zero();
    for (i, (&l, &v)) in rates.loss.iter().zip(w.values()).enumerate() {
        if v > T::zero() && w.is_active(i) {
            m = m.max(l.abs() / v);
        }
    }
    Ok(m)
}

/// Step size `safety / max_relaxation_rate`, or `fallback` for an inert state.
pub fn suggest_dt<T: Real>(kernel: &CollisionKernel<T>, w: &WignerState<T>, safety: T, fallback: T) -> Result<T> {
    let r = max_relaxation_rate(kernel, w)?;
    Ok(if r > T::zero() { safety / r } else { fallback })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOptions {
    /// Replace negative values by zero instead of retrying with smaller steps.
    pub clamp: bool,
    pub max_halvings: u32,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            clamp: false,
            max_halvings: 20,
        }
    }
}

/// Result of one accepted step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome<T> {
    pub state: WignerState<T>,
    /// RK4 substeps taken.
    pub substeps: usize,
    /// Deepest halving level used.
    pub halvings: u32,
}

struct Rk4<'a, T: Real> {
    kernel: &'a CollisionKernel<T>,
    k: [Vec<T>; 4],
    tmp: Vec<T>,
}

impl<'a, T: Real> Rk4<'a, T> {
    fn new(kernel: &'a CollisionKernel<T>, len: usize) -> Self {
        Self {
            kernel,
            k: std::array::from_fn(|_| vec![T::zero(); len]),
            tmp: vec![T::zero(); len],
        }
    }

    fn step(&mut self, w: &[T], dt: T, out: &mut [T]) {
        let half = dt * T::half();
        let sixth = dt / T::lit(6.0);
        let [k1, k2, k3, k4] = &mut self.k;
        self.kernel.rate_into(w, k1);
        for i in 0..w.len() {
            self.tmp[i] = w[i] + half * k1[i];
        }
        self.kernel.rate_into(&self.tmp, k2);
        for i in 0..w.len() {
            self.tmp[i] = w[i] + half * k2[i];
        }
        self.kernel.rate_into(&self.tmp, k3);
        for i in 0..w.len() {
            self.tmp[i] = w[i] + dt * k3[i];
        }
        self.kernel.rate_into(&self.tmp, k4);
        for i in 0..w.len() {
            out[i] = w[i] + sixth * (k1[i] + T::lit(2.0) * (k2[i] + k3[i]) + k4[i]);
        }
    }

    /// Advance `w` by `dt`, halving recursively while the result goes
    /// negative. Returns (substeps, deepest level).
    fn advance(&mut self, w: &mut Vec<T>, dt: T, opts: StepOptions, depth: u32) -> Result<(usize, u32)> {
        let mut out = vec![T::zero(); w.len()];
        self.step(w, dt, &mut out);
        if opts.clamp {
            out.iter_mut().for_each(|x| *x = x.max(T::zero()));
        }
        if let Some(i) = out.iter().position(|x| !(*x >= T::zero())) {
            if depth >= opts.max_halvings {
                return Err(Error::Stiffness {
                    halvings: depth,
                    min_value: out[i].to_f64_lossy(),
                    index: i,
                });
            }
            let (a, da) = self.advance(w, dt * T::half(), opts, depth + 1)?;
            let (b, db) = self.advance(w, dt * T::half(), opts, depth + 1)?;
            return Ok((a + b, da.max(db)));
        }
        *w = out;
        Ok((1, depth))
    }
}

/// One RK4 step of `dW/dt = C(W)` without clamping.
pub fn step_homogeneous<T: Real>(kernel: &CollisionKernel<T>, w: &WignerState<T>, dt: T) -> Result<WignerState<T>> {
    Ok(step_homogeneous_with(kernel, w, dt, StepOptions::default())?.state)
}

pub fn step_homogeneous_with<T: Real>(
    kernel: &CollisionKernel<T>,
    w: &WignerState<T>,
    dt: T,
    opts: StepOptions,
) -> Result<StepOutcome<T>> {
    if !(dt > T::zero()) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    if w.grid().as_ref() != kernel.grid().as_ref() {
        return Err(Error::InvalidInput("Wigner function lives on a different grid".into()));
    }
    let mut vals = w.values().to_vec();
    let mut rk = Rk4::new(kernel, vals.len());
    let (substeps, halvings) = rk.advance(&mut vals, dt, opts, 0)?;
    Ok(StepOutcome {
        state: w.with_values(vals)?,
        substeps,
        halvings,
    })
}

/// Recorded solution of the homogeneous equation.
#[derive(Clone, Debug, PartialEq)]
pub struct KineticTrajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<WignerState<T>>,
    pub entropy: Vec<T>,
    pub energy: Vec<T>,
    pub number: Vec<T>,
    /// Entropy production at each recorded state (`NaN` where `W` has zeros).
    pub entropy_production: Vec<T>,
    /// Invariant violations found after the run.
    pub violations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions<T> {
    pub step: StepOptions,
    /// Record every `record_every`-th step (the final state is always kept).
    pub record_every: usize,
    /// Entropy may drop by at most this fraction of `|S|` per recorded step.
    pub entropy_slack: T,
    /// Relative drift allowed for energy and, on pair-only kernels, number.
    pub conservation_tol: T,
}

impl<T: Real> Default for SolveOptions<T> {
    fn default() -> Self {
        Self {
            step: StepOptions::default(),
            record_every: 1,
            entropy_slack: T::lit(1e-9),
            conservation_tol: T::lit(1e-6),
        }
    }
}

impl<T: Real> KineticTrajectory<T> {
    pub fn last(&self) -> &WignerState<T> {
        self.states.last().expect("trajectory has the initial state")
    }

    /// Largest `|x(t) - x(0)| / |x(0)|` over the run.
    pub fn relative_drift(series: &[T]) -> T {
        let x0 = series[0];
        let scale = if x0 != T::zero() { x0.abs() } else { T::one() };
        series.iter().fold(T::zero(), |m, &x| m.max((x - x0).abs() / scale))
    }

    /// Check the H-theorem and conservation along the recorded states.
    pub fn find_violations(&self, pair_only: bool, entropy_slack: T, conservation_tol: T) -> Vec<String> {
        let mut out = Vec::new();
        for n in 1..self.entropy.len() {
            let (a, b) = (self.entropy[n - 1], self.entropy[n]);
            if a.is_finite() && b < a - entropy_slack * a.abs() {
                out.push(format!(
                    "entropy decreased at t = {}: {} -> {}",
                    self.times[n], a, b
                ));
            }
        }
        let de = Self::relative_drift(&self.energy);
        if de > conservation_tol {
            out.push(format!("energy drift {de:e} exceeds {conservation_tol:e}"));
        }
        if pair_only {
            let dn = Self::relative_drift(&self.number);
            if dn > conservation_tol {
                out.push(format!("number drift {dn:e} exceeds {conservation_tol:e}"));
            }
        }
        out
    }
}

fn record<T: Real>(traj: &mut KineticTrajectory<T>, kernel: &CollisionKernel<T>, t: T, w: WignerState<T>) {
    let s = entropy(&w);
    traj.times.push(t);
    traj.entropy.push(s.value);
    traj.energy.push(w.energy(kernel.omega()));
    traj.number.push(w.number());
    traj.entropy_production.push(entropy_production(kernel, &w).unwrap_or(T::nan()));
    traj.states.push(w);
}

/// Integrate `dW/dt = C(W)` from 0 to `t_end` with steps `dt` (the last step
/// is shortened to land on `t_end`).
pub fn solve_homogeneous<T: Real>(
    kernel: &CollisionKernel<T>,
    w0: &WignerState<T>,
    t_end: T,
    dt: T,
) -> Result<KineticTrajectory<T>> {
    solve_homogeneous_with(kernel, w0, t_end, dt, &SolveOptions::default())
}

pub fn solve_homogeneous_with<T: Real>(
    kernel: &CollisionKernel<T>,
    w0: &WignerState<T>,
    t_end: T,
    dt: T,
    opts: &SolveOptions<T>,
) -> Result<KineticTrajectory<T>> {
    if !(t_end >= T::zero()) || !(dt > T::zero()) {
        return Err(Error::InvalidInput("need t_end >= 0 and dt > 0".into()));
    }
    if w0.grid().as_ref() != kernel.grid().as_ref() {
        return Err(Error::InvalidInput("Wigner function lives on a different grid".into()));
    }
    let record_every = opts.record_every.max(1);
    let mut traj = KineticTrajectory {
        times: Vec::new(),
        states: Vec::new(),
        entropy: Vec::new(),
        energy: Vec::new(),
        number: Vec::new(),
        entropy_production: Vec::new(),
        violations: Vec::new(),
    };
    record(&mut traj, kernel, T::zero(), w0.clone());
    let steps = (t_end / dt).ceil().to_usize().unwrap_or(0);
    let mut vals = w0.values().to_vec();
    let mut rk = Rk4::new(kernel, vals.len());
    let mut t = T::zero();
    for n in 1..=steps {
        let h = (t_end - t).min(dt);
        if !(h > T::zero()) {
            break;
        }
        rk.advance(&mut vals, h, opts.step, 0)?;
        t = if n == steps { t_end } else { t + h };
        if n % record_every == 0 || n == steps {
            record(&mut traj, kernel, t, w0.with_values(vals.clone())?);
        }
    }
    traj.violations = traj.find_violations(kernel.is_pair_only(), opts.entropy_slack, opts.conservation_tol);
    Ok(traj)
}

/// Periodic one-dimensional position grid `r_i = i R / Nr`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid<T> {
    pub extent: T,
    pub points: usize,
}

impl<T: Real> SpaceGrid<T> {
    pub fn new(extent: T, points: usize) -> Result<Self> {
        if !(extent > T::zero()) || points < 2 {
            return Err(Error::InvalidInput("space grid needs R > 0 and Nr >= 2".into()));
        }
        Ok(Self { extent, points })
    }

    pub fn spacing(&self) -> T {
        self.extent / T::from_usize_lossy(self.points)
    }

    pub fn coord(&self, i: usize) -> T {
        self.spacing() * T::from_usize_lossy(i)
    }
}

/// `W(r_i, k_j)` stored row-major in `r` (`values[i * nk + j]`).
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSpaceState<T> {
    space: SpaceGrid<T>,
    grid: Arc<MomentumGrid<T>>,
    values: Vec<T>,
    excluded: Vec<usize>,
}

impl<T: Real> PhaseSpaceState<T> {
    pub fn new(space: SpaceGrid<T>, grid: Arc<MomentumGrid<T>>, values: Vec<T>) -> Result<Self> {
        Self::with_exclusions(space, grid, values, Vec::new())
    }

    pub fn with_exclusions(space: SpaceGrid<T>, grid: Arc<MomentumGrid<T>>, values: Vec<T>, excluded: Vec<usize>) -> Result<Self> {
        if grid.dim() != 1 {
            return Err(Error::InvalidInput("phase space is one-dimensional in k".into()));
        }
        let expected = space.points * grid.len();
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::InvalidInput(format!("W must be finite and >= 0; entry {i} = {}", values[i])));
        }
        Ok(Self {
            space,
            grid,
            values,
            excluded,
        })
    }

    /// Same homogeneous state in every cell.
    pub fn uniform(space: SpaceGrid<T>, w: &WignerState<T>) -> Result<Self> {
        let mut values = Vec::with_capacity(space.points * w.values().len());
        for _ in 0..space.points {
            values.extend_from_slice(w.values());
        }
        Self::with_exclusions(space, w.grid().clone(), values, w.excluded().to_vec())
    }

    pub fn from_fn(space: SpaceGrid<T>, grid: Arc<MomentumGrid<T>>, f: impl Fn(T, T) -> T) -> Result<Self> {
        let mut values = Vec::with_capacity(space.points * grid.len());
        for i in 0..space.points {
            for j in 0..grid.len() {
                values.push(f(space.coord(i), grid.coord(j)));
            }
        }
        Self::new(space, grid, values)
    }

    pub fn space(&self) -> SpaceGrid<T> {
        self.space
    }

    pub fn grid(&self) -> &Arc<MomentumGrid<T>> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn excluded(&self) -> &[usize] {
        &self.excluded
    }

    pub fn get(&self, ir: usize, ik: usize) -> T {
        self.values[ir * self.grid.len() + ik]
    }

    /// The momentum profile in cell `ir`.
    pub fn cell(&self, ir: usize) -> Result<WignerState<T>> {
        let nk = self.grid.len();
        WignerState::with_exclusions(
            self.grid.clone(),
            self.values[ir * nk..(ir + 1) * nk].to_vec(),
            self.excluded.clone(),
        )
    }

    /// `sqrt(sum (W - V)^2 dr dk)`.
    pub fn l2_distance(&self, other: &Self) -> T {
        let w = self.space.spacing() * self.grid.weight();
        (self.values.iter().zip(&other.values).map(|(a, b)| (*a - *b) * (*a - *b)).sum::<T>() * w).sqrt()
    }

    pub fn l2_norm(&self) -> T {
        let w = self.space.spacing() * self.grid.weight();
        (self.values.iter().map(|a| *a * *a).sum::<T>() * w).sqrt()
    }

    fn with_raw(&self, values: Vec<T>) -> Self {
        Self {
            space: self.space,
            grid: self.grid.clone(),
            values,
            excluded: self.excluded.clone(),
        }
    }
}

/// How free streaming shifts `W` in `r`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportScheme {
    /// Semi-Lagrangian with periodic linear interpolation; exact for
    /// grid-commensurate shifts, positivity preserving.
    #[default]
    SemiLagrangianLinear,
    /// Exact shift of the trigonometric interpolant (FFT in `r`); no
    /// interpolation error, so splitting-order studies see only the time
    /// discretization.
    Spectral,
}

/// Transport coefficient `(2 pi)^-1 omega'(k)` per momentum point; excluded
/// singular points get velocity zero.
fn velocities<T: Real>(grid: &MomentumGrid<T>, spec: &DispersionSpec<T>, excluded: &[usize]) -> Result<Vec<T>> {
    (0..grid.len())
        .map(|j| match spec.group_velocity(&grid.point(j)) {
            Ok(v) => Ok(v[0]),
            Err(Error::SingularPoint(_)) if excluded.contains(&j) => Ok(T::zero()),
            Err(e) => Err(e),
        })
        .collect()
}

fn shift_linear<T: Real>(col: &[T], shift_cells: T, out: &mut [T]) {
    let n = col.len();
    let nf = T::from_usize_lossy(n);
    for (i, o) in out.iter_mut().enumerate() {
        let mut x = T::from_usize_lossy(i) - shift_cells;
        x = x - (x / nf).floor() * nf;
        let base = x.floor();
        let frac = x - base;
        let i0 = base.to_usize().unwrap_or(0) % n;
        let i1 = (i0 + 1) % n;
        *o = if frac == T::zero() {
            col[i0]
        } else {
            (T::one() - frac) * col[i0] + frac * col[i1]
        };
    }
}

fn shift_spectral<T: Real>(col: &[T], shift_cells: T, out: &mut [T], planner: &mut FftPlanner<T>) {
    let n = col.len();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<T>> = col.iter().map(|&x| Complex::new(x, T::zero())).collect();
    fwd.process(&mut buf);
    let nf = T::from_usize_lossy(n);
    for (m, c) in buf.iter_mut().enumerate() {
        let freq = if m <= n / 2 {
            T::from_usize_lossy(m)
        } else {
            T::from_usize_lossy(m) - nf
        };
        let angle = -T::two_pi() * freq * shift_cells / nf;
        if n % 2 == 0 && m == n / 2 {
            *c = *c * angle.cos();
        } else {
            *c = *c * Complex::from_polar(T::one(), angle);
        }
    }
    inv.process(&mut buf);
    for (o, c) in out.iter_mut().zip(&buf) {
        *o = c.re / nf;
    }
}

/// Free streaming `W(r, k) <- W(r - v(k) dt, k)` with linear interpolation.
pub fn free_transport_step<T: Real>(state: &PhaseSpaceState<T>, spec: &DispersionSpec<T>, dt: T) -> Result<PhaseSpaceState<T>> {
    free_transport_step_with(state, spec, dt, TransportScheme::SemiLagrangianLinear)
}

pub fn free_transport_step_with<T: Real>(
    state: &PhaseSpaceState<T>,
    spec: &DispersionSpec<T>,
    dt: T,
    scheme: TransportScheme,
) -> Result<PhaseSpaceState<T>> {
    let v = velocities(&state.grid, spec, &state.excluded)?;
    Ok(transport(state, &v, dt, scheme))
}

fn transport<T: Real>(state: &PhaseSpaceState<T>, v: &[T], dt: T, scheme: TransportScheme) -> PhaseSpaceState<T> {
    if dt == T::zero() {
        return state.clone();
    }
    let nr = state.space.points;
    let nk = state.grid.len();
    let dr = state.space.spacing();
    let mut out = vec![T::zero(); state.values.len()];
    let mut col = vec![T::zero(); nr];
    let mut shifted = vec![T::zero(); nr];
    let mut planner = FftPlanner::new();
    for j in 0..nk {
        for i in 0..nr {
            col[i] = state.values[i * nk + j];
        }
        let cells = v[j] * dt / dr;
        if cells == T::zero() {
            shifted.copy_from_slice(&col);
        } else {
            match scheme {
                TransportScheme::SemiLagrangianLinear => shift_linear(&col, cells, &mut shifted),
                TransportScheme::Spectral => shift_spectral(&col, cells, &mut shifted, &mut planner),
            }
        }
        for i in 0..nr {
            out[i * nk + j] = shifted[i];
        }
    }
    state.with_raw(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InhomogeneousOptions {
    pub scheme: TransportScheme,
    pub step: StepOptions,
    /// Record every `record_every`-th step (the final state is always kept).
    pub record_every: usize,
}

impl Default for InhomogeneousOptions {
    fn default() -> Self {
        Self {
            scheme: TransportScheme::default(),
            step: StepOptions::default(),
            record_every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSpaceTrajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<PhaseSpaceState<T>>,
}

impl<T: Real> PhaseSpaceTrajectory<T> {
    pub fn last(&self) -> &PhaseSpaceState<T> {
        self.states.last().expect("trajectory has the initial state")
    }
}

fn collide_cells<T: Real>(kernel: &CollisionKernel<T>, state: &mut PhaseSpaceState<T>, dt: T, opts: StepOptions) -> Result<()> {
    let nk = state.grid.len();
    state
        .values
        .par_chunks_mut(nk)
        .map(|cell| {
            let mut v = cell.to_vec();
            let mut rk = Rk4::new(kernel, nk);
            rk.advance(&mut v, dt, opts, 0)?;
            cell.copy_from_slice(&v);
            Ok(())
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(())
}

/// Strang splitting: half transport, local collisions in every cell, half
/// transport.
pub fn solve_inhomogeneous<T: Real>(
    kernel: &CollisionKernel<T>,
    state0: &PhaseSpaceState<T>,
    t_end: T,
    dt: T,
) -> Result<PhaseSpaceTrajectory<T>> {
    solve_inhomogeneous_with(kernel, state0, t_end, dt, &InhomogeneousOptions::default())
}

pub fn solve_inhomogeneous_with<T: Real>(
    kernel: &CollisionKernel<T>,
    state0: &PhaseSpaceState<T>,
    t_end: T,
    dt: T,
    opts: &InhomogeneousOptions,
) -> Result<PhaseSpaceTrajectory<T>> {
    if !(t_end >= T::zero()) || !(dt > T::zero()) {
        return Err(Error::InvalidInput("need t_end >= 0 and dt > 0".into()));
    }
    if state0.grid.as_ref() != kernel.grid().as_ref() {
        return Err(Error::InvalidInput("momentum grid does not match the kernel".into()));
    }
    let v = velocities(&state0.grid, kernel.dispersion(), &state0.excluded)?;
    let mut traj = PhaseSpaceTrajectory {
        times: vec![T::zero()],
        states: vec![state0.clone()],
    };
    let steps = (t_end / dt).ceil().to_usize().unwrap_or(0);
    let mut state = state0.clone();
    let mut t = T::zero();
    let every = opts.record_every.max(1);
    for n in 1..=steps {
        let h = (t_end - t).min(dt);
        if !(h > T::zero()) {
            break;
        }
        state = transport(&state, &v, h * T::half(), opts.scheme);
        if !kernel.is_empty() {
            collide_cells(kernel, &mut state, h, opts.step)?;
        }
        state = transport(&state, &v, h * T::half(), opts.scheme);
        t = if n == steps { t_end } else { t + h };
        if n % every == 0 || n == steps {
            traj.times.push(t);
            traj.states.push(state.clone());
        }
    }
    Ok(traj)
}

/// `e^{Lt} W0 + int_0^t e^{L(t-s)} C(e^{Ls} W0) ds` with the composite
/// midpoint rule on `quad_points` nodes, `L` the free streaming generator.
/// Meaningful only for `t` short compared with the collision time.
pub fn duhamel_second_order<T: Real>(
    kernel: &CollisionKernel<T>,
    state0: &PhaseSpaceState<T>,
    t: T,
    quad_points: usize,
) -> Result<PhaseSpaceState<T>> {
    duhamel_second_order_with(kernel, state0, t, quad_points, TransportScheme::default())
}

pub fn duhamel_second_order_with<T: Real>(
    kernel: &CollisionKernel<T>,
    state0: &PhaseSpaceState<T>,
    t: T,
    quad_points: usize,
    scheme: TransportScheme,
) -> Result<PhaseSpaceState<T>> {
    if quad_points == 0 || !(t >= T::zero()) {
        return Err(Error::InvalidInput("need quad_points >= 1 and t >= 0".into()));
    }
    if state0.grid.as_ref() != kernel.grid().as_ref() {
        return Err(Error::InvalidInput("momentum grid does not match the kernel".into()));
    }
    let v = velocities(&state0.grid, kernel.dispersion(), &state0.excluded)?;
    let mut acc = transport(state0, &v, t, scheme).values;
    if t == T::zero() || kernel.is_empty() {
        return Ok(state0.with_raw(acc));
    }
    let nk = state0.grid.len();
    let ds = t / T::from_usize_lossy(quad_points);
    for q in 0..quad_points {
        let s = ds * (T::from_usize_lossy(q) + T::half());
        let mut moved = transport(state0, &v, s, scheme);
        let rates: Vec<T> = moved.values.par_chunks(nk).flat_map_iter(|cell| kernel.rate(cell)).collect();
        moved.values = rates;
        let back = transport(&moved, &v, t - s, scheme);
        for (a, b) in acc.iter_mut().zip(&back.values) {
            *a += ds * *b;
        }
    }
    Ok(state0.with_raw(acc))
}
