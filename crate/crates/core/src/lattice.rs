//! Microscopic anharmonic chain: dynamics, normal modes, Gibbs ensembles and
//! power spectra.
//!
//! Discrete transforms follow `q_hat(k) = sum_x q_x e^{-i 2 pi k x}` and
//! `q_x = L^-1 sum_k q_hat(k) e^{i 2 pi k x}` with `k_j = j / L`. With these
//! conventions `sum_k omega |a(k)|^2 / L` is the harmonic energy and the
//! spectrum estimator `|a(k)|^2 / L` converges to `1/(beta omega)` in the
//! harmonic Gibbs state. Mode `j` maps to index `(j + L/2) mod L` of the
//! torus momentum grid.

use std::sync::Arc;

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dispersion::DispersionSpec;
use crate::error::{Error, Result};
use crate::grid::{MomentumGrid, WignerState};
use crate::scalar::Real;

/// Anharmonic part of the chain hamiltonian.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Potential {
    /// `sqrt(lambda) / 4 sum q_x^4`.
    OnsiteQuartic,
    /// `sqrt(lambda) / 3 sum (q_{x+1} - q_x)^3`.
    FpuAlphaCubicBond,
    /// `sqrt(lambda) / 4 sum (q_{x+1} - q_x)^4`.
    FpuBetaQuarticBond,
}

/// Periodic chain configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState<T> {
    pub q: Vec<T>,
    pub p: Vec<T>,
    pub lambda: T,
    pub potential: Potential,
    dispersion: DispersionSpec<T>,
    couplings: Vec<(i64, T)>,
}

impl<T: Real> ChainState<T> {
    pub fn new(q: Vec<T>, p: Vec<T>, lambda: T, potential: Potential, dispersion: DispersionSpec<T>) -> Result<Self> {
        if q.len() < 2 || q.len() != p.len() {
            return Err(Error::InvalidInput(format!(
                "chain needs L >= 2 and equal q/p lengths, got {} and {}",
                q.len(),
                p.len()
            )));
        }
        if q.iter().chain(&p).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite displacement or momentum".into()));
        }
        if !(lambda >= T::zero()) || !lambda.is_finite() {
            return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
        }
        let couplings = dispersion.lattice_couplings_1d()?;
        Ok(Self {
            q,
            p,
            lambda,
            potential,
            dispersion,
            couplings,
        })
    }

    pub fn at_rest(l: usize, lambda: T, potential: Potential, dispersion: DispersionSpec<T>) -> Result<Self> {
        Self::new(vec![T::zero(); l], vec![T::zero(); l], lambda, potential, dispersion)
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn dispersion(&self) -> &DispersionSpec<T> {
        &self.dispersion
    }

    /// Same configuration with another anharmonicity.
    pub fn with_anharmonicity(mut self, lambda: T, potential: Potential) -> Result<Self> {
        if !(lambda >= T::zero()) {
            return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
        }
        self.lambda = lambda;
        self.potential = potential;
        Ok(self)
    }

    fn site(&self, x: i64) -> usize {
        x.rem_euclid(self.len() as i64) as usize
    }

    /// `-dH/dq` into `out`.
    pub fn forces_into(&self, out: &mut [T]) {
        let l = self.len();
        for x in 0..l {
            let mut f = T::zero();
            for &(off, a) in &self.couplings {
                f -= a * self.q[self.site(x as i64 + off)];
            }
            out[x] = f;
        }
        if self.lambda == T::zero() {
            return;
        }
        let g = self.lambda.sqrt();
        match self.potential {
            Potential::OnsiteQuartic => {
                for x in 0..l {
                    out[x] -= g * self.q[x].powi(3);
                }
            }
            Potential::FpuAlphaCubicBond | Potential::FpuBetaQuarticBond => {
                let power = if self.potential == Potential::FpuAlphaCubicBond { 2 } else { 3 };
                for x in 0..l {
                    let right = self.q[(x + 1) % l] - self.q[x];
                    let left = self.q[x] - self.q[(x + l - 1) % l];
                    out[x] += g * (right.powi(power) - left.powi(power));
                }
            }
        }
    }

    pub fn forces(&self) -> Vec<T> {
        let mut f = vec![T::zero(); self.len()];
        self.forces_into(&mut f);
        f
    }

    /// `n` velocity-Verlet steps in place.
    pub fn verlet(&mut self, dt: T, n: usize) {
        let l = self.len();
        let mut f = vec![T::zero(); l];
        self.forces_into(&mut f);
        let half = dt * T::half();
        for _ in 0..n {
            for x in 0..l {
                self.p[x] += half * f[x];
                self.q[x] += dt * self.p[x];
            }
            self.forces_into(&mut f);
            for x in 0..l {
                self.p[x] += half * f[x];
            }
        }
    }
}

/// Harmonic, anharmonic and total energy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Energy<T> {
    pub harmonic: T,
    pub anharmonic: T,
    pub total: T,
}

pub fn hamiltonian<T: Real>(state: &ChainState<T>) -> Energy<T> {
    let l = state.len();
    let mut kinetic = T::zero();
    let mut quad = T::zero();
    for x in 0..l {
        kinetic += state.p[x] * state.p[x];
        for &(off, a) in &state.couplings {
            quad += a * state.q[x] * state.q[state.site(x as i64 + off)];
        }
    }
    let harmonic = (kinetic + quad) * T::half();
    let g = state.lambda.sqrt();
    let anharmonic = if state.lambda == T::zero() {
        T::zero()
    } else {
        match state.potential {
            Potential::OnsiteQuartic => g / T::lit(4.0) * state.q.iter().map(|q| q.powi(4)).sum::<T>(),
            Potential::FpuAlphaCubicBond => {
                g / T::lit(3.0) * (0..l).map(|x| (state.q[(x + 1) % l] - state.q[x]).powi(3)).sum::<T>()
            }
            Potential::FpuBetaQuarticBond => {
                g / T::lit(4.0) * (0..l).map(|x| (state.q[(x + 1) % l] - state.q[x]).powi(4)).sum::<T>()
            }
        }
    };
    Energy {
        harmonic,
        anharmonic,
        total: harmonic + anharmonic,
    }
}

/// One velocity-Verlet step.
pub fn step_symplectic<T: Real>(state: &ChainState<T>, dt: T) -> Result<ChainState<T>> {
    if !(dt > T::zero()) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    let mut s = state.clone();
    s.verlet(dt, 1);
    Ok(s)
}

/// Normal-mode amplitudes `a(k_j)`, `j = 0..L`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField<T> {
    pub a: Vec<Complex<T>>,
    dispersion: DispersionSpec<T>,
}

impl<T: Real> ComplexField<T> {
    pub fn new(a: Vec<Complex<T>>, dispersion: DispersionSpec<T>) -> Result<Self> {
        if a.len() < 2 {
            return Err(Error::InvalidInput("field needs L >= 2 modes".into()));
        }
        if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("non-finite mode amplitude".into()));
        }
        dispersion.lattice_couplings_1d()?;
        Ok(Self { a, dispersion })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn dispersion(&self) -> &DispersionSpec<T> {
        &self.dispersion
    }

    /// Reduced momentum of mode `j`.
    pub fn momentum(&self, j: usize) -> T {
        mode_momentum(j, self.len())
    }
}

/// `j / L` reduced to `[-1/2, 1/2)`.
pub fn mode_momentum<T: Real>(j: usize, l: usize) -> T {
    (T::from_usize_lossy(j) / T::from_usize_lossy(l)).wrap_torus()
}

/// Momentum-grid index of mode `j` on a chain of length `l` (even).
pub fn mode_to_grid_index(j: usize, l: usize) -> usize {
    (j + l / 2) % l
}

fn mode_frequencies<T: Real>(spec: &DispersionSpec<T>, l: usize) -> Result<Vec<T>> {
    let omega: Vec<T> = (0..l).map(|j| spec.omega_1d(mode_momentum(j, l))).collect();
    if let Some(j) = omega.iter().position(|&w| !(w > T::zero())) {
        return Err(Error::ZeroFrequency(vec![mode_momentum::<T>(j, l).to_f64_lossy()]));
    }
    Ok(omega)
}

fn dft<T: Real>(x: &[T], inverse: bool) -> Vec<Complex<T>> {
    let mut buf: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
    dft_complex(&mut buf, inverse);
    buf
}

fn dft_complex<T: Real>(buf: &mut [Complex<T>], inverse: bool) {
    let mut planner = FftPlanner::new();
    let plan = if inverse {
        planner.plan_fft_inverse(buf.len())
    } else {
        planner.plan_fft_forward(buf.len())
    };
    plan.process(buf);
}

/// `a = (sqrt(omega) q_hat + i p_hat / sqrt(omega)) / sqrt 2`.
pub fn to_normal_modes<T: Real>(state: &ChainState<T>) -> Result<ComplexField<T>> {
    let l = state.len();
    let omega = mode_frequencies(&state.dispersion, l)?;
    let qh = dft(&state.q, false);
    let ph = dft(&state.p, false);
    let r2 = T::lit(2.0).sqrt();
    let i = Complex::new(T::zero(), T::one());
    let a = (0..l)
        .map(|j| {
            let s = omega[j].sqrt();
            (qh[j] * s + i * ph[j] / s) / r2
        })
        .collect();
    Ok(ComplexField {
        a,
        dispersion: state.dispersion.clone(),
    })
}

/// Imaginary residue above which reconstruction fails.
const REALITY_TOL: f64 = 1e-10;

/// Inverse of [`to_normal_modes`]; the chain gets `lambda = 0` and the
/// on-site potential (see [`ChainState::with_anharmonicity`]).
pub fn from_normal_modes<T: Real>(field: &ComplexField<T>) -> Result<ChainState<T>> {
    let l = field.len();
    let omega = mode_frequencies(&field.dispersion, l)?;
    let i = Complex::new(T::zero(), T::one());
    let mut qh = Vec::with_capacity(l);
    let mut ph = Vec::with_capacity(l);
    for j in 0..l {
        let a = field.a[j];
        let am = field.a[(l - j) % l].conj();
        qh.push((a + am) / (T::lit(2.0) * omega[j]).sqrt());
        ph.push(i * (omega[j] * T::half()).sqrt() * (am - a));
    }
    dft_complex(&mut qh, true);
    dft_complex(&mut ph, true);
    let lf = T::from_usize_lossy(l);
    let scale = qh
        .iter()
        .chain(&ph)
        .fold(T::one(), |m, z| m.max(z.re.abs() / lf));
    let residue = qh.iter().chain(&ph).fold(T::zero(), |m, z| m.max(z.im.abs() / lf));
    if residue > T::lit(REALITY_TOL) * scale {
        return Err(Error::RealityViolation(residue.to_f64_lossy()));
    }
    ChainState::new(
        qh.iter().map(|z| z.re / lf).collect(),
        ph.iter().map(|z| z.re / lf).collect(),
        T::zero(),
        Potential::OnsiteQuartic,
        field.dispersion.clone(),
    )
}

/// `a(k, t) = e^{-i omega(k) t} a(k)`.
pub fn free_evolve<T: Real>(field: &ComplexField<T>, t: T) -> ComplexField<T> {
    let l = field.len();
    let a = field
        .a
        .iter()
        .enumerate()
        .map(|(j, &z)| z * Complex::from_polar(T::one(), -field.dispersion.omega_1d(mode_momentum(j, l)) * t))
        .collect();
    ComplexField {
        a,
        dispersion: field.dispersion.clone(),
    }
}

/// Gaussian ensemble parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec<T> {
    pub beta: T,
    pub realizations: usize,
    pub seed: u64,
    pub l: usize,
}

impl<T: Real> EnsembleSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > T::zero()) || !self.beta.is_finite() {
            return Err(Error::InvalidInput(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.realizations == 0 {
            return Err(Error::InvalidInput("need at least one realization".into()));
        }
        if self.l < 4 || self.l % 2 != 0 {
            return Err(Error::InvalidInput(format!("L must be even and >= 4, got {}", self.l)));
        }
        Ok(())
    }
}

/// Complex Gaussian amplitudes with `<|a(k_j)|^2> = L variance[j]`, drawn
/// from the stream `(seed, realization)`.
pub fn sample_gaussian_field<T: Real>(
    dispersion: &DispersionSpec<T>,
    variance: &[T],
    seed: u64,
    realization: u64,
) -> Result<ComplexField<T>> {
    let l = variance.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(realization);
    let lf = T::from_usize_lossy(l);
    let a = variance
        .iter()
        .map(|&v| {
            let x: f64 = StandardNormal.sample(&mut rng);
            let y: f64 = StandardNormal.sample(&mut rng);
            let s = (lf * v * T::half()).sqrt();
            Complex::new(T::lit(x) * s, T::lit(y) * s)
        })
        .collect();
    ComplexField::new(a, dispersion.clone())
}

/// One realization of the harmonic Gibbs state `exp(-beta H_har)`:
/// `<|a(k)|^2> = L / (beta omega(k))`.
pub fn sample_harmonic_gibbs<T: Real>(
    spec: &EnsembleSpec<T>,
    dispersion: &DispersionSpec<T>,
    realization: u64,
) -> Result<ComplexField<T>> {
    spec.validate()?;
    let omega = mode_frequencies(dispersion, spec.l)?;
    let var: Vec<T> = omega.iter().map(|&w| T::one() / (spec.beta * w)).collect();
    sample_gaussian_field(dispersion, &var, spec.seed, realization)
}

/// All `spec.realizations` Gibbs draws, in realization order.
pub fn sample_gibbs_ensemble<T: Real>(spec: &EnsembleSpec<T>, dispersion: &DispersionSpec<T>) -> Result<Vec<ComplexField<T>>> {
    (0..spec.realizations as u64)
        .into_par_iter()
        .map(|m| sample_harmonic_gibbs(spec, dispersion, m))
        .collect()
}

/// Ensemble-averaged spectrum with per-mode standard errors, on the torus
/// momentum grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumEstimate<T> {
    pub state: WignerState<T>,
    pub stderr: Vec<T>,
    pub time: T,
}

/// `W(k_j) = M^-1 sum_m |a_m(k_j)|^2 / L`.
pub fn estimate_power_spectrum<T: Real>(fields: &[ComplexField<T>]) -> Result<SpectrumEstimate<T>> {
    let first = fields
        .first()
        .ok_or_else(|| Error::InvalidInput("need at least one field".into()))?;
    let l = first.len();
    if let Some(f) = fields.iter().find(|f| f.len() != l) {
        return Err(Error::LengthMismatch {
            expected: l,
            found: f.len(),
        });
    }
    if fields.iter().any(|f| f.dispersion != first.dispersion) {
        return Err(Error::InvalidInput("fields use different dispersions".into()));
    }
    let samples: Vec<Vec<T>> = fields.iter().map(|f| f.a.iter().map(|z| z.norm_sqr()).collect()).collect();
    spectrum_from_occupations(&samples, T::zero())
}

/// Mean and standard error of `|a|^2 / L` from per-realization `|a|^2`.
fn spectrum_from_occupations<T: Real>(samples: &[Vec<T>], time: T) -> Result<SpectrumEstimate<T>> {
    let l = samples[0].len();
    if l < 4 || l % 2 != 0 {
        return Err(Error::InvalidInput(format!("spectrum needs even L >= 4, got {l}")));
    }
    let m = T::from_usize_lossy(samples.len());
    let lf = T::from_usize_lossy(l);
    let mut mean = vec![T::zero(); l];
    let mut sq = vec![T::zero(); l];
    for s in samples {
        for j in 0..l {
            let x = s[j] / lf;
            mean[j] += x;
            sq[j] += x * x;
        }
    }
    let mut values = vec![T::zero(); l];
    let mut stderr = vec![T::zero(); l];
    for j in 0..l {
        let mu = mean[j] / m;
        let var = if samples.len() > 1 {
            ((sq[j] - m * mu * mu) / (m - T::one())).max(T::zero())
        } else {
            T::zero()
        };
        let g = mode_to_grid_index(j, l);
        values[g] = mu;
        stderr[g] = (var / m).sqrt();
    }
    let grid = Arc::new(MomentumGrid::torus(1, l)?);
    Ok(SpectrumEstimate {
        state: WignerState::new(grid, values)?,
        stderr,
        time,
    })
}

/// Covariance of `|a(k1)|^2` and `|a(k2)|^2` over the ensemble divided by the
/// product of their means (mode indices `j1 != j2`).
pub fn spectrum_covariance<T: Real>(fields: &[ComplexField<T>], j1: usize, j2: usize) -> Result<T> {
    if fields.len() < 2 {
        return Err(Error::InvalidInput("covariance needs at least two realizations".into()));
    }
    if j1 == j2 {
        return Err(Error::InvalidInput("covariance needs two distinct modes".into()));
    }
    let l = fields[0].len();
    if j1 >= l || j2 >= l || fields.iter().any(|f| f.len() != l) {
        return Err(Error::InvalidInput("mode index out of range or ragged ensemble".into()));
    }
    let m = T::from_usize_lossy(fields.len());
    let x: Vec<T> = fields.iter().map(|f| f.a[j1].norm_sqr()).collect();
    let y: Vec<T> = fields.iter().map(|f| f.a[j2].norm_sqr()).collect();
    let mx = x.iter().copied().sum::<T>() / m;
    let my = y.iter().copied().sum::<T>() / m;
    if mx == T::zero() || my == T::zero() {
        return Ok(T::zero());
    }
    let cov = x.iter().zip(&y).map(|(&a, &b)| (a - mx) * (b - my)).sum::<T>() / (m - T::one());
    Ok(cov / (mx * my))
}

/// `<a(k1) a(k2)>` normalized by `sqrt(<|a(k1)|^2><|a(k2)|^2>)`, with its
/// standard error. Zero in any gauge-invariant Gaussian state.
pub fn anomalous_correlation<T: Real>(fields: &[ComplexField<T>], j1: usize, j2: usize) -> Result<(Complex<T>, T)> {
    if fields.len() < 2 {
        return Err(Error::InvalidInput("correlation needs at least two realizations".into()));
    }
    let m = T::from_usize_lossy(fields.len());
    let n1 = fields.iter().map(|f| f.a[j1].norm_sqr()).sum::<T>() / m;
    let n2 = fields.iter().map(|f| f.a[j2].norm_sqr()).sum::<T>() / m;
    let norm = (n1 * n2).sqrt();
    if norm == T::zero() {
        return Ok((Complex::new(T::zero(), T::zero()), T::zero()));
    }
    let prods: Vec<Complex<T>> = fields.iter().map(|f| f.a[j1] * f.a[j2] / norm).collect();
    let mean = prods.iter().fold(Complex::new(T::zero(), T::zero()), |s, &z| s + z) / m;
    let var = prods.iter().map(|z| (z - mean).norm_sqr()).sum::<T>() / (m - T::one());
    Ok((mean, (var / m).sqrt()))
}

/// Initial Gaussian state of a microscopic run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialSpectrum<T> {
    /// Harmonic Gibbs state at the ensemble's `beta`.
    Gibbs,
    /// Target `W` on the torus momentum grid (grid index order).
    Custom(Vec<T>),
}

/// Ensemble-averaged spectra at the requested times.
#[derive(Clone, Debug, PartialEq)]
pub struct MicroscopicRun<T> {
    pub snapshots: Vec<SpectrumEstimate<T>>,
    /// Largest relative energy drift over all realizations.
    pub max_energy_drift: T,
    pub mean_energy: T,
}

/// Relative energy drift that aborts a microscopic run.
pub const MAX_ENERGY_DRIFT: f64 = 0.01;

/// Sample, integrate with velocity Verlet and record spectra at `times`
/// (rounded to multiples of `dt`, nondecreasing).
pub fn run_microscopic_experiment<T: Real>(
    spec: &EnsembleSpec<T>,
    dispersion: &DispersionSpec<T>,
    lambda: T,
    potential: Potential,
    initial: &InitialSpectrum<T>,
    times: &[T],
    dt: T,
) -> Result<MicroscopicRun<T>> {
    spec.validate()?;
    if !(dt > T::zero()) {
        return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| !(*t >= T::zero())) {
        return Err(Error::InvalidInput("snapshot times must be nonnegative and nondecreasing".into()));
    }
    let l = spec.l;
    let omega = mode_frequencies(dispersion, l)?;
    let variance: Vec<T> = match initial {
        InitialSpectrum::Gibbs => omega.iter().map(|&w| T::one() / (spec.beta * w)).collect(),
        InitialSpectrum::Custom(w) => {
            if w.len() != l {
                return Err(Error::LengthMismatch {
                    expected: l,
                    found: w.len(),
                });
            }
            if w.iter().any(|x| !(*x >= T::zero())) {
                return Err(Error::InvalidInput("initial spectrum must be >= 0".into()));
            }
            (0..l).map(|j| w[mode_to_grid_index(j, l)]).collect()
        }
    };
    let steps: Vec<usize> = times
        .iter()
        .map(|&t| (t / dt).round().to_usize().unwrap_or(0))
        .collect();

    let per_realization: Vec<Result<(Vec<Vec<T>>, T, T)>> = (0..spec.realizations as u64)
        .into_par_iter()
        .map(|m| {
            let field = sample_gaussian_field(dispersion, &variance, spec.seed, m)?;
            let mut chain = from_normal_modes(&field)?.with_anharmonicity(lambda, potential)?;
            let e0 = hamiltonian(&chain).total;
            let mut done = 0;
            let mut occ = Vec::with_capacity(steps.len());
            let mut drift = T::zero();
            for &s in &steps {
                chain.verlet(dt, s - done);
                done = s;
                let e = hamiltonian(&chain).total;
                let scale = if e0 != T::zero() { e0.abs() } else { T::one() };
                let rel = (e - e0).abs() / scale;
                // a blown-up run has NaN energy, which `max` would ignore
                drift = if rel.is_finite() { drift.max(rel) } else { T::infinity() };
                if drift > T::lit(MAX_ENERGY_DRIFT) {
                    break;
                }
                let a = to_normal_modes(&chain)?;
                occ.push(a.a.iter().map(|z| z.norm_sqr()).collect());
            }
            Ok((occ, drift, e0))
        })
        .collect();

    let mut by_realization = Vec::with_capacity(per_realization.len());
    let mut max_drift = T::zero();
    let mut mean_energy = T::zero();
    for r in per_realization {
        let (occ, drift, e0) = r?;
        max_drift = max_drift.max(drift);
        mean_energy += e0;
        by_realization.push(occ);
    }
    mean_energy /= T::from_usize_lossy(spec.realizations);
    if max_drift > T::lit(MAX_ENERGY_DRIFT) {
        return Err(Error::EnergyDrift {
            drift: max_drift.to_f64_lossy(),
            limit: MAX_ENERGY_DRIFT,
        });
    }
    let mut snapshots = Vec::with_capacity(times.len());
    for (s, &t) in times.iter().enumerate() {
        let samples: Vec<Vec<T>> = by_realization.iter().map(|r| r[s].clone()).collect();
        snapshots.push(spectrum_from_occupations(&samples, t)?);
    }
    Ok(MicroscopicRun {
        snapshots,
        max_energy_drift: max_drift,
        mean_energy,
    })
}
