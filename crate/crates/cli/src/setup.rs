//! Building core objects from configuration keys.

use std::f64::consts::PI;
use std::io;
use std::path::PathBuf;
use std::sync::Arc;

use phonon_kinetics::collision::{build_kernel_1d_cached, build_kernel_1d_with, Interaction, KernelOptions};
use phonon_kinetics::dispersion::{build_custom_dispersion, Coupling, DispersionSpec, RootScanOptions};
use phonon_kinetics::grid::{MomentumGrid, WignerState};
use phonon_kinetics::lattice::Potential;
use phonon_kinetics::{Dispersion, Error as CoreError, Grid, Kernel, Wigner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Config, ConfigError};

/// Why an experiment stopped.
#[derive(Debug)]
pub enum Failure {
    Config(ConfigError),
    Numerical(CoreError),
    Io(io::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Failure::Numerical(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

pub type Outcome<T> = Result<T, Failure>;

/// Attribute input-validation errors from the core to a config key; genuine
/// numerical failures pass through.
pub trait AtKey<T> {
    fn at(self, key: &str) -> Outcome<T>;
}

impl<T> AtKey<T> for Result<T, CoreError> {
    fn at(self, key: &str) -> Outcome<T> {
        self.map_err(|e| match e {
            CoreError::InvalidInput(_)
            | CoreError::DomainMismatch(_)
            | CoreError::AsymmetricCoupling(_)
            | CoreError::NegativeFourierTransform { .. }
            | CoreError::ZeroFrequency(_)
            | CoreError::LengthMismatch { .. }
            | CoreError::CollinearBasis
            | CoreError::NonPositiveInvariant { .. } => Failure::Config(ConfigError::invalid(key, e.to_string())),
            other => Failure::Numerical(other),
        })
    }
}

/// `offset:value` pairs separated by commas; multi-dimensional offsets list
/// their components separated by spaces, e.g. `0 0:4, 1 0:-1, -1 0:-1`.
fn parse_alpha(raw: &str, dim: usize) -> Result<Vec<Coupling<f64>>, ConfigError> {
    let key = "dispersion.alpha";
    raw.split(',')
        .map(|item| {
            let (off, val) = item
                .split_once(':')
                .ok_or_else(|| ConfigError::invalid(key, format!("expected `offset:value`, found `{}`", item.trim())))?;
            let offset = off
                .split_whitespace()
                .map(|s| s.parse::<i64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ConfigError::invalid(key, format!("bad offset `{}`: {e}", off.trim())))?;
            if offset.len() != dim {
                return Err(ConfigError::invalid(
                    key,
                    format!("offset `{}` has {} components, dimension is {dim}", off.trim(), offset.len()),
                ));
            }
            let value = val
                .trim()
                .parse::<f64>()
                .map_err(|e| ConfigError::invalid(key, format!("bad value `{}`: {e}", val.trim())))?;
            Ok(Coupling { offset, value })
        })
        .collect()
}

pub fn dispersion(cfg: &Config) -> Outcome<Dispersion> {
    let kind = cfg.choice("dispersion.kind", &["optical", "fpu", "nls", "custom"], "optical")?;
    let dim = cfg.count_or("dispersion.dim", 1, 1)?;
    match kind {
        "optical" => {
            let omega0 = cfg.positive_or("dispersion.omega0", 1.0)?;
            DispersionSpec::optical(omega0, dim).at("dispersion.dim")
        }
        "fpu" => {
            if dim != 1 {
                return Err(ConfigError::invalid("dispersion.dim", "the fpu chain is one-dimensional").into());
            }
            Ok(DispersionSpec::fpu_chain())
        }
        "nls" => {
            let cutoff = cfg.positive_or("dispersion.cutoff", 2.0)?;
            DispersionSpec::nls(dim, cutoff).at("dispersion.dim")
        }
        _ => {
            let raw = cfg
                .raw("dispersion.alpha")
                .ok_or_else(|| ConfigError::invalid("dispersion.alpha", "custom dispersion needs couplings"))?;
            let alpha = parse_alpha(raw, dim)?;
            build_custom_dispersion(alpha, dim).at("dispersion.alpha")
        }
    }
}

pub fn one_dimensional(spec: &Dispersion) -> Outcome<()> {
    if spec.dim() != 1 || !spec.is_torus() {
        return Err(ConfigError::invalid("dispersion.kind", "this experiment needs a one-dimensional lattice dispersion").into());
    }
    Ok(())
}

pub fn potential(cfg: &Config) -> Outcome<Potential> {
    let p = cfg.choice(
        "lattice.potential",
        &["onsite_quartic", "fpu_alpha_cubic_bond", "fpu_beta_quartic_bond"],
        "onsite_quartic",
    )?;
    Ok(match p {
        "onsite_quartic" => Potential::OnsiteQuartic,
        "fpu_alpha_cubic_bond" => Potential::FpuAlphaCubicBond,
        _ => Potential::FpuBetaQuarticBond,
    })
}

/// Kernel options plus the optional cache directory.
pub struct KernelSetup {
    pub options: KernelOptions<f64>,
    pub cache_dir: Option<PathBuf>,
}

/// Kernel settings from the `collision.*` keys. `interaction` overrides the
/// `collision.interaction` key when given.
pub fn kernel_setup(cfg: &Config, interaction: Option<Interaction>) -> Outcome<KernelSetup> {
    let interaction = match interaction {
        Some(i) => i,
        None => match cfg.choice("collision.interaction", &["onsite_quartic", "cubic_bond"], "onsite_quartic")? {
            "onsite_quartic" => Interaction::OnsiteQuartic,
            _ => Interaction::CubicBond,
        },
    };
    let scan = RootScanOptions {
        points: cfg.count_or("collision.scan_points", RootScanOptions::<f64>::default().points, 16)?,
        ..RootScanOptions::default()
    };
    let options = KernelOptions {
        tol: cfg.positive_or("collision.tol", 1e-12)?,
        scan,
        rate_scale: cfg.positive_or("collision.rate_scale", 1.0)?,
        interaction,
        include_pairs: cfg.bool_or("collision.pairs", true)?,
        include_mergers: cfg.bool_or("collision.mergers", true)?,
        swap_pair_labels: false,
    };
    Ok(KernelSetup {
        options,
        cache_dir: cfg.raw("collision.cache_dir").map(PathBuf::from),
    })
}

pub fn grid(cfg: &Config, spec: &Dispersion, default_n: usize) -> Outcome<Arc<Grid>> {
    let n = cfg.count_or("grid.N", default_n, 4)?;
    Ok(Arc::new(MomentumGrid::for_dispersion(spec, n).at("grid.N")?))
}

pub fn kernel(spec: &Dispersion, grid: Arc<Grid>, setup: KernelSetup) -> Outcome<Kernel> {
    one_dimensional(spec)?;
    match setup.cache_dir {
        Some(dir) => {
            let (k, hit) = build_kernel_1d_cached(grid, spec, setup.options, &dir).at("collision.cache_dir")?;
            if hit {
                eprintln!("kernel loaded from cache in {}", dir.display());
            }
            Ok(k)
        }
        None => Ok(build_kernel_1d_with(grid, spec, setup.options).at("dispersion.kind")?),
    }
}

/// What the `initial.*` keys describe.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialKind {
    Equilibrium,
    Cosine,
    Random,
    Affine,
}

impl InitialKind {
    pub fn read(cfg: &Config) -> Outcome<Self> {
        Ok(
            match cfg.choice("initial.kind", &["equilibrium", "cosine", "random", "affine"], "equilibrium")? {
                "equilibrium" => InitialKind::Equilibrium,
                "cosine" => InitialKind::Cosine,
                "random" => InitialKind::Random,
                _ => InitialKind::Affine,
            },
        )
    }

    /// Whether the state is stationary for every kernel on its grid.
    pub fn is_equilibrium(self) -> bool {
        self == InitialKind::Equilibrium
    }
}

pub fn beta(cfg: &Config) -> Outcome<f64> {
    Ok(cfg.positive_or("ensemble.beta", 1.0)?)
}

/// Initial spectrum on `grid` from the `initial.*` keys; points with zero
/// frequency are excluded and set to zero.
///
/// * `equilibrium`: `1 / (beta omega)`
/// * `cosine`: `(1 + amplitude cos(2 pi mode k)) / (beta omega)`
/// * `random`: independent uniform values in `[low, high)`
/// * `affine`: `1 / (a + c omega)`
pub fn initial_wigner(cfg: &Config, grid: Arc<Grid>, spec: &Dispersion, seed: u64) -> Outcome<(InitialKind, Wigner)> {
    let kind = InitialKind::read(cfg)?;
    let omega = grid.omega_table(spec).at("dispersion.kind")?;
    let excluded: Vec<usize> = (0..omega.len()).filter(|&i| omega[i] == 0.0).collect();
    let active = |i: usize| omega[i] != 0.0;
    let values: Vec<f64> = match kind {
        InitialKind::Equilibrium => {
            let beta = beta(cfg)?;
            (0..omega.len()).map(|i| if active(i) { 1.0 / (beta * omega[i]) } else { 0.0 }).collect()
        }
        InitialKind::Cosine => {
            let beta = beta(cfg)?;
            let amp = cfg.f64_or("initial.amplitude", 0.5)?;
            if amp.abs() >= 1.0 {
                return Err(ConfigError::invalid("initial.amplitude", format!("must satisfy |amplitude| < 1, got {amp}")).into());
            }
            let mode = cfg.count_or("initial.mode", 1, 0)? as f64;
            (0..omega.len())
                .map(|i| {
                    if active(i) {
                        (1.0 + amp * (2.0 * PI * mode * grid.coord(i)).cos()) / (beta * omega[i])
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        InitialKind::Random => {
            let low = cfg.positive_or("initial.low", 0.3)?;
            let high = cfg.f64_or("initial.high", 2.0)?;
            if !(high > low) {
                return Err(ConfigError::invalid("initial.high", format!("must exceed initial.low = {low}")).into());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..omega.len())
                .map(|i| {
                    let u = rng.random_range(low..high);
                    if active(i) {
                        u
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        InitialKind::Affine => {
            let a = cfg.f64_or("initial.a", 0.0)?;
            let c = cfg.f64_or("initial.c", 1.0)?;
            let mut v = Vec::with_capacity(omega.len());
            for (i, &w) in omega.iter().enumerate() {
                if !active(i) {
                    v.push(0.0);
                    continue;
                }
                let psi = a + c * w;
                if !(psi > 0.0) {
                    return Err(ConfigError::invalid("initial.c", format!("a + c omega = {psi:e} <= 0 at k = {}", grid.coord(i))).into());
                }
                v.push(1.0 / psi);
            }
            v
        }
    };
    let w = WignerState::with_exclusions(grid, values, excluded).at("initial.kind")?;
    Ok((kind, w))
}
