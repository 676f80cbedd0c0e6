use thiserror::Error;

/// Failures raised by the numerical modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("momentum outside the dispersion domain: {0}")]
    DomainMismatch(String),

    #[error("dispersion is not differentiable at k = {0:?}")]
    SingularPoint(Vec<f64>),

    #[error("couplings violate symmetry alpha(x) = alpha(-x) at offset {0:?}")]
    AsymmetricCoupling(Vec<i64>),

    #[error("couplings are mechanically unstable: Fourier transform {value:e} < 0 at k = {k:?}")]
    NegativeFourierTransform { k: Vec<f64>, value: f64 },

    #[error("zero mode frequency at k = {0:?}; use an optical dispersion (omega0 > 0) or exclude the mode")]
    ZeroFrequency(Vec<f64>),

    #[error("reconstructed field violates reality: imaginary residue {0:e}")]
    RealityViolation(f64),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("integrator instability: relative energy drift {drift:e} exceeds {limit:e}")]
    EnergyDrift { drift: f64, limit: f64 },

    #[error("stiff step: negativity persists after {halvings} step halvings (min W = {min_value:e} at index {index})")]
    Stiffness {
        halvings: u32,
        min_value: f64,
        index: usize,
    },

    #[error("cost guard: estimated {estimated:e} operations exceeds budget {budget:e}")]
    CostGuard { estimated: f64, budget: f64 },

    #[error("residual undefined: {0}")]
    UndefinedResidual(String),

    #[error("basis {{1, omega}} is collinear on this grid")]
    CollinearBasis,

    #[error("non-positive collisional invariant: psi = {value:e} at k = {k:?}")]
    NonPositiveInvariant { k: Vec<f64>, value: f64 },

    #[error("kernel cache: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
