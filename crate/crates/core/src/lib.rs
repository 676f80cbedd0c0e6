//! Phonon Boltzmann equation workbench.
//!
//! Dispersion relations and collision kinematics, a microscopic anharmonic
//! chain simulator, the four-phonon collision operator, kinetic time
//! integrators and collisional-invariant checks. Everything numeric is
//! generic over [`Real`] (`f32` or `f64`); the aliases below fix `f64`.

pub mod collision;
pub mod dispersion;
pub mod error;
pub mod grid;
pub mod invariants;
pub mod kinetic;
pub mod lattice;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Dispersion = dispersion::DispersionSpec<f64>;
pub type Grid = grid::MomentumGrid<f64>;
pub type Wigner = grid::WignerState<f64>;
pub type Kernel = collision::CollisionKernel<f64>;
pub type Chain = lattice::ChainState<f64>;
pub type Field = lattice::ComplexField<f64>;
pub type PhaseSpace = kinetic::PhaseSpaceState<f64>;
pub type Trajectory = kinetic::KineticTrajectory<f64>;
