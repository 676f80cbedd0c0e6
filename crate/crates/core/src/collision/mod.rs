//! Four-phonon collision operator.
//!
//! * [`build_kernel_1d`] / [`evaluate_collision`]: one-dimensional lattices,
//!   energy delta resolved by root finding.
//! * [`evaluate_collision_3d_mollified`]: lattice grids in any dimension with
//!   a Gaussian-mollified energy delta.
//! * [`evaluate_collision_nls`]: the nonlinear Schroedinger variant.

mod cache;
mod kernel;
mod mollified;
mod nls;

pub use cache::{build_kernel_1d_cached, cache_file_name, kernel_cache_key, load_kernel, save_kernel, CACHE_VERSION};
pub use kernel::{
    build_kernel_1d, build_kernel_1d_with, evaluate_collision, Channel, CollisionKernel, CollisionRates, Interaction,
    KernelDiagnostics, KernelEntry, KernelOptions, Stencil,
};
pub use mollified::{
    default_epsilon, evaluate_collision_3d_mollified, evaluate_collision_mollified, tau_grid, ChannelSelection,
    MollifiedOptions, TauGrid,
};
pub use nls::{evaluate_collision_nls, evaluate_collision_nls_mollified, NlsOptions};
