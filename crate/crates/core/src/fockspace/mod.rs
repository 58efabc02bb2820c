//! State representation: truncated families of symmetric n-particle
//! densities on tensor-product grids.
//!
//! Densities follow the reaction-diffusion convention: `f_n` integrates to
//! the probability of finding exactly `n` particles, with no combinatorial
//! prefactor in the normalisation.

mod density;
mod grid;
mod layout;
mod particles;

pub use density::{
    level_mass, marginal_copy_number, marginal_density_field, spatial_density, symmetrize,
    symmetry_defect, total_mass, total_variation, FockDensity,
};
pub use grid::{maxwell_tail_mass, BoundaryKind, PhaseGrid, Side, VelocityAxis, MAX_DIM};
pub use layout::{Layout, LevelShape, DEFAULT_STATE_CAP, MAX_RANK};
pub use particles::{Particle, ParticleConfiguration};
