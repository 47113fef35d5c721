//! Ground-truth solvers, initial-condition samplers and the dataset
//! container.

mod dataset;
mod diffusion_reaction;
mod grf;
mod navier_stokes;
mod spectral;

pub use dataset::*;
pub use diffusion_reaction::{
    logistic, sample_initial_condition_1d, solve_diffusion_reaction, DiffusionReactionConfig,
};
pub use grf::{grf_with_residue, sample_grf_2d, GrfSpec};
pub use navier_stokes::{
    energy, enstrophy, solve_navier_stokes, subsample, Forcing, NavierStokesConfig,
    NavierStokesSolver,
};
