//! Diagonal-Gaussian machinery, evidence lower bounds and the linear-Gaussian
//! world model with an exact Kalman evidence oracle.

mod bound;
mod gaussian;
mod lgssm;

pub use bound::{
    expected_sequential_free_energy, sequential_free_energy, sequential_free_energy_mc, McEstimate,
};
pub use gaussian::{
    categorical_ce, cross_entropy_diag, entropy_diag, gaussian_nll, kl_diag, kl_diag_grad,
    sample_reparam, single_latent_elbo, DiagonalGaussian, KlGradient,
};
pub(crate) use gaussian::per_cell_ce;
pub use lgssm::{
    kalman_filter, kalman_log_evidence, lgssm_filter, KalmanOutput, LinearGaussianWorldModel,
    ModelRecord, Trajectory, TrajectoryStep, random_model, sample_trajectory,
};

/// Latent size of the BeV present/future distributions.
pub const BEV_LATENT_DIM: usize = 32;
/// Latent size of the video world model's distributions.
pub const VIDEO_LATENT_DIM: usize = 16;
