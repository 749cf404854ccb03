//! Bayesian global optimization on finite candidate grids with Gaussian
//! process surrogates.
//!
//! The central acquisition rule picks the candidate whose hypothetical
//! observation is expected to leave the least entropy in the distribution of
//! the minimizer location. Expected improvement, probability of improvement
//! and posterior-variance sampling are provided as baselines, together with
//! benchmark objectives and a reproducible experiment runner.
//!
//! The numerical modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which the experiment runner uses.

pub mod acquisition;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod linalg;
pub mod minimizer;
pub mod rng;
pub mod scalar;
pub mod testbed;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Domain = gp::Domain<f64>;
pub type Hyperparameters = gp::Hyperparameters<f64>;
pub type Dataset = gp::Dataset<f64>;
pub type PosteriorSnapshot = gp::PosteriorSnapshot<f64>;
pub type HyperBounds = gp::HyperBounds<f64>;
pub type Grid = minimizer::Grid<f64>;
pub type MinimizerDistribution = minimizer::MinimizerDistribution<f64>;
pub type Incumbent = minimizer::Incumbent<f64>;
pub type AcquisitionConfig = acquisition::AcquisitionConfig<f64>;
pub type Matrix = linalg::Matrix<f64>;
