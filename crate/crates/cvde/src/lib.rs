//! Density estimation on Voronoi tessellations.
//!
//! The estimator places a kernel at each generator and normalizes it by the
//! kernel mass of the generator's Voronoi cell, so unbounded cells carry
//! finite mass and the estimate adapts to the local geometry of the data.
//! Cell masses come from Monte Carlo integration over the unit sphere of
//! raycast directional radii; sampling walks each cell with a hit-and-run
//! Markov chain over a shared direction pool. Gaussian KDE and an
//! adaptive-bandwidth variant are included as baselines, together with
//! synthetic dataset generators, PCA projection, and a file format for
//! fitted models.

pub mod baselines;
pub mod datasets;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod kernels;
pub mod matrix;
pub mod model_io;
pub mod rng;
pub mod sampler;
pub mod special;

pub use error::{Error, Result};
pub use matrix::Matrix;
