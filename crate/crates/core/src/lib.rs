//! Stabilised inverse-probability-of-treatment weighting for count
//! exposures, plus the full Monte Carlo pipeline around it: data generation,
//! calibrated amputation, chained-equation imputation, weighted effect
//! estimation with sandwich variance, Rubin pooling, and performance
//! summaries.

pub mod data_model;
pub mod dgm;
pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod glm;
pub mod linalg;
pub mod optim;
pub mod rng;
pub mod stats;

pub mod harness;
pub mod imputation;
pub mod metrics;
pub mod missingness;
pub mod weights;

pub use error::{Error, Result};
