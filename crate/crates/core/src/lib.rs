//! Gaussian process regression with Gaussianizing input transforms and an
//! ensemble kernel whose mixture weights are chosen by Bayesian optimization.

pub mod bayes_opt;
pub mod cli;
pub mod data_io;
pub mod error;
pub mod evaluation;
pub mod gp;
pub mod kernels;
pub mod model_file;
pub mod optim;
pub mod pipeline;
pub mod transforms;

pub use error::{Error, Result};
