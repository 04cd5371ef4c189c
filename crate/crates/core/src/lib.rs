pub mod autodiff;
pub mod baselines;
pub mod dataset_io;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod inference;
mod io_util;
pub mod map;
pub mod net;
pub mod simulator;
pub mod training;

pub use error::{Error, Result};
