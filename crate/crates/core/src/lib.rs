pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod generator;
pub mod model;
pub mod nn;
pub mod rng;
pub mod trainer;

pub use error::{GfrError, Result};
