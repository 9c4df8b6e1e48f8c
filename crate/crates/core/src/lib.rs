pub mod config;
pub mod error;
pub mod features;
pub mod fem;
pub mod io;
pub mod media;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod prediction;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
