pub mod audio;
pub mod cli;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod gradsuite;
pub mod io;
pub mod losses;
pub mod memory;
pub mod metrics;
pub mod model;
pub(crate) mod nn;
pub mod numerics;
pub mod params;
pub mod synthcorpus;
pub mod training;

pub use error::{Error, Result};
