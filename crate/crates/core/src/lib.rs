pub mod checkpoint;
pub mod error;
pub mod experiment;
pub mod features;
pub mod fusion;
pub mod gradcheck_suite;
pub mod metrics;
pub mod nn;
pub mod pooling;
pub mod spotting;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
