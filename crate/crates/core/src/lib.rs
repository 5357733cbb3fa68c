//! Region-specific audio tagging for tetrahedral microphone-array recordings.

pub mod audio;
pub mod augment;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod features;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod regionfeat;
pub mod scenesim;
pub mod train;

pub use error::{Error, Result};
