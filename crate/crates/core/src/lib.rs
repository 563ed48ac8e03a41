//! Early-exit noise suppression engine.
//!
//! An nsNet2-style mask estimator (FC-GRU-GRU-FC-FC-FC) that can emit a
//! suppression mask after any of its six layers, in seven model variants,
//! together with the signal processing, training, evaluation and complexity
//! accounting around it.

pub mod arch;
pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod dsp;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod profiler;
pub mod train;

pub use error::{Error, Result};
