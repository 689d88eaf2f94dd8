//! Recovering subtractive-synthesizer patches from recorded notes.
//!
//! The crate is organised bottom-up: [`params`] defines the search space,
//! [`synth`] renders patches, [`dsp`] extracts features, [`loss`] scores a
//! render against a target, [`optimizer`] runs CMA-ES over the space and
//! [`pipeline`] ties everything to WAV files.

pub mod audio;
pub mod dsp;
pub mod error;
pub mod loss;
pub mod optimizer;
pub mod params;
pub mod pipeline;
pub mod synth;

pub use audio::AudioBuffer;
pub use error::{Error, Result};
