//! Binaural audio telepresence toolkit.
//!
//! Converts microphone-array recordings into binaural signals whose ambience
//! level is set by a single factor `alpha` in `[0, 1]`: `alpha = 1` keeps the
//! full acoustic scene, `alpha = 0` keeps only the direct and early speech.

pub mod brnet;
pub mod dsp;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod scene;
pub mod score;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use par::Exec;
