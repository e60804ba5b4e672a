//! Photon-number resolution for superconducting nanowire single-photon
//! detector waveforms.
//!
//! Two analysis paths share one discrimination back end:
//!
//! * full waveforms: [`preprocess`] → [`pca`] → [`discriminate`]
//! * threshold crossings: [`preprocess`] → [`edge`] → [`discriminate`]
//!
//! [`waveform`] holds the trace types and a synthetic pulse generator with
//! known photon numbers, used throughout the tests and examples.

pub mod calibrate;
pub mod cli;
pub mod discriminate;
pub mod edge;
pub mod error;
pub mod io;
pub mod pca;
pub mod pipeline;
pub mod preprocess;
pub mod report;
pub mod waveform;

pub use error::{Error, Result};
