//! Growth-stage-normalized crop type classification.
//!
//! The pipeline runs on multi-band time-series raster cubes: QA masking and
//! Savitzky-Golay smoothing, spectral index computation, per-pixel growth
//! stage detection (greenup, peak, senescence), growth-stage-normalized
//! sample extraction, and classification with a hybrid CNN-LSTM network,
//! its ablations, and a random forest baseline. A synthetic season
//! generator with a controllable planting shift makes the whole pipeline
//! testable at desk scale.

pub mod cube;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod phenology;
pub mod preprocess;
pub mod rng;
pub mod sampling;
pub mod spectral;
pub mod synth;
mod wire;

pub use error::{Error, Result};
