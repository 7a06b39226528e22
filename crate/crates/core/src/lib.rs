//! Neural-network intra prediction for block-based image coding.
//!
//! The crate holds a small deterministic tensor/NN core, the context
//! extraction and masking pipeline, the fully-connected and convolutional
//! predictors, a reference 35-mode angular intra predictor, an intra-only
//! image codec that can signal the neural predictor, and the training and
//! evaluation harness around them.

pub mod arch;
pub mod codec;
pub mod context;
pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod hevc;
pub mod image;
pub mod nn;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
