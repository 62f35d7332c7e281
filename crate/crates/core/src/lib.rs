//! Frequency-adaptive convolution toolkit for sound event detection.
//!
//! The crate is organized bottom-up:
//! - [`tensor`], [`tape`], [`ops`]: a dense-tensor reverse-mode autodiff
//!   engine with the primitives the models need (conv, GRU, BN, softmax);
//! - [`features`]: waveform to log-mel front end;
//! - [`dynconv`]: the frequency-dynamic convolution family;
//! - [`crnn`]: full models assembled from the above;
//! - [`datakit`], [`trainer`], [`evalkit`], [`io`]: synthetic data,
//!   mean-teacher training, event-level scoring, and serialization.

pub mod crnn;
pub mod datakit;
pub mod dynconv;
pub mod error;
pub mod evalkit;
pub mod trainer;
pub mod features;
pub mod gradcheck;
pub mod io;
pub mod ops;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Grads, Tape, Var};
pub use tensor::{Scalar, Tensor};
