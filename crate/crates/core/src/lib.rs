//! Two-stage audio-visual target speaker extraction.
//!
//! A visual voice activity detector turns lip crops into per-frame speech
//! labels; the extraction network combines those labels with the mixture
//! spectrum and predicts a complex ratio mask for the target speaker. Both
//! stages are causal and run frame by frame through [`engine::StreamEngine`].
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the deployment type.

pub mod complexity;
pub mod engine;
pub mod error;
pub mod metrics;
mod nn;
pub mod scalar;
pub mod signal;
pub mod sim;
pub mod tensor;
pub mod tse;
pub mod vad;
pub mod vvad;
pub mod weights;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Audio = signal::AudioBuffer<f32>;
pub type Spectrogram = signal::ComplexSpectrogram<f32>;
pub type Mask = signal::CrmMask<f32>;
pub type Lips = vvad::LipFrameSequence<f32>;
pub type Model = engine::AvTseModel<f32>;
pub type Engine = engine::StreamEngine<f32>;
