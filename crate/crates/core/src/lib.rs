//! Core of the PromptCodec neural speech codec.
//!
//! A waveform encoder, a group-residual vector quantizer and a HiFi-GAN style
//! decoder, augmented with two utterance-level prompt encoders (a Mel
//! conditional encoder and an FBank voice-print encoder). Prompt embeddings
//! are merged with the quantized latent by learnable scalar weights, and an
//! SSIM penalty between the three feature streams pushes them to carry
//! different information.
//!
//! The crate is `no_std` and only needs `alloc`. It contains the small
//! reverse-mode autodiff engine the models are written against, the DSP
//! front end, losses, discriminators, objective metrics, the compressed
//! stream format and a deterministic training step. File IO and the CLI live
//! in the `promptcodec` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autograd;
pub mod codec;
pub mod disc;
pub mod dsp;
mod error;
pub mod eval;
pub mod fusion;
pub mod grvq;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod prompt;
pub mod stream;
pub mod synth;
mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
