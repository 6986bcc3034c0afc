//! Numerical core of a desk-scale active noise control laboratory.
//!
//! Everything in this crate is a pure function of its inputs (or a
//! single-threaded stateful controller) and only needs an allocator:
//!
//! - [`fft`] and [`dsp`]: mixed-radix FFT, STFT/iSTFT, FIR convolution,
//!   SNR mixing and polyphase resampling.
//! - [`room`]: image-source room impulse responses and Schroeder RT60
//!   estimation.
//! - [`scenario`]: synthetic noise/speech sources and training sample
//!   synthesis through the primary path.
//! - [`fxlms`]: the sample-by-sample filtered-x LMS baseline.
//! - [`nn`]: the causal convolutional-recurrent controller, its exact
//!   reverse-mode gradients and Adam training.
//! - [`metrics`]: noise reduction, STOI and Welch PSD.
//!
//! File formats, corpora and the command line live in the `anclab` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dsp;
pub mod error;
pub mod fft;
pub mod fxlms;
pub mod metrics;
pub mod nn;
pub mod room;
pub mod scenario;

mod math;

pub use error::{Error, Result};
