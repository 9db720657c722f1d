//! Convolutional dictionary learning network (CDLNet) for grayscale denoising.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: images, coefficient maps, filter banks and the strided
//!   convolution adjoint pair the rest of the crate is built on.
//! * [`sparse`]: classical ISTA sparse coding and alternating dictionary
//!   learning, used as a reference solver and as a test oracle.
//! * [`model`]: the unrolled network (parameters, initialisation, forward pass).
//! * [`training`]: reverse-mode gradients, projected Adam, the data pipeline,
//!   the training loop and checkpoint persistence.
//! * [`noise`]: blind noise-level estimation (wavelet MAD and patch PCA).
//! * [`eval`]: PGM I/O, PSNR, the denoising pipeline and benchmark reports.
//!
//! Data-parallel loops run on rayon when the default `parallel` feature is
//! enabled and fall back to plain iterators otherwise. Both paths produce
//! bit-identical results.

pub mod config;
pub mod error;
pub mod eval;
pub mod model;
pub mod noise;
pub mod par;
pub mod real;
pub mod sparse;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{ModelConfig, ModelParams};
pub use real::Real;
pub use tensor::{CoeffMap, FilterBank, Image};
