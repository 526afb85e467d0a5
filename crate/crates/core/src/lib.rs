//! Multi-resolution convolutional autoencoder.
//!
//! The network is grown level by level over a pyramid of snapshot data.
//! Each level wraps the previous network in a trainable stride-2
//! convolution/deconvolution pair (deepening) and then appends masked
//! filter groups that only act where the current reconstruction is poor
//! (widening). Everything in this crate is pure computation on `alloc`
//! buffers; file formats, the CLI and wall-clock timing live in the `mrcae`
//! companion crate.

#![no_std]
#![deny(rust_2018_idioms)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bench;
pub mod conv;
pub mod datasets;
mod error;
pub mod masking;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use masking::SpatialMask;
pub use model::{Activation, Encoding, LevelBlock, MrCaeModel, WideningGroup};
pub use objectives::LossValue;
pub use tensor::{Dims, ScalarField, SnapshotTensor};
