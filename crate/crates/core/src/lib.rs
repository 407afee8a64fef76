//! Quantum-assisted building segmentation for single-band SAR-like rasters.
//!
//! The pipeline has two stages. A frozen quanvolutional pre-processor slides a
//! small window over a normalized raster, angle-encodes each window into a
//! simulated qubit register, runs a fixed circuit and reads back one Pauli-Z
//! expectation per qubit, producing a multi-channel feature stack. That stack
//! (or the raw band) feeds an Attention U-Net trained with hand-derived
//! gradients.
//!
//! Modules:
//! - [`qsim`]: state-vector simulator, circuit templates, text format, dense oracle
//! - [`quanvolution`]: windowed quantum feature extraction
//! - [`nn`]: tensors, layers with forward/backward, loss, optimizer, metrics, gradcheck
//! - [`unet`]: attention gate, Attention U-Net, training and evaluation
//! - [`data`]: patching, normalization, synthetic scenes, QVT1/PGM files
//! - [`cli`]: run configuration and the `quanvseg` command implementations

pub mod cli;
pub mod data;
mod error;
pub mod nn;
pub mod qsim;
pub mod quanvolution;
pub mod unet;

pub use error::{Error, Result};
