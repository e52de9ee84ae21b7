//! Patch-wise implicit neural video representation.
//!
//! A video is addressed as `(frame, patch)` pairs. A small network maps the
//! positional encoding of each pair to an RGB patch; training overfits it to
//! one clip, decoding evaluates it at every pair, and the trained weights are
//! shipped through pruning, quantization and Huffman coding.
//!
//! Batch work (per-sample gradients, patch decoding, per-frame metrics) runs
//! on rayon when the default `parallel` feature is enabled, and sequentially
//! otherwise. Both paths give identical results.

pub mod arch;
pub mod compression;
pub mod embedding;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod par;
pub mod patchgrid;
pub mod synthetic;
pub mod toyfit;
pub mod training;
pub mod video;

pub use arch::ArchConfig;
pub use embedding::{CoordPair, EncodingConfig};
pub use error::{Error, Result};
pub use model::{ModelParams, PsNerv};
pub use numerics::{Parameter, Real, Tensor};
pub use patchgrid::GridConfig;
pub use training::{train, train_model, MaskSpec, TrainConfig, TrainLog, TrainOptions};
pub use video::FrameSequence;
