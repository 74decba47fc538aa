//! Aspect-driven news recommendation.
//!
//! News and users are encoded at two granularities: a multi-view feature
//! vector fused from title, abstract and category channels, and an
//! aspect-level vector reconstructed from a learned aspect embedding matrix.
//! The concatenation of both feeds an inner-product click predictor. Training
//! minimizes a negative-sampling ranking loss plus a max-margin aspect
//! reconstruction loss and an orthogonality penalty on the aspect matrix.
//!
//! Modules:
//! - [`tensor`]: dense `f64` tensors with reverse-mode gradients on a tape,
//!   plus a finite-difference verification harness
//! - [`corpus`]: news/behavior log parsing, vocabulary, pretrained embedding
//!   loading, negative-sampled training instances
//! - [`model`]: news encoder, aspect extractor, user encoder
//! - [`train`]: click scoring, the three-term objective, the optimizer loop
//! - [`eval`]: impression-grouped AUC / MRR / nDCG
//! - [`config`], [`checkpoint`]: run configuration and versioned snapshots

pub mod binio;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod hash;
pub mod init;
pub mod model;
pub mod train;
pub mod tensor;

pub use config::Config;
pub use tensor::{Tape, Tensor, TensorError, TensorId};
