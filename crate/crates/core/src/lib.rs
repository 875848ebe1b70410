//! Multi-label intent classification trained without hand-labelled data.
//!
//! The pipeline synthesizes labelled queries from per-class prompt templates,
//! embeds them with a pluggable provider, pretrains a projection head with the
//! online focal-contrastive (OFC) objective over mined in-batch pairs, then
//! fine-tunes a sigmoid multi-label classifier on top of the projection.
//!
//! Everything in this crate is synchronous and free of I/O other than plain
//! file reads and writes, so it also builds for `wasm32-unknown-unknown`.
//! Network transports live in the CLI crate behind [`transport::JsonTransport`].

pub mod dataset;
pub mod datagen;
pub mod embedding;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod mining;
pub mod pipeline;
pub mod trainer;
pub mod transport;

pub use error::{Error, ErrorKind, Result};
