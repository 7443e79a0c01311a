//! Retrieval-augmented answering with compressed contexts.
//!
//! Retrieved documents and an image/question pair are compressed into
//! fixed-length soft prompts by a frozen encoder-decoder, aggregated with
//! retrieval-score-guided cross-attention, and turned into per-layer key/value
//! prefixes that steer a frozen base model. Everything runs on a small
//! tape-based autodiff engine over `f64`.

pub mod aggregator;
pub mod cachestore;
pub mod cli;
pub mod compressor;
pub mod error;
pub mod modulator;
pub mod numerics;
pub mod retrieval;
pub mod tinylm;

pub use error::{Error, Result};
