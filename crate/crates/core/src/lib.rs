//! Event detection over geo-tagged short-text streams: sliding windows,
//! spatial quad-tree indexing, keyword embedding, BIRCH-style clustering,
//! power-law burst detection, and an image-coherence gate driven by a
//! small convolutional autoencoder.

pub mod autoencoder;
pub mod clustering;
pub mod coherence;
pub mod embedding;
pub mod error;
pub mod harness;
pub mod pipeline;
pub mod powerlaw;
pub mod quadtree;
pub mod stopwords;
pub mod types;

pub use error::{Error, Result};
