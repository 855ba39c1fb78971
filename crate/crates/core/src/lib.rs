//! Explaining snippet-trained 3D convolutional video classifiers.
//!
//! The crate runs small C3D-style networks ([`network`]), attributes their
//! predictions to input pixels with deep Taylor decomposition or squared
//! gradients ([`relevance`]), and measures how that relevance is spread
//! over the frames of a snippet ([`analysis`]): a quadratic fit captures
//! excess relevance at both ends of the snippet, a linear fit captures a
//! drift toward its end. [`sampler`] controls which frames form a snippet,
//! [`synthlab`] provides seeded toy tasks and a trainer, and [`persist`]
//! holds the file formats used by the `vidrel` command line ([`cli`]).

pub mod analysis;
pub mod cli;
pub mod error;
pub mod network;
pub mod persist;
pub mod relevance;
pub mod sampler;
pub mod synthlab;
pub mod tensor;

pub use error::{Error, Result};
pub use network::{Architecture, ForwardTrace, LayerParams, LayerSpec, NetworkSpec};
pub use relevance::{AttributionMap, Method, RelevanceConfig, Target};
pub use sampler::{SnippetSpec, Step, Video};
pub use tensor::Tensor;
