//! Non-iterative knowledge fusion of dense feedforward classifiers.
//!
//! Two networks trained on disjoint class sets are merged into one network
//! that classifies the union of both class sets without any retraining.
//! Two fusion rules are provided:
//!
//! - **Weights summation**: corresponding hidden parameters are added (or
//!   averaged, for layers that share an origin) and the output heads are
//!   stacked.
//! - **Elastic weight consolidation**: hidden nodes of the second network are
//!   first paired with the nodes of the first by solving an assignment problem
//!   on a Fisher-weighted cost, then every parameter becomes the
//!   Fisher-weighted mean of its two sources.
//!
//! The crate also carries the machinery needed to reproduce split-MNIST
//! experiments: a small dense network with exact backpropagation and Adam
//! training, diagonal Fisher computation, IDX loading, evaluation and a JSON
//! model file format.

pub mod align;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fisher;
pub mod fuse;
pub mod modelfile;
pub mod nnet;
pub mod seed;

pub use error::{Error, Result};

/// Identifier of an output class (for MNIST, the digit).
pub type ClassLabel = u32;
