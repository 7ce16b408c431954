//! Cold-start CTR prediction with graph meta embeddings.
//!
//! The crate trains a DNN click model over old ads, connects new ads to
//! old ads through an attribute reverse index, and learns initial
//! ID-embedding generators (RndEmb, MetaEmb, NgbEmb, GME-P, GME-G, GME-A)
//! with a two-minibatch meta objective. Evaluation covers the cold-start
//! phase and two warm-up rounds.
//!
//! Everything computes on a small reverse-mode differentiation core over
//! dense `f64` tensors ([`tape`]), with finite-difference oracles
//! ([`diff`]) used throughout the test suite.

pub mod data;
pub mod diff;
pub mod error;
pub mod eval;
pub mod generators;
pub mod graph;
pub mod meta;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;

mod checkpoint;

pub use checkpoint::TensorArchive;
pub use error::{CoreError, Result};
pub use tensor::Tensor;
