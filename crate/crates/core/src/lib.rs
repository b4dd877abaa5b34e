//! Hybrid lexical/dense retrieval with selective dense cluster search.
//!
//! Sparse retrieval runs first; its top results are binned by rank and used,
//! together with centroid geometry, to pick a handful of dense embedding
//! clusters through a small LSTM. Only the documents of those clusters get
//! dense scores, which are fused with the sparse scores by linear
//! interpolation.

pub mod cluster;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod kv;
pub mod lstm;
pub mod pq;
pub mod ranked;
pub mod selector;
pub mod sparse;
pub mod storage;
pub mod vecmath;

pub use error::{Error, Result};
pub use ranked::{RankedList, Scored};
