//! Patch graph transformer.
//!
//! Graphs are split into patches by spectral clustering, node embeddings are
//! pooled per patch, a patch-level GNN mixes them, and learnable query tokens
//! attend over the patch embeddings to form a graph representation.

pub mod bottleneck;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod matrix;
pub mod model;
pub mod seed;
pub mod spectral;
pub mod tensor;
pub mod train;
pub mod wl;

pub use error::{Error, Result};
pub use graph::{Dataset, Graph, Metric, Permutation};
pub use matrix::Matrix;
