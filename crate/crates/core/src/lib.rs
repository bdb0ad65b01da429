//! Self-supervised hypergraph embeddings for heterogeneous information
//! networks.
//!
//! The pipeline compiles user-declared meta-paths into hyperedges over the
//! anchor node type, builds the normalized hypergraph adjacency, and trains a
//! two-view encoder (typed-neighbor attention and hypergraph convolution)
//! with a cross-view contrastive loss plus a clustering-consistency KL term.
//! Frozen embeddings are evaluated with a logistic-regression probe.
//!
//! ```no_run
//! use hinge::{evalbench, trainer};
//!
//! let graph = evalbench::synth_hin(&evalbench::SyntheticSpec::default()).unwrap();
//! let config = trainer::TrainConfig::default();
//! let outcome = trainer::train(&graph, &config).unwrap();
//! println!("best val accuracy {:.2}", outcome.best_val);
//! ```

pub mod encoder;
pub mod error;
pub mod evalbench;
pub mod hingraph;
pub mod hypergraph;
pub mod numkern;
pub mod objectives;
pub mod rng;
pub mod trainer;

#[cfg(test)]
pub(crate) mod test_support;

pub use encoder::{EncoderParams, ViewEmbeddings};
pub use error::{Error, Result};
pub use hingraph::{HeteroGraph, LabelSplit, MetaPath};
pub use hypergraph::{Hypergraph, NormalizedAdjacency};
pub use numkern::{DenseMatrix, SparseBinaryMatrix};
pub use objectives::LossReport;
pub use trainer::TrainConfig;
