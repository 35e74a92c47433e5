//! Order-free sparse-graph GCN for classifying unordered, partially corrupted
//! feature sequences.
//!
//! Pipeline: [`simdata`] generates corrupted frame sequences, [`model`]
//! encodes every frame cell as a graph node, [`graph_embed`] links nodes by
//! thresholded feature affinity, [`spectral`] supplies the Laplacian
//! high-pass prior and the GCN propagation operator, [`train`] fits the
//! whole stack with hand-written gradients, and [`harness`] runs the
//! experiments behind the `ofgcn` CLI.

pub mod error;
pub mod graph_embed;
pub mod harness;
pub mod model;
pub mod numkit;
pub mod simdata;
pub mod spectral;
pub mod train;

pub use error::{Error, Result};
