//! Node feature selection for graph neural networks.
//!
//! The crate trains small GNNs (GCN, GIN, TAGCN) and MLPs from scratch on
//! full-batch node classification, scores node features by permutation tests
//! and a set of baseline metrics, prunes features adaptively during training,
//! and numerically checks the GCN error bounds against idealized inputs.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod csr;
pub mod data;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod importance;
pub mod matrix;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod perturb;
pub mod rng;
pub mod selection;
pub mod theory;

pub use csr::CsrMatrix;
pub use error::{Error, Result};
pub use graph::{Graph, Split};
pub use matrix::Matrix;
