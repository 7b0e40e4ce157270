//! Learned subgraph matching.
//!
//! A pair (query graph, data graph) is encoded by a shared-weight GCN; after
//! every layer a neural tensor network scores each query/data node pair and a
//! node-to-node attention matrix reweights those scores. A 1x1 channel mix
//! over all layers followed by a row softmax yields an `|Q| x |G|` matrix
//! whose row-wise argmax is the predicted node correspondence.
//!
//! Modules:
//! - [`graph`]: labelled graphs, the random pair generator, ground truth.
//! - [`oracle`]: exact subgraph isomorphism for validation and scoring.
//! - [`autodiff`]: dense tensors with a reverse-mode gradient tape.
//! - [`model`]: the network, discretisation and checkpoints.
//! - [`train`]: loss, Adam and the training loop.
//! - [`eval`]: accuracy, F1 and timing.
//! - [`cli`]: experiment configs and the command implementations.

pub mod autodiff;
pub mod cli;
pub mod dataset_io;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod oracle;
pub mod train;

pub use error::{Error, Result};
