//! Pre-train, prompt, fine-tune pipeline for graph learning.
//!
//! The crate is organized bottom-up:
//!
//! - [`diff`]: dense f64 tensors, a reverse-mode tape, gradient checking,
//!   finite-difference Hessian-vector products, and Jacobi-based SVD.
//! - [`graph`]: graph storage and IO, induced-subgraph extraction, label
//!   derivation, few-shot sampling, and a stochastic block model generator.
//! - [`backbone`]: GCN and GAT encoders, graph readout, parameter counting,
//!   and the checkpoint container.
//! - [`pretrain`]: graph augmentations, NT-Xent contrastive loss, and the
//!   GraphCL / SimGRACE pre-training loops that produce a frozen backbone.
//! - [`prompt`]: the learnable prompt graph (tokens, token structure,
//!   cross links) and its insertion into input graphs.
//! - [`meta`]: binary task construction, episodic inner/outer-loop training
//!   with a finite-difference second-order term, the full pipeline, and
//!   head-free answering.

pub mod backbone;
pub mod diff;
pub mod error;
pub mod graph;
pub mod meta;
pub mod optim;
pub mod pretrain;
pub mod prompt;

pub use error::{Error, Result};
