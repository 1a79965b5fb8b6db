//! Self-supervised graph head for multi-source domain adaptation.
//!
//! Category and domain classes are modelled as nodes of a small graph whose
//! Gaussian-kernel adjacency is computed from trainable node embeddings. A
//! GCN turns the embeddings into per-node classifiers that score extracted
//! image features. Training combines source cross-entropy, target entropy
//! and a self-supervised domain-classification task; during training the
//! domain nodes are perturbed to reveal or deny an image's domain.
//!
//! The crate also carries a linear-head baseline, a synthetic multi-domain
//! benchmark with a CSV feature-file path for real features, and the
//! training harness behind the `ssg` command-line tool.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod graph_head;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
