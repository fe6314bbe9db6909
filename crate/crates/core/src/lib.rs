//! Similarity of transformer activations at neuron, layer and attention-head
//! granularity, computed from frame-level activation dumps.
//!
//! The pipeline is dumps ([`dumpio`]) → streaming moments ([`stats`]) →
//! measures ([`neuron_sim`], [`cca`], [`attention_sim`]) → grids and figures
//! ([`heatmap`]) → freeze advice ([`advisor`]).

// `!(v > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod advisor;
pub mod attention_sim;
pub mod dumpio;
pub mod cca;
pub mod cli;
pub mod error;
pub mod heatmap;
pub mod measure;
pub mod neuron_sim;
pub mod pipeline;
pub mod stats;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
