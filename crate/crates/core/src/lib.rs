//! Emotional-causality analysis for long dialogues.
//!
//! The pipeline slides overlapping windows over a dialogue, indexes each
//! window with a fused text/voice embedding, retrieves related windows as
//! context for sextuplet extraction, links the extracted events into a
//! weighted causal graph and scores that graph against gold annotations.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod embed;
pub mod error;
pub mod eval;
pub mod extract;
pub mod graph;
pub mod ingest;
pub mod kb;
pub mod model;
pub mod par;
pub mod pipeline;
#[cfg(feature = "remote")]
pub mod remote;
pub mod rules;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
