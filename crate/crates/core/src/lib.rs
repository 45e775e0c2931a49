//! Semantic contrast pre-training at desk scale.
//!
//! The pipeline builds positive (synonym) and negative (antonym) variants of
//! sentences from WordNet, pre-trains a small transformer encoder with masked
//! language modeling, replaced-token detection and a single-negative
//! contrastive loss, and measures how well the resulting sentence
//! representations separate the two kinds of perturbation.

pub mod autodiff;
pub mod config;
pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod objectives;
pub mod persist;
pub mod perturb;
pub mod rng;
pub mod synth;
pub mod textproc;
pub mod trainer;
pub mod wordnet;

pub use error::{Error, Result};
