//! Concept bottleneck models whose concept-to-class mapping is a learnable,
//! differentiable fuzzy-logic layer.
//!
//! The crate is organized bottom-up:
//!
//! - [`gates`]: the sixteen real-valued binary gates and their derivatives
//! - [`logic`]: logic layers (pairing, gate mixtures, forward/backward, hardening)
//! - [`model`]: encoders, class heads, and the three model families
//! - [`training`]: losses, optimizers and the training loop
//! - [`formula`] and [`datasets`]: boolean formulas and concept datasets
//! - [`analysis`]: rule extraction, interventions, alignment and correction metrics
//! - [`checkpoint`]: versioned binary model files

pub mod error;
pub mod gates;
pub mod logic;
pub mod tensor;
pub mod formula;
pub mod datasets;
pub mod model;
pub mod training;
pub mod analysis;
pub mod checkpoint;
pub mod cli;

pub use error::{Error, Result};
