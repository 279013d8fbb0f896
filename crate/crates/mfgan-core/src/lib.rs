//! Adversarial sequential recommendation toolkit.
//!
//! A causal self-attentive next-item generator is trained by maximum
//! likelihood and then refined by policy gradient against a set of
//! factor-specific bidirectional discriminators whose rationality scores are
//! combined through a λ-parameterized softmax. Everything runs on a small
//! self-contained reverse-mode autodiff engine.

pub mod attention;
pub mod data;
pub mod discriminator;
pub mod eval;
pub mod optimizer;
pub mod reward;
pub mod trainer;
pub mod generator;
pub mod autodiff;
pub mod error;

pub use error::{Error, Result};
