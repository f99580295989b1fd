//! Learning latent user preferences as natural-language rules.
//!
//! The crate covers the full loop: eliciting preferences through a short
//! dialogue, compiling them into a numbered rule list, applying the rules to
//! ambiguous action-selection scenarios, and refining them with a gated critic
//! that only accepts updates which do not regress accuracy. Comparison
//! baselines, label-unification oracles for benchmark datasets, simulated
//! users, metrics and a run store round it out.

pub mod baselines;
pub mod config;
pub mod critic;
pub mod elicitation;
pub mod error;
pub mod forge;
pub mod gateway;
pub mod hash;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod prompts;
pub mod runner;
pub mod service;
pub mod simulation;
pub mod store;

pub use error::{Error, Result};
