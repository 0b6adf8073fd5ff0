//! Episodic training for domain generalization over small MLPs.
//!
//! A shared ("agnostic") feature extractor and classifier are trained
//! alongside one feature/classifier pair per source domain. Each step routes
//! a domain's data through a partner module that has never seen that domain
//! (or through a frozen random classifier) and penalises only the agnostic
//! module, which is the one deployed at test time.

pub mod error;
pub mod bank;
pub mod data;
pub mod nn;
pub mod train;
pub mod eval;

pub use error::{Error, Result};
