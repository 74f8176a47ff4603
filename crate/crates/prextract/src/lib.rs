//! Desk-scale model-extraction laboratory.
//!
//! The pipeline mirrors a black-box extraction campaign end to end:
//!
//! 1. [`ssl`] compiles prior knowledge of an unlabeled proxy pool into an
//!    encoder (autoencoders or contrastive pretraining).
//! 2. [`oracle`] wraps a trained victim classifier behind a metered,
//!    budget-enforcing query interface — the only channel to the victim.
//! 3. [`extraction`] runs the active loop: entropy-rank the proxy pool,
//!    query a per-round slice of the budget, retrain the substitute.
//! 4. [`eval`] scores the stolen substitute (fidelity / accuracy) and
//!    [`adversarial`] measures FGSM transferability back to the victim.
//!
//! Everything is deterministic given explicit seeds; [`runner`] orchestrates
//! full campaigns from a config file.

pub mod adversarial;
pub mod data;
pub mod error;
pub mod eval;
pub mod extraction;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod runner;
pub mod ssl;

pub use error::{Error, Result};
