//! Associative continual learning for paired image-to-image GANs.
//!
//! A generator trained on a sequence of restoration or style tasks keeps
//! earlier tasks alive through two mechanisms: stored inverse mappers that
//! turn current ground truth into pseudo past-task inputs ([`heuristics`]),
//! and a diagonal-Fisher penalty anchoring the parameters to the previous
//! optimum ([`continual`]). [`runner`] drives full experiments against
//! transfer, joint, EWC-only and raw-replay baselines.

pub mod continual;
pub mod data;
pub mod error;
pub mod heuristics;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod runner;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ParamSet, Tensor};
