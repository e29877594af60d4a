//! Churn prediction engine.
//!
//! Raw transactions are aggregated into daily per-user feature rows, cut into
//! 30-day windows labelled with four weekly inactivity flags, and fed either
//! to classical classifiers (over per-window mean/std summaries) or to deep
//! sequence models built on the in-crate autodiff [`tensor`] core.

pub mod classical;
pub mod data;
pub mod deep;
pub mod error;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{AdamConfig, AdamState, Mode, Tape, Tensor, Var};
