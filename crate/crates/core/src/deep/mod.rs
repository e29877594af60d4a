//! Sequence models over `[B, 30, 11]` windows emitting four weekly churn
//! logits, built on the [`crate::tensor`] tape.

mod checkpoint;
mod config;
mod layers;
mod model;
mod nets;
mod verify;

pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ArchKind, ArchParams, ArchitectureConfig, Preset};
pub use layers::RunningStats;
pub use model::{batch_tensor, build_model, DeepModel, Forward, NORM_MOMENTUM};
pub use verify::{run_architecture_suite, ModelFragment};
