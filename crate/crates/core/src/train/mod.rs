//! Mini-batch training of deep models, synchronous data-parallel gradient
//! averaging and the per-epoch history.

mod config;
mod fit;
mod history;
mod sync;

pub use config::{LossKind, TrainConfig, MAX_EPOCHS, PAPER_BATCH};
pub use fit::{train, train_with, validation_metrics, BestModel, TrainOutcome, Trainer};
pub use history::{EpochRecord, TrainHistory, HISTORY_HEADER};
pub use sync::{sync_gradient_average, GradientSet};
