//! Raw transactions to labelled, split and standardized window datasets.

mod dataset;
mod day;
mod ingest;
mod level01;
mod level02;
mod normalize;
mod schema;
mod split;
mod windows;

pub use dataset::{WindowDataset, DATASET_MAGIC, DATASET_VERSION};
pub use day::{DateRange, Day, SECONDS_PER_DAY};
pub use ingest::{ingest_transactions, write_transactions, IngestOptions, Ingested, TransactionRecord, TransactionStream};
pub use level01::{aggregate_level01, read_level01, write_level01, DailyFeatureRow};
pub use level02::{aggregate_level02, column_moments, Level2Vector};
pub use normalize::{normalize_features, FeatureScale, NormalizationStats, SCALE_EPS};
pub use schema::{Aggregation, FeatureDef, FeatureSchema, DEFAULT_N_FEATURES};
pub use split::{assign_user, split_dataset, DatasetSplit, Part, SPLIT_FRACTIONS};
pub use windows::{build_windows, AnchorPolicy, WindowSample, WindowSet, WindowSpec, HORIZON_WEEKS, TAU};
