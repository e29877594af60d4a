//! End-to-end glue: transactions to normalized splits, and a single handle
//! over classical and deep models for scoring and persistence.

use std::path::Path;

use crate::classical::{ClassicalModel, CLASSICAL_FORMAT};
use crate::data::{
    aggregate_level01, build_windows, split_dataset, AnchorPolicy, DailyFeatureRow, DatasetSplit, DateRange, Day, FeatureSchema, NormalizationStats,
    TransactionRecord, WindowSample, WindowSpec, HORIZON_WEEKS,
};
use crate::deep::{checkpoint_from_bytes, save_checkpoint, DeepModel, CHECKPOINT_MAGIC};
use crate::error::{Error, Result};
use crate::metrics::Scorer;

/// Everything derived from one transaction set.
#[derive(Clone, Debug)]
pub struct Featurized {
    pub level01: Vec<DailyFeatureRow>,
    /// Raw windows split by user.
    pub split: DatasetSplit,
    /// Standardization fitted on the training part.
    pub stats: NormalizationStats,
    pub skipped_edge: usize,
    pub skipped_ineligible: usize,
}

/// Level-01 aggregation, windowing, user split and the fit of the
/// standardization (which is not applied).
pub fn featurize(transactions: &[TransactionRecord], schema: &FeatureSchema, range: DateRange, policy: &AnchorPolicy, seed: u64) -> Result<Featurized> {
    let level01 = aggregate_level01(transactions, schema)?;
    let set = build_windows(&level01, schema.n_features(), &schema.inactive_row(), range, policy, WindowSpec::default())?;
    let split = split_dataset(set.samples, seed)?;
    let stats = NormalizationStats::fit(&split.train, &schema.feature_names())?;
    Ok(Featurized { level01, split, stats, skipped_edge: set.skipped_edge, skipped_ineligible: set.skipped_ineligible })
}

impl Featurized {
    /// The split standardized with the training statistics.
    pub fn normalized(&self) -> DatasetSplit {
        let mut split = self.split.clone();
        self.stats.apply_all(&mut split.train);
        self.stats.apply_all(&mut split.validation);
        self.stats.apply_all(&mut split.test);
        split
    }
}

/// Day range spanned by a transaction set, end exclusive.
pub fn observed_range(transactions: &[TransactionRecord]) -> Option<DateRange> {
    let lo = transactions.iter().map(|t| t.ts).min()?;
    let hi = transactions.iter().map(|t| t.ts).max()?;
    Some(DateRange::new(Day::from_timestamp(lo), Day::from_timestamp(hi).offset(1)))
}

/// A trained model of either family.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Classical(ClassicalModel),
    Deep(DeepModel),
}

impl AnyModel {
    pub fn name(&self) -> String {
        match self {
            AnyModel::Classical(m) => m.kind.name().to_string(),
            AnyModel::Deep(m) => m.config().kind.name().to_string(),
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            AnyModel::Classical(m) => m.n_features,
            AnyModel::Deep(m) => m.config().n_features,
        }
    }

    /// Window length the model expects, when it fixes one.
    pub fn tau(&self) -> Option<usize> {
        match self {
            AnyModel::Classical(_) => None,
            AnyModel::Deep(m) => Some(m.config().tau),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            AnyModel::Classical(m) => m.save(path),
            AnyModel::Deep(m) => save_checkpoint(m, path),
        }
    }

    /// Loads a deep checkpoint or a classical JSON model, told apart by
    /// their leading bytes.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(CHECKPOINT_MAGIC) {
            return checkpoint_from_bytes(&bytes).map(AnyModel::Deep).map_err(|e| Error::Format(format!("{}: {}", path.display(), e)));
        }
        if bytes.first().is_some_and(|b| *b == b'{') && std::str::from_utf8(&bytes).is_ok_and(|s| s.contains(CLASSICAL_FORMAT)) {
            return ClassicalModel::load(path).map(AnyModel::Classical);
        }
        Err(Error::Format(format!("{}: neither a model checkpoint nor a classical model", path.display())))
    }
}

impl Scorer for AnyModel {
    fn predict(&self, samples: &[WindowSample]) -> Result<Vec<[f64; HORIZON_WEEKS]>> {
        match self {
            AnyModel::Classical(m) => m.predict(samples),
            AnyModel::Deep(m) => m.predict(samples),
        }
    }
}
