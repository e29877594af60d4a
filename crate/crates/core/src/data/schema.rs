use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub const DEFAULT_N_FEATURES: usize = 11;

/// How one daily feature is folded from that day's transactions.
///
/// For `Count` and `DistinctCount` a raw value of zero means "absent".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Sum,
    Count,
    Mean,
    Max,
    Last,
    DistinctCount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub rule: Aggregation,
    /// Raw field the rule reads.
    pub field: String,
    #[serde(default)]
    pub units: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    /// Raw per-transaction value columns, in file order after `txn_id,user_id,ts`.
    pub raw_fields: Vec<String>,
    pub features: Vec<FeatureDef>,
    /// Feature vector of a day without transactions; zeros when absent.
    #[serde(default)]
    pub inactive_value: Option<Vec<f64>>,
}

fn def(name: &str, rule: Aggregation, field: &str, units: &str) -> FeatureDef {
    FeatureDef { name: name.into(), rule, field: field.into(), units: units.into() }
}

impl Default for FeatureSchema {
    fn default() -> Self {
        use Aggregation::*;
        let raw = ["deposit", "entry_fee", "winnings", "withdrawal", "match_id", "session_id", "balance_delta", "win_flag", "promo", "login"];
        FeatureSchema {
            raw_fields: raw.iter().map(|s| s.to_string()).collect(),
            features: vec![
                def("deposit_sum", Sum, "deposit", "currency"),
                def("entry_fee_sum", Sum, "entry_fee", "currency"),
                def("winnings_sum", Sum, "winnings", "currency"),
                def("withdrawal_sum", Sum, "withdrawal", "currency"),
                def("contest_entry_count", Count, "entry_fee", "contests"),
                def("distinct_match_count", DistinctCount, "match_id", "matches"),
                def("session_count", DistinctCount, "session_id", "sessions"),
                def("net_balance_delta", Sum, "balance_delta", "currency"),
                def("win_rate", Mean, "win_flag", "fraction"),
                def("promo_txn_count", Count, "promo", "transactions"),
                def("active_flag", Max, "login", "flag"),
            ],
            inactive_value: None,
        }
    }
}

impl FeatureSchema {
    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn inactive_row(&self) -> Vec<f64> {
        self.inactive_value.clone().unwrap_or_else(|| vec![0.0; self.features.len()])
    }

    /// Index of every feature's source field within `raw_fields`.
    pub fn field_indices(&self) -> Result<Vec<usize>> {
        self.features
            .iter()
            .map(|f| {
                self.raw_fields
                    .iter()
                    .position(|r| *r == f.field)
                    .ok_or_else(|| Error::Schema(format!("feature {:?} reads unknown raw field {:?}", f.name, f.field)))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("schema declares no features".into()));
        }
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(&f.name) {
                return Err(Error::Schema(format!("duplicate feature name {:?}", f.name)));
            }
        }
        let mut raw = HashSet::new();
        for r in &self.raw_fields {
            if !raw.insert(r) || ["txn_id", "user_id", "ts"].contains(&r.as_str()) {
                return Err(Error::Schema(format!("invalid or duplicate raw field {:?}", r)));
            }
        }
        if let Some(v) = &self.inactive_value {
            if v.len() != self.features.len() {
                return Err(Error::Schema(format!("inactive value has {} entries for {} features", v.len(), self.features.len())));
            }
        }
        self.field_indices().map(|_| ())
    }

    /// Expected CSV header of a transactions file.
    pub fn transaction_header(&self) -> Vec<String> {
        let mut h = vec!["txn_id".to_string(), "user_id".into(), "ts".into()];
        h.extend(self.raw_fields.iter().cloned());
        h
    }

    pub fn load(path: &Path) -> Result<Self> {
        let schema: FeatureSchema = io::read_json(path)?;
        schema.validate()?;
        Ok(schema)
    }
}
