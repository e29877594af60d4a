use std::path::Path;

use churnforge::classical::ClassicalConfig;
use churnforge::classical::ClassicalKind;
use churnforge::data::{AnchorPolicy, Day, FeatureSchema};
use churnforge::deep::{ArchitectureConfig, Preset};
use churnforge::synth::BehaviorConfig;
use churnforge::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSettings {
    pub schema: FeatureSchema,
    /// First day of the data range; inferred when unset.
    pub start: Option<Day>,
    /// Exclusive last day of the data range; inferred when unset.
    pub end: Option<Day>,
    pub anchors: AnchorPolicy,
    pub max_malformed_fraction: f64,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        FeatureSettings { schema: FeatureSchema::default(), start: None, end: None, anchors: AnchorPolicy::default(), max_malformed_fraction: 0.01 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    /// A deep architecture name or one of `lr`, `rf`, `gbt`.
    pub kind: String,
    pub preset: Preset,
    pub dropout: Option<f64>,
    /// Full architecture override; `kind` and `preset` are ignored when set.
    pub architecture: Option<ArchitectureConfig>,
    pub classical: ClassicalConfig,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            kind: "transformer".into(),
            preset: Preset::Desk,
            dropout: None,
            architecture: None,
            classical: ClassicalConfig::new(ClassicalKind::Gbt),
        }
    }
}

/// Settings of one invocation: built-in defaults, then the config file,
/// then command-line flags. The top-level seed and worker count are copied
/// into every section before any work starts.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub workers: usize,
    pub synth: BehaviorConfig,
    pub features: FeatureSettings,
    pub model: ModelSettings,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            seed: 0,
            workers: 1,
            synth: BehaviorConfig::default(),
            features: FeatureSettings::default(),
            model: ModelSettings::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {}", path.display(), e)))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {}", path.display(), e)))
    }

    /// Propagates the global settings into the sections and checks them.
    pub fn resolve(&mut self) -> Result<(), CliError> {
        if self.workers == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        self.synth.seed = self.seed;
        self.model.classical.seed = self.seed;
        self.train.seed = self.seed;
        self.train.workers = self.workers;
        self.train.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 9, "train": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch, TrainConfig::default().batch);
        assert_eq!(c.model.kind, "transformer");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sede": 1}"#).is_err());
    }

    #[test]
    fn resolve_copies_the_seed_everywhere() {
        let mut c = RunConfig { seed: 5, workers: 2, ..Default::default() };
        c.resolve().unwrap();
        assert_eq!((c.synth.seed, c.model.classical.seed, c.train.seed, c.train.workers), (5, 5, 5, 2));
    }
}
