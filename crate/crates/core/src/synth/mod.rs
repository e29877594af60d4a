//! Synthetic users following a hidden ENGAGED / LAPSING / CHURNED chain,
//! with a known churn propensity for calibrating what models can reach.

mod config;
mod generate;
mod oracle;

pub use config::{BehaviorConfig, Dynamics, Effective, Emission, State, N_STATES};
pub use generate::{calibrate_skew, generate, GroundTruth, Synthetic};
pub use oracle::{oracle_scores, verify_separability, OracleScorer};
