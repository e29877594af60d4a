use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DateRange, Day};
use crate::error::{config_err, Result};
use crate::io;

pub const N_STATES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum State {
    Engaged = 0,
    Lapsing = 1,
    Churned = 2,
}

impl State {
    pub const ALL: [State; N_STATES] = [State::Engaged, State::Lapsing, State::Churned];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            State::Engaged => "ENGAGED",
            State::Lapsing => "LAPSING",
            State::Churned => "CHURNED",
        }
    }

    pub fn parse(s: &str) -> Option<State> {
        State::ALL.into_iter().find(|st| st.name() == s)
    }
}

/// How pre-churn behaviour shows up in the data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    /// Lapsing users are less active and transact differently.
    #[default]
    Level,
    /// Lapsing users burst with the same transaction mix before falling
    /// silent, so window averages barely move and only the timing carries
    /// the signal.
    Temporal,
}

/// Distribution of one state's transactions on an active day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Emission {
    /// Relative weights of deposit, contest entry, winnings and withdrawal.
    pub type_weights: [f64; 4],
    /// Log-scale mean amount per transaction type.
    pub amount_log_mean: [f64; 4],
    pub amount_log_sd: f64,
    pub promo_prob: f64,
    /// Mean sessions on an active day.
    pub sessions: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorConfig {
    pub n_users: u64,
    pub start: Day,
    /// Exclusive.
    pub end: Day,
    pub initial: [f64; N_STATES],
    /// Row-stochastic daily transition matrix.
    pub transitions: [[f64; N_STATES]; N_STATES],
    /// Probability that a user in each state transacts on a given day.
    pub activity: [f64; N_STATES],
    /// Poisson mean of the transaction count on active days.
    pub txn_rate: [f64; N_STATES],
    pub emission: [Emission; N_STATES],
    /// Blend from no signal (0) to fully distinct lapsing behaviour (1).
    pub signal_strength: f64,
    /// Desired negative:positive ratio of week-1 labels. When set, the
    /// engaged-to-lapsing hazard is recalibrated before generation.
    #[serde(default)]
    pub target_skew: Option<f64>,
    #[serde(default)]
    pub dynamics: Dynamics,
    pub seed: u64,
}

fn engaged() -> Emission {
    Emission { type_weights: [0.2, 0.5, 0.2, 0.1], amount_log_mean: [6.2, 3.9, 5.0, 6.0], amount_log_sd: 0.8, promo_prob: 0.05, sessions: 3.0 }
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        let start: Day = "2023-01-01".parse().unwrap();
        BehaviorConfig {
            n_users: 10_000,
            start,
            end: start.offset(86),
            initial: [0.9, 0.1, 0.0],
            transitions: [[0.985, 0.015, 0.0], [0.05, 0.85, 0.10], [0.0, 0.0, 1.0]],
            activity: [0.6, 0.25, 0.0],
            txn_rate: [3.0, 1.5, 0.0],
            emission: [
                engaged(),
                Emission { type_weights: [0.1, 0.3, 0.1, 0.5], amount_log_mean: [5.0, 3.0, 4.0, 6.5], amount_log_sd: 0.8, promo_prob: 0.3, sessions: 1.2 },
                engaged(),
            ],
            signal_strength: 1.0,
            target_skew: None,
            dynamics: Dynamics::Level,
            seed: 0,
        }
    }
}

impl BehaviorConfig {
    /// Preset whose lapse signal lives in the shape of the activity series:
    /// a burst of activity followed by silence.
    pub fn temporal() -> Self {
        let base = BehaviorConfig::default();
        BehaviorConfig {
            initial: [0.95, 0.05, 0.0],
            transitions: [[0.985, 0.015, 0.0], [0.0, 0.7, 0.3], [0.0, 0.0, 1.0]],
            activity: [0.5, 0.95, 0.0],
            txn_rate: [2.0, 2.0, 0.0],
            emission: [engaged(), engaged(), engaged()],
            dynamics: Dynamics::Temporal,
            ..base
        }
    }

    pub fn range(&self) -> DateRange {
        DateRange::new(self.start, self.end)
    }

    pub fn days(&self) -> usize {
        self.range().days().max(0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 {
            return Err(config_err!("n_users must be positive"));
        }
        if self.end <= self.start {
            return Err(config_err!("date range {}..{} is empty", self.start, self.end));
        }
        let stochastic = |row: &[f64]| row.iter().all(|p| p.is_finite() && *p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if !stochastic(&self.initial) {
            return Err(config_err!("initial state distribution {:?} must be nonnegative and sum to 1", self.initial));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            if !stochastic(row) {
                return Err(config_err!("transition row {} {:?} must be nonnegative and sum to 1", State::ALL[i].name(), row));
            }
        }
        if self.transitions[2] != [0.0, 0.0, 1.0] {
            return Err(config_err!("CHURNED must be absorbing, found row {:?}", self.transitions[2]));
        }
        if self.activity[2] != 0.0 {
            return Err(config_err!("CHURNED activity must be 0, found {}", self.activity[2]));
        }
        if self.activity.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(config_err!("activity rates {:?} must lie in [0, 1]", self.activity));
        }
        for (s, (&a, &r)) in self.activity.iter().zip(&self.txn_rate).enumerate() {
            if a > 0.0 && !(r > 0.0 && r.is_finite()) {
                return Err(config_err!("{} transaction rate must be positive, found {}", State::ALL[s].name(), r));
            }
        }
        for e in &self.emission {
            if e.type_weights.iter().any(|w| *w < 0.0 || !w.is_finite()) || e.type_weights.iter().sum::<f64>() <= 0.0 {
                return Err(config_err!("transaction type weights {:?} are invalid", e.type_weights));
            }
            if !(e.amount_log_sd >= 0.0) || !(0.0..=1.0).contains(&e.promo_prob) || !(e.sessions >= 1.0) || e.amount_log_mean.iter().any(|m| !m.is_finite()) {
                return Err(config_err!("invalid emission parameters {:?}", e));
            }
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return Err(config_err!("signal_strength {} must lie in [0, 1]", self.signal_strength));
        }
        if let Some(k) = self.target_skew {
            if !(k > 0.0 && k.is_finite()) {
                return Err(config_err!("target_skew {} must be positive", k));
            }
        }
        Ok(())
    }

    /// Parameters actually simulated once `signal_strength` is applied:
    /// lapsing behaviour is blended toward engaged behaviour and the
    /// non-absorbing transition rows toward staying put.
    pub fn effective(&self) -> Effective {
        let s = self.signal_strength;
        let lerp = |a: f64, b: f64| a + s * (b - a);
        let mut transitions = self.transitions;
        for (i, row) in transitions.iter_mut().enumerate().take(2) {
            for (j, p) in row.iter_mut().enumerate() {
                *p = s * *p + (1.0 - s) * (i == j) as u8 as f64;
            }
        }
        let (e, l) = (&self.emission[0], &self.emission[1]);
        let mut lapsing = e.clone();
        for k in 0..4 {
            lapsing.type_weights[k] = lerp(e.type_weights[k], l.type_weights[k]);
            lapsing.amount_log_mean[k] = lerp(e.amount_log_mean[k], l.amount_log_mean[k]);
        }
        lapsing.amount_log_sd = lerp(e.amount_log_sd, l.amount_log_sd);
        lapsing.promo_prob = lerp(e.promo_prob, l.promo_prob);
        lapsing.sessions = lerp(e.sessions, l.sessions);
        Effective {
            initial: self.initial,
            transitions,
            activity: [self.activity[0], lerp(self.activity[0], self.activity[1]), 0.0],
            txn_rate: [self.txn_rate[0], lerp(self.txn_rate[0], self.txn_rate[1]), 0.0],
            emission: [e.clone(), lapsing, self.emission[2].clone()],
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: BehaviorConfig = io::read_json(path)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Effective {
    pub initial: [f64; N_STATES],
    pub transitions: [[f64; N_STATES]; N_STATES],
    pub activity: [f64; N_STATES],
    pub txn_rate: [f64; N_STATES],
    pub emission: [Emission; N_STATES],
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        BehaviorConfig::default().validate().unwrap();
        BehaviorConfig::temporal().validate().unwrap();
    }

    #[test]
    fn invalid_matrices_rejected() {
        let mut c = BehaviorConfig::default();
        c.transitions[0] = [0.5, 0.4, 0.0];
        assert!(c.validate().is_err());
        let mut c = BehaviorConfig::default();
        c.transitions[2] = [0.1, 0.0, 0.9];
        assert!(c.validate().is_err());
        let mut c = BehaviorConfig::default();
        c.activity[2] = 0.1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_signal_makes_lapsing_look_engaged() {
        let c = BehaviorConfig { signal_strength: 0.0, ..Default::default() };
        let e = c.effective();
        assert_eq!(e.activity[0], e.activity[1]);
        assert_eq!(e.emission[0], e.emission[1]);
        assert_eq!(e.transitions[0], [1.0, 0.0, 0.0]);
        assert_eq!(e.transitions[1], [0.0, 1.0, 0.0]);
    }

    #[test]
    fn json_roundtrip() {
        let c = BehaviorConfig::temporal();
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"start\":\"2023-01-01\""));
        assert_eq!(serde_json::from_str::<BehaviorConfig>(&text).unwrap(), c);
    }
}
