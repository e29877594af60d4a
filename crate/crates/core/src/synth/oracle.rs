use super::{generate, BehaviorConfig, Effective, GroundTruth, State, N_STATES};
use crate::data::{aggregate_level01, build_windows, AnchorPolicy, FeatureSchema, WindowSample, WindowSpec, HORIZON_WEEKS};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_scores, EvalReport, Scorer};

/// Exact probability of a fully inactive week `w` after the anchor, given the
/// hidden state on the day before the anchor.
pub fn oracle_scores(eff: &Effective, prev: State) -> [f64; HORIZON_WEEKS] {
    let step = |p: &[f64; N_STATES]| {
        let mut q = [0.0; N_STATES];
        for i in 0..N_STATES {
            for j in 0..N_STATES {
                q[j] += p[i] * eff.transitions[i][j];
            }
        }
        q
    };
    let mut out = [0.0; HORIZON_WEEKS];
    let mut dist = [0.0; N_STATES];
    dist[prev.index()] = 1.0;
    for score in out.iter_mut() {
        let mut alive = dist;
        for _ in 0..7 {
            alive = step(&alive);
            for (s, a) in alive.iter_mut().enumerate() {
                *a *= 1.0 - eff.activity[s];
            }
            dist = step(&dist);
        }
        *score = alive.iter().sum();
    }
    out
}

/// Scores windows with the oracle propensity of their hidden state.
pub struct OracleScorer {
    table: [[f64; HORIZON_WEEKS]; N_STATES],
    truth: GroundTruth,
}

impl OracleScorer {
    pub fn new(config: &BehaviorConfig, truth: GroundTruth) -> Self {
        let eff = config.effective();
        OracleScorer { table: State::ALL.map(|s| oracle_scores(&eff, s)), truth }
    }
}

impl Scorer for OracleScorer {
    fn predict(&self, samples: &[WindowSample]) -> Result<Vec<[f64; HORIZON_WEEKS]>> {
        samples
            .iter()
            .map(|s| {
                let day = s.anchor_date.offset(-1);
                self.truth
                    .state(s.user_id, day)
                    .map(|st| self.table[st.index()])
                    .ok_or_else(|| Error::Config(format!("ground truth has no state for user {} on {}", s.user_id, day)))
            })
            .collect()
    }
}

/// Generates `n_users` users under `config` and reports the per-week AUC of
/// the oracle score against the labels the pipeline derives.
pub fn verify_separability(config: &BehaviorConfig, n_users: u64) -> Result<EvalReport> {
    let config = BehaviorConfig { n_users, ..config.clone() };
    let synth = generate(&config)?;
    let schema = FeatureSchema::default();
    let rows = aggregate_level01(&synth.transactions, &schema)?;
    let set = build_windows(&rows, schema.n_features(), &schema.inactive_row(), config.range(), &AnchorPolicy::default(), WindowSpec::default())?;
    let scorer = OracleScorer::new(&synth.config, synth.truth);
    let scores = scorer.predict(&set.samples)?;
    let labels: Vec<[u8; HORIZON_WEEKS]> = set.samples.iter().map(|s| s.y).collect();
    evaluate_scores(&scores, &labels)
}
