use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use super::{BehaviorConfig, Effective, State, N_STATES};
use crate::data::{Day, FeatureSchema, TransactionRecord, SECONDS_PER_DAY};
use crate::error::{config_err, Error, Result};
use crate::io;

/// Daily hidden states of every user, in user order.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub start: Day,
    pub users: Vec<(u64, Vec<State>)>,
}

impl GroundTruth {
    /// State of `user` on `day`, if the user and day are covered.
    pub fn state(&self, user: u64, day: Day) -> Option<State> {
        let i = self.users.binary_search_by_key(&user, |(u, _)| *u).ok()?;
        let d = usize::try_from(day.0 - self.start.0).ok()?;
        self.users[i].1.get(d).copied()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, |w| {
            writeln!(w, "user_id,date,state")?;
            for (user, states) in &self.users {
                for (d, s) in states.iter().enumerate() {
                    writeln!(w, "{},{},{}", user, self.start.offset(d as i32), s.name())?;
                }
            }
            Ok(())
        })
    }

    /// Reads a file written by [`GroundTruth::write`]; each user's days must
    /// be contiguous and share the same first day.
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {}", path.display(), e)))?;
        let bad = |m: String| Error::Malformed(format!("{}: {}", path.display(), m));
        let mut users: Vec<(u64, Vec<State>)> = Vec::new();
        let mut start: Option<Day> = None;
        for rec in reader.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if rec.len() != 3 {
                return Err(bad(format!("expected 3 columns, found {}", rec.len())));
            }
            let user: u64 = rec[0].parse().map_err(|e| bad(format!("{}", e)))?;
            let day: Day = rec[1].parse()?;
            let state = State::parse(&rec[2]).ok_or_else(|| bad(format!("unknown state {:?}", &rec[2])))?;
            if users.last().is_none_or(|(u, _)| *u != user) {
                users.push((user, Vec::new()));
            }
            let s0 = *start.get_or_insert(day);
            let states = &mut users.last_mut().unwrap().1;
            if day != s0.offset(states.len() as i32) {
                return Err(bad(format!("user {} has a gap or misordered date at {}", user, day)));
            }
            states.push(state);
        }
        Ok(GroundTruth { start: start.unwrap_or(Day(0)), users })
    }
}

/// Generated transactions with their hidden states and the configuration
/// that produced them (after any skew calibration).
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub config: BehaviorConfig,
    pub transactions: Vec<TransactionRecord>,
    pub truth: GroundTruth,
}

impl Synthetic {
    /// Writes `transactions.csv`, `ground_truth.csv` and `config.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        crate::data::write_transactions(&dir.join("transactions.csv"), &FeatureSchema::default(), &self.transactions)?;
        self.truth.write(&dir.join("ground_truth.csv"))?;
        self.config.save(&dir.join("config.json"))
    }
}

fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn user_rng(seed: u64, user: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, user))
}

fn draw_state(p: &[f64; N_STATES], u: f64) -> State {
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return State::ALL[i];
        }
    }
    State::ALL.into_iter().rev().find(|s| p[s.index()] > 0.0).unwrap_or(State::Churned)
}

/// Hidden state and activity flag for each day.
pub(crate) fn simulate_states(eff: &Effective, days: usize, rng: &mut ChaCha8Rng) -> (Vec<State>, Vec<bool>) {
    let mut states = Vec::with_capacity(days);
    let mut active = Vec::with_capacity(days);
    let mut s = draw_state(&eff.initial, rng.random());
    for d in 0..days {
        if d > 0 {
            s = draw_state(&eff.transitions[s.index()], rng.random());
        }
        states.push(s);
        active.push(rng.random::<f64>() < eff.activity[s.index()]);
    }
    (states, active)
}

/// Poisson draw conditioned on being at least one.
fn positive_poisson(mean: f64, rng: &mut ChaCha8Rng) -> u32 {
    let p = Poisson::new(mean).expect("validated positive rate");
    for _ in 0..1000 {
        let k = p.sample(rng) as u32;
        if k > 0 {
            return k;
        }
    }
    1
}

fn cents(log_mean: f64, sd: f64, rng: &mut ChaCha8Rng) -> i64 {
    let z: f64 = Normal::new(0.0, 1.0).unwrap().sample(rng);
    ((log_mean + sd * z).exp() * 100.0).round().max(1.0) as i64
}

const MATCHES_PER_DAY: u64 = 8;

/// Raw transactions of one user as `(ts, fields)` in time order.
fn emit_user(eff: &Effective, start: Day, states: &[State], active: &[bool], rng: &mut ChaCha8Rng) -> Vec<(i64, Vec<f64>)> {
    let mut out = Vec::new();
    let weights: Vec<WeightedIndex<f64>> = eff.emission.iter().map(|e| WeightedIndex::new(e.type_weights).unwrap()).collect();
    for (d, (&s, &on)) in states.iter().zip(active).enumerate() {
        if !on {
            continue;
        }
        let e = &eff.emission[s.index()];
        let day = start.offset(d as i32);
        let n = positive_poisson(eff.txn_rate[s.index()], rng);
        let sessions = 1 + Poisson::new(e.sessions - 1.0).map_or(0, |p| p.sample(rng) as u64);
        let mut secs: Vec<i64> = (0..n).map(|_| rng.random_range(0..SECONDS_PER_DAY)).collect();
        secs.sort_unstable();
        for sec in secs {
            let kind = weights[s.index()].sample(rng);
            let amount = cents(e.amount_log_mean[kind], e.amount_log_sd, rng);
            let mut c = [0i64; 4];
            c[kind] = amount;
            let match_id = if kind == 1 { (day.0 as u64) * 100 + rng.random_range(1..=MATCHES_PER_DAY) } else { 0 };
            let session = rng.random_range(1..=sessions);
            let promo = rng.random_bool(e.promo_prob) as u8;
            let delta = c[0] - c[1] + c[2] - c[3];
            let fields = vec![
                c[0] as f64 / 100.0,
                c[1] as f64 / 100.0,
                c[2] as f64 / 100.0,
                c[3] as f64 / 100.0,
                match_id as f64,
                session as f64,
                delta as f64 / 100.0,
                (kind == 2) as u8 as f64,
                promo as f64,
                1.0,
            ];
            out.push((day.start_timestamp() + sec, fields));
        }
    }
    out
}

/// Week-1 positive rate over eligible stride-7 windows of a pilot population,
/// using only simulated activity.
pub(crate) fn pilot_positive_rate(config: &BehaviorConfig, users: u64) -> f64 {
    let eff = config.effective();
    let days = config.days();
    let seed = mix(config.seed, 0xCA11_B8A7E);
    let (pos, n) = (0..users)
        .into_par_iter()
        .map(|u| {
            let (_, active) = simulate_states(&eff, days, &mut user_rng(seed, u));
            let (mut pos, mut n) = (0u64, 0u64);
            let mut t = 30;
            while t + 28 <= days {
                if active[t - 30..t].iter().any(|a| *a) {
                    n += 1;
                    pos += active[t..t + 7].iter().all(|a| !*a) as u64;
                }
                t += 7;
            }
            (pos, n)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if n == 0 {
        0.0
    } else {
        pos as f64 / n as f64
    }
}

const PILOT_USERS: u64 = 20_000;

fn with_hazard(config: &BehaviorConfig, h: f64) -> BehaviorConfig {
    let mut c = config.clone();
    let to_churn = c.transitions[0][2];
    c.transitions[0] = [1.0 - h - to_churn, h, to_churn];
    c
}

/// Solves for the engaged-to-lapsing hazard that gives the requested week-1
/// skew, by bisection on a fixed pilot population.
pub fn calibrate_skew(config: &BehaviorConfig, skew: f64) -> Result<BehaviorConfig> {
    let target = 1.0 / (1.0 + skew);
    if config.days() < 58 {
        return Err(config_err!("skew calibration needs at least 58 days to place a window, range has {}", config.days()));
    }
    let (mut lo, mut hi) = (0.0, 1.0 - config.transitions[0][2]);
    let (f_lo, f_hi) = (pilot_positive_rate(&with_hazard(config, lo), PILOT_USERS), pilot_positive_rate(&with_hazard(config, hi), PILOT_USERS));
    if !(f_lo <= target && target <= f_hi) {
        return Err(config_err!("target skew {}x (week-1 positive rate {:.4}) is outside the reachable range [{:.4}, {:.4}]", skew, target, f_lo, f_hi));
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if pilot_positive_rate(&with_hazard(config, mid), PILOT_USERS) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let h = 0.5 * (lo + hi);
    Ok(with_hazard(config, (h * 1e9).round() / 1e9))
}

/// Simulates every user's hidden chain and emits their transactions.
/// Users are numbered `1..=n_users`; transaction ids follow `(user, ts)` order.
pub fn generate(config: &BehaviorConfig) -> Result<Synthetic> {
    config.validate()?;
    let config = match config.target_skew {
        Some(k) => calibrate_skew(config, k)?,
        None => config.clone(),
    };
    let eff = config.effective();
    let days = config.days();
    let per_user: Vec<(u64, Vec<State>, Vec<(i64, Vec<f64>)>)> = (1..=config.n_users)
        .into_par_iter()
        .map(|u| {
            let mut rng = user_rng(config.seed, u);
            let (states, active) = simulate_states(&eff, days, &mut rng);
            let txns = emit_user(&eff, config.start, &states, &active, &mut rng);
            (u, states, txns)
        })
        .collect();
    let mut transactions = Vec::new();
    let mut users = Vec::with_capacity(per_user.len());
    for (u, states, txns) in per_user {
        for (ts, fields) in txns {
            transactions.push(TransactionRecord { txn_id: transactions.len() as u64 + 1, user_id: u, ts, fields });
        }
        users.push((u, states));
    }
    let truth = GroundTruth { start: config.start, users };
    Ok(Synthetic { config, transactions, truth })
}
