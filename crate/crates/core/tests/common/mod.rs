//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use churnforge::data::{Aggregation, Day, FeatureSchema, TransactionRecord, WindowSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random transactions under the default schema. Each user stops at a random
/// day so that inactive weeks occur. Amounts are multiples of 1/4 so every
/// sum is exact regardless of summation order.
pub fn random_transactions(n: usize, users: u64, first_day: i32, days: i32, seed: u64) -> Vec<TransactionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last: Vec<i32> = (0..users).map(|_| rng.random_range(1..=days)).collect();
    (0..n)
        .map(|i| {
            let user = rng.random_range(0..users);
            let day = first_day + rng.random_range(0..last[user as usize]);
            let ts = day as i64 * 86_400 + rng.random_range(0..86_400);
            let q = |rng: &mut ChaCha8Rng, hi: u32| if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0..hi) as f64 / 4.0 };
            let fields = vec![
                q(&mut rng, 4000),
                q(&mut rng, 400),
                q(&mut rng, 4000),
                q(&mut rng, 4000),
                rng.random_range(0..6) as f64,
                rng.random_range(0..4) as f64,
                q(&mut rng, 4000) - 500.0,
                rng.random_range(0..2) as f64,
                rng.random_range(0..2) as f64,
                rng.random_range(0..2) as f64,
            ];
            TransactionRecord { txn_id: 1000 + i as u64, user_id: user * 7 + 3, ts, fields }
        })
        .collect()
}

/// Per-(user, day) features by grouping in file order and folding each rule
/// directly from its definition.
pub fn level01_oracle(txns: &[TransactionRecord], schema: &FeatureSchema) -> BTreeMap<(u64, Day), (Vec<f64>, u32)> {
    let mut groups: BTreeMap<(u64, Day), Vec<usize>> = BTreeMap::new();
    for (i, t) in txns.iter().enumerate() {
        groups.entry((t.user_id, Day((t.ts / 86_400) as i32))).or_default().push(i);
    }
    groups
        .into_iter()
        .map(|(key, idx)| {
            let feats = schema
                .features
                .iter()
                .map(|f| {
                    let k = schema.raw_fields.iter().position(|r| *r == f.field).unwrap();
                    let vals: Vec<f64> = idx.iter().map(|&i| txns[i].fields[k]).collect();
                    match f.rule {
                        Aggregation::Sum => vals.iter().sum(),
                        Aggregation::Count => vals.iter().filter(|v| **v != 0.0).count() as f64,
                        Aggregation::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
                        Aggregation::Max => vals.iter().cloned().fold(f64::MIN, f64::max),
                        Aggregation::Last => {
                            let mut best = idx[0];
                            for &i in &idx {
                                if txns[i].ts >= txns[best].ts {
                                    best = i;
                                }
                            }
                            txns[best].fields[k]
                        }
                        Aggregation::DistinctCount => {
                            let mut seen: Vec<f64> = Vec::new();
                            for v in vals {
                                if v != 0.0 && !seen.contains(&v) {
                                    seen.push(v);
                                }
                            }
                            seen.len() as f64
                        }
                    }
                })
                .collect();
            (key, (feats, idx.len() as u32))
        })
        .collect()
}

/// Labels from a scan over raw transactions.
pub fn label_oracle(txns: &[TransactionRecord], user: u64, anchor: Day) -> [u8; 4] {
    let mut y = [1u8; 4];
    for t in txns.iter().filter(|t| t.user_id == user) {
        let d = (t.ts.div_euclid(86_400)) as i32 - anchor.0;
        if (0..28).contains(&d) {
            y[(d / 7) as usize] = 0;
        }
    }
    y
}

/// Two-pass column mean and population standard deviation.
pub fn two_pass_moments(x: &[f64], n_features: usize) -> Vec<f64> {
    let rows = x.len() / n_features;
    let mut g = Vec::new();
    for j in 0..n_features {
        let col: Vec<f64> = (0..rows).map(|r| x[r * n_features + j]).collect();
        let mean = col.iter().sum::<f64>() / rows as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / rows as f64;
        g.push(mean);
        g.push(var.sqrt());
    }
    g
}

/// Distinct users of a sample list.
pub fn users(samples: &[WindowSample]) -> BTreeSet<u64> {
    samples.iter().map(|s| s.user_id).collect()
}

/// Probability a random positive outscores a random negative, ties counted ½.
pub fn mann_whitney(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / pairs
}
