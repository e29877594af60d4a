use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::WindowSample;
use crate::error::{config_err, Result};

pub const SPLIT_FRACTIONS: [f64; 3] = [0.75, 0.05, 0.20];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Train,
    Validation,
    Test,
}

/// Windows partitioned by user.
#[derive(Clone, Debug, Default)]
pub struct DatasetSplit {
    pub train: Vec<WindowSample>,
    pub validation: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
    pub seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Part a user falls into for a given seed.
pub fn assign_user(user_id: u64, seed: u64) -> Part {
    let u = (splitmix64(user_id ^ splitmix64(seed)) >> 11) as f64 / (1u64 << 53) as f64;
    if u < SPLIT_FRACTIONS[0] {
        Part::Train
    } else if u < SPLIT_FRACTIONS[0] + SPLIT_FRACTIONS[1] {
        Part::Validation
    } else {
        Part::Test
    }
}

pub fn split_dataset(samples: Vec<WindowSample>, seed: u64) -> Result<DatasetSplit> {
    let users: BTreeSet<u64> = samples.iter().map(|s| s.user_id).collect();
    if users.len() < 3 {
        return Err(config_err!("splitting needs at least 3 distinct users, found {}", users.len()));
    }
    let mut split = DatasetSplit { seed, ..Default::default() };
    for s in samples {
        match assign_user(s.user_id, seed) {
            Part::Train => split.train.push(s),
            Part::Validation => split.validation.push(s),
            Part::Test => split.test.push(s),
        }
    }
    Ok(split)
}

impl DatasetSplit {
    pub fn part(&self, part: Part) -> &[WindowSample] {
        match part {
            Part::Train => &self.train,
            Part::Validation => &self.validation,
            Part::Test => &self.test,
        }
    }
}
