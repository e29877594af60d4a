use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DailyFeatureRow, DateRange, Day};
use crate::error::{config_err, Result};

pub const TAU: usize = 30;
pub const HORIZON_WEEKS: usize = 4;

/// One `(X, Y)` training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    pub user_id: u64,
    pub anchor_date: Day,
    /// `tau × n_features`, row-major; row `r` holds day `anchor_date - (tau - r)`.
    pub x: Vec<f64>,
    /// `y[w] = 1` iff the user is inactive on every day of week `w` after the anchor.
    pub y: [u8; HORIZON_WEEKS],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorPolicy {
    /// Every `stride` days from the first anchor with a full lookback, while
    /// the label horizon still fits in the range.
    Stride { stride: u32 },
    /// The same fixed dates for every user.
    Explicit { dates: Vec<Day> },
}

impl Default for AnchorPolicy {
    fn default() -> Self {
        AnchorPolicy::Stride { stride: 7 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub tau: usize,
    pub horizon_weeks: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { tau: TAU, horizon_weeks: HORIZON_WEEKS }
    }
}

#[derive(Clone, Debug, Default)]
pub struct WindowSet {
    pub samples: Vec<WindowSample>,
    /// Candidate windows whose lookback or horizon leaves the date range.
    pub skipped_edge: usize,
    /// Windows without a single active day in the lookback.
    pub skipped_ineligible: usize,
}

impl AnchorPolicy {
    fn anchors(&self, range: DateRange, spec: WindowSpec) -> Result<Vec<Day>> {
        match self {
            AnchorPolicy::Stride { stride } => {
                if *stride == 0 {
                    return Err(config_err!("anchor stride must be positive"));
                }
                let first = range.start.offset(spec.tau as i32);
                let horizon = 7 * spec.horizon_weeks as i32;
                Ok((0..).map(|k| first.offset(k * *stride as i32)).take_while(|t| t.offset(horizon) <= range.end).collect())
            }
            AnchorPolicy::Explicit { dates } => Ok(dates.clone()),
        }
    }
}

/// Cuts each user's daily rows into labelled windows. Output is sorted by
/// `(user_id, anchor_date)`.
pub fn build_windows(
    rows: &[DailyFeatureRow],
    n_features: usize,
    inactive: &[f64],
    range: DateRange,
    policy: &AnchorPolicy,
    spec: WindowSpec,
) -> Result<WindowSet> {
    if inactive.len() != n_features {
        return Err(config_err!("inactive value has {} entries for {} features", inactive.len(), n_features));
    }
    if let Some(r) = rows.iter().find(|r| r.features.len() != n_features) {
        return Err(config_err!("row for user {} on {} has {} features, expected {}", r.user_id, r.date, r.features.len(), n_features));
    }
    let anchors = policy.anchors(range, spec)?;
    let tau = spec.tau as i32;
    let horizon = 7 * spec.horizon_weeks as i32;

    let mut by_user: Vec<(u64, Vec<&DailyFeatureRow>)> = Vec::new();
    let mut sorted: Vec<&DailyFeatureRow> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.user_id, r.date));
    for r in sorted {
        match by_user.last_mut() {
            Some((u, v)) if *u == r.user_id => v.push(r),
            _ => by_user.push((r.user_id, vec![r])),
        }
    }

    let per_user: Vec<WindowSet> = by_user
        .par_iter()
        .map(|(user, days)| {
            let lookup: HashMap<Day, &DailyFeatureRow> = days.iter().filter(|r| r.n_txn > 0).map(|r| (r.date, *r)).collect();
            let mut set = WindowSet::default();
            for &t in &anchors {
                if t.offset(-tau) < range.start || t.offset(horizon) > range.end {
                    set.skipped_edge += 1;
                    continue;
                }
                if !(1..=tau).any(|k| lookup.contains_key(&t.offset(-k))) {
                    set.skipped_ineligible += 1;
                    continue;
                }
                let mut x = Vec::with_capacity(spec.tau * n_features);
                for r in 0..tau {
                    match lookup.get(&t.offset(r - tau)) {
                        Some(row) => x.extend_from_slice(&row.features),
                        None => x.extend_from_slice(inactive),
                    }
                }
                let mut y = [0u8; HORIZON_WEEKS];
                for (w, label) in y.iter_mut().enumerate().take(spec.horizon_weeks) {
                    let week = (7 * w as i32)..(7 * (w as i32 + 1));
                    *label = week.clone().all(|d| !lookup.contains_key(&t.offset(d))) as u8;
                }
                set.samples.push(WindowSample { user_id: *user, anchor_date: t, x, y });
            }
            set
        })
        .collect();

    let mut out = WindowSet::default();
    for s in per_user {
        out.samples.extend(s.samples);
        out.skipped_edge += s.skipped_edge;
        out.skipped_ineligible += s.skipped_ineligible;
    }
    Ok(out)
}
