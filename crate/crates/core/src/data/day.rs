use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Calendar day in UTC, counted from 1970-01-01.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Day(pub i32);

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()
}

impl Day {
    pub fn from_timestamp(ts: i64) -> Day {
        Day(ts.div_euclid(SECONDS_PER_DAY) as i32)
    }

    /// First second of the day.
    pub fn start_timestamp(self) -> i64 {
        self.0 as i64 * SECONDS_PER_DAY
    }

    pub fn offset(self, days: i32) -> Day {
        Day(self.0 + days)
    }

    pub fn from_date(date: NaiveDate) -> Day {
        Day((date - epoch()).num_days() as i32)
    }

    pub fn to_date(self) -> NaiveDate {
        epoch() + Duration::days(self.0 as i64)
    }
}

impl fmt::Display for Day {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_date().format("%Y-%m-%d"))
    }
}

impl FromStr for Day {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map(Day::from_date).map_err(|e| Error::Malformed(format!("bad date {:?}: {}", s, e)))
    }
}

impl Serialize for Day {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Day {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Half-open day interval `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: Day,
    pub end: Day,
}

impl DateRange {
    pub fn new(start: Day, end: Day) -> Self {
        DateRange { start, end }
    }

    pub fn days(&self) -> i32 {
        self.end.0 - self.start.0
    }

    pub fn contains(&self, day: Day) -> bool {
        day >= self.start && day < self.end
    }

    pub fn contains_timestamp(&self, ts: i64) -> bool {
        self.contains(Day::from_timestamp(ts))
    }
}
