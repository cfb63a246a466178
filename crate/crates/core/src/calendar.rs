use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive range of calendar days.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::Invalid(format!("date range {start}..{end} is reversed")));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        (self.end - self.start).num_days() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, day: NaiveDate) -> bool {
        self.start <= day && day <= self.end
    }

    /// Zero-based position of `day`, if inside.
    pub fn offset(&self, day: NaiveDate) -> Option<usize> {
        self.contains(day).then(|| (day - self.start).num_days() as usize)
    }

    pub fn day(&self, offset: usize) -> NaiveDate {
        self.start + Duration::days(offset as i64)
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + Clone {
        let start = self.start;
        (0..self.len()).map(move |i| start + Duration::days(i as i64))
    }

    /// Calendar months touched by this range as (year, month) pairs.
    pub fn months(&self) -> Vec<(i32, u32)> {
        let mut out: Vec<(i32, u32)> = Vec::new();
        for d in self.days() {
            let key = (d.year(), d.month());
            if out.last() != Some(&key) {
                out.push(key);
            }
        }
        out
    }
}

impl std::fmt::Display for DateRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..={}", self.start, self.end)
    }
}

pub fn first_of_next_month(d: NaiveDate) -> NaiveDate {
    let (y, m) = if d.month() == 12 {
        (d.year() + 1, 1)
    } else {
        (d.year(), d.month() + 1)
    };
    NaiveDate::from_ymd_opt(y, m, 1).expect("valid month start")
}

/// Advances `d` by a whole number of half-months. Half-months run from the
/// 1st to the 15th and from the 16th to the month's end, so `d` must fall on
/// the 1st or the 16th.
pub fn add_half_months(d: NaiveDate, halves: u32) -> Result<NaiveDate> {
    if d.day() != 1 && d.day() != 16 {
        return Err(Error::Invalid(format!(
            "{d}: half-month arithmetic needs a date on the 1st or 16th"
        )));
    }
    let mut cur = d;
    for _ in 0..halves {
        cur = if cur.day() == 1 {
            cur.with_day(16).expect("16th exists")
        } else {
            first_of_next_month(cur)
        };
    }
    Ok(cur)
}
