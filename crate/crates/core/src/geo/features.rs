use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::neighbors::{NeighborSet, LAYOUT_ROWS};
use crate::error::{Error, Result};

/// Daily values of several channels for one tract, starting at `start`.
#[derive(Clone, Debug, PartialEq)]
pub struct TractSeries {
    pub start: NaiveDate,
    /// `values[channel][day offset]`
    pub values: Vec<Vec<f64>>,
}

impl TractSeries {
    pub fn get(&self, channel: usize, day: NaiveDate) -> Option<f64> {
        let offset = (day - self.start).num_days();
        if offset < 0 {
            return None;
        }
        self.values.get(channel)?.get(offset as usize).copied()
    }
}

/// Per-tract channel series keyed by tract id, with a shared channel list.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeriesSet {
    pub channels: Vec<String>,
    pub tracts: BTreeMap<String, TractSeries>,
}

/// A target tract's look-back window laid out over the neighbour rows.
///
/// Values are stored row-major as `[row][day][channel]`, which is also the
/// H×W×C layout the convolution consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    pub target_tract: String,
    pub target_day: NaiveDate,
    pub days: usize,
    pub channel_names: Vec<String>,
    pub pad_mask: [bool; LAYOUT_ROWS],
    pub values: Vec<f64>,
}

impl FeatureTensor {
    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn shape(&self) -> [usize; 3] {
        [LAYOUT_ROWS, self.days, self.channels()]
    }

    #[inline]
    pub fn index(&self, row: usize, day: usize, channel: usize) -> usize {
        (row * self.days + day) * self.channels() + channel
    }

    pub fn get(&self, row: usize, day: usize, channel: usize) -> f64 {
        self.values[self.index(row, day, channel)]
    }
}

/// Fills row `r`, column `d`, channel `c` with the value of channel `c` for
/// the tract at row `r` on day `target_day - days + d`. Padded rows are zero.
pub fn layout_feature_map(
    set: &NeighborSet,
    series: &SeriesSet,
    target_day: NaiveDate,
    days: usize,
) -> Result<FeatureTensor> {
    let channels = series.channels.len();
    let mut values = vec![0.0; LAYOUT_ROWS * days * channels];
    let first = target_day - Duration::days(days as i64);
    for row in 0..LAYOUT_ROWS {
        let Some(tract) = set.tract_at(row) else {
            continue;
        };
        let ts = series
            .tracts
            .get(tract)
            .ok_or_else(|| Error::UnknownTract(tract.to_string()))?;
        for d in 0..days {
            let day = first + Duration::days(d as i64);
            let base = (row * days + d) * channels;
            for c in 0..channels {
                values[base + c] = ts.get(c, day).ok_or_else(|| Error::MissingDate {
                    tract: tract.to_string(),
                    date: day,
                })?;
            }
        }
    }
    Ok(FeatureTensor {
        target_tract: set.target.clone(),
        target_day,
        days,
        channel_names: series.channels.clone(),
        pad_mask: set.pad_mask(),
        values,
    })
}

/// sin/cos encoding of the weekday (Monday = 0).
pub fn day_of_week_encoding(day: NaiveDate) -> (f64, f64) {
    let d = day.weekday().num_days_from_monday() as f64;
    let angle = 2.0 * PI * d / 7.0;
    (angle.sin(), angle.cos())
}

/// Per-channel affine z-score fitted on training tensors only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub channels: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Fits over the non-padded cells of `tensors`. Channels with zero
    /// variance get the identity transform.
    pub fn fit<'a, I>(tensors: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a FeatureTensor>,
    {
        let mut it = tensors.into_iter().peekable();
        let Some(first) = it.peek() else {
            return Err(Error::Invalid("cannot fit a normalizer on no tensors".into()));
        };
        let channels = first.channel_names.clone();
        let c = channels.len();
        let mut count = 0usize;
        let mut sum = vec![0.0; c];
        let mut tensors_seen = Vec::new();
        for t in it {
            if t.channel_names != channels {
                return Err(Error::shape("Normalizer::fit", "inconsistent channel lists"));
            }
            for row in (0..LAYOUT_ROWS).filter(|&r| !t.pad_mask[r]) {
                for d in 0..t.days {
                    let base = t.index(row, d, 0);
                    for (s, v) in sum.iter_mut().zip(&t.values[base..base + c]) {
                        *s += v;
                    }
                    count += 1;
                }
            }
            tensors_seen.push(t);
        }
        let n = count.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut sq = vec![0.0; c];
        for t in tensors_seen {
            for row in (0..LAYOUT_ROWS).filter(|&r| !t.pad_mask[r]) {
                for d in 0..t.days {
                    let base = t.index(row, d, 0);
                    for ch in 0..c {
                        let dv = t.values[base + ch] - mean[ch];
                        sq[ch] += dv * dv;
                    }
                }
            }
        }
        let mut shift = mean;
        let mut std: Vec<f64> = sq.iter().map(|s| (s / n).sqrt()).collect();
        for ch in 0..c {
            if !(std[ch] > 1e-12) {
                shift[ch] = 0.0;
                std[ch] = 1.0;
            }
        }
        Ok(Self {
            channels,
            mean: shift,
            std,
        })
    }

    pub fn apply_value(&self, channel: usize, x: f64) -> f64 {
        (x - self.mean[channel]) / self.std[channel]
    }

    /// Normalises the non-padded rows in place; padded rows stay zero.
    pub fn apply(&self, t: &mut FeatureTensor) -> Result<()> {
        if t.channel_names != self.channels {
            return Err(Error::shape(
                "Normalizer::apply",
                format!("tensor channels {:?} vs {:?}", t.channel_names, self.channels),
            ));
        }
        let c = self.channels.len();
        for row in (0..LAYOUT_ROWS).filter(|&r| !t.pad_mask[r]) {
            for d in 0..t.days {
                let base = t.index(row, d, 0);
                for ch in 0..c {
                    let v = &mut t.values[base + ch];
                    *v = (*v - self.mean[ch]) / self.std[ch];
                }
            }
        }
        Ok(())
    }
}
