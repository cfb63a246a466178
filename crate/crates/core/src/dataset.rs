//! Assembles per-day model inputs from loaded city data.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};

use crate::calendar::DateRange;
use crate::error::{Error, Result};
use crate::geo::{
    build_neighbor_map, day_of_week_encoding, layout_feature_map, FeatureTensor, GroupShares, NeighborMap, Normalizer,
    SeriesSet, TractGraph, TractSeries,
};
use crate::ingest::{CrimeSeries, DeterminantTable, MobilityFeature, MobilityFeatures};
use crate::model::{DeterminantScaler, GateInputMap, Model, Prediction, CRIME_CHANNEL, DOW_CHANNELS};

/// Everything loaded for one city and one crime type.
#[derive(Clone, Debug)]
pub struct CityData {
    pub graph: TractGraph,
    pub range: DateRange,
    pub crimes: CrimeSeries,
    pub mobility: MobilityFeatures,
    pub determinants: DeterminantTable,
}

impl CityData {
    pub fn validate(&self) -> Result<()> {
        let ids = self.graph.city_ids();
        if self.crimes.tract_ids != ids || self.mobility.tract_ids != ids {
            return Err(Error::Invalid("crime and mobility series must cover the in-city tracts in graph order".into()));
        }
        if self.crimes.range != self.range || self.mobility.range != self.range {
            return Err(Error::Invalid(format!(
                "series ranges {} / {} differ from the study period {}",
                self.crimes.range, self.mobility.range, self.range
            )));
        }
        self.determinants.validate()
    }
}

/// Model-ready view of a city: neighbour layouts, channel series, fitted
/// normalisation and gate maps, in in-city tract order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub range: DateRange,
    pub days: usize,
    pub tract_ids: Vec<String>,
    pub populations: Vec<f64>,
    pub shares: Vec<GroupShares>,
    pub neighbors: NeighborMap,
    pub series: SeriesSet,
    pub normalizer: Normalizer,
    pub scaler: Option<DeterminantScaler>,
    pub gates: Option<Vec<GateInputMap>>,
    targets: Vec<Vec<u32>>,
}

fn channel_series(city: &CityData, channels: &[String]) -> Result<SeriesSet> {
    let n_days = city.range.len();
    let dow: Vec<(f64, f64)> = city.range.days().map(day_of_week_encoding).collect();
    let mut tracts = BTreeMap::new();
    for (ti, id) in city.crimes.tract_ids.iter().enumerate() {
        let mut values = Vec::with_capacity(channels.len());
        for ch in channels {
            let v: Vec<f64> = if ch == CRIME_CHANNEL {
                city.crimes.counts[ti].iter().map(|&c| c as f64).collect()
            } else if ch == DOW_CHANNELS[0] {
                dow.iter().map(|d| d.0).collect()
            } else if ch == DOW_CHANNELS[1] {
                dow.iter().map(|d| d.1).collect()
            } else if let Some(f) = MobilityFeature::ALL.iter().find(|f| f.name() == ch) {
                city.mobility.values[ti][f.index()].clone()
            } else {
                return Err(Error::Invalid(format!("unknown input channel `{ch}`")));
            };
            debug_assert_eq!(v.len(), n_days);
            values.push(v);
        }
        tracts.insert(
            id.clone(),
            TractSeries {
                start: city.range.start,
                values,
            },
        );
    }
    Ok(SeriesSet {
        channels: channels.to_vec(),
        tracts,
    })
}

/// Per-channel mean and standard deviation of the in-city daily values over
/// `range`. Constant channels get the identity transform.
pub fn fit_normalizer(series: &SeriesSet, range: DateRange) -> Result<Normalizer> {
    let c = series.channels.len();
    let mut sum = vec![0.0; c];
    let mut count = 0usize;
    for ts in series.tracts.values() {
        for day in range.days() {
            for (ch, s) in sum.iter_mut().enumerate() {
                *s += ts.get(ch, day).ok_or_else(|| Error::Invalid(format!("no value on {day}")))?;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Invalid("cannot fit a normalizer on an empty range".into()));
    }
    let n = count as f64;
    let mut mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mut sq = vec![0.0; c];
    for ts in series.tracts.values() {
        for day in range.days() {
            for ch in 0..c {
                let d = ts.get(ch, day).expect("checked above") - mean[ch];
                sq[ch] += d * d;
            }
        }
    }
    let mut std: Vec<f64> = sq.iter().map(|s| (s / n).sqrt()).collect();
    for ch in 0..c {
        if !(std[ch] > 1e-12) {
            mean[ch] = 0.0;
            std[ch] = 1.0;
        }
    }
    Ok(Normalizer {
        channels: series.channels.clone(),
        mean,
        std,
    })
}

impl Dataset {
    /// Builds the dataset and fits the input normalisation on `fit_range`.
    pub fn fit(city: &CityData, model: &Model, neighbors: usize, fit_range: DateRange) -> Result<Self> {
        let series = channel_series(city, &model.variant.channels)?;
        let normalizer = fit_normalizer(&series, fit_range)?;
        let scaler = model
            .variant
            .gate_enabled
            .then(|| DeterminantScaler::fit(&city.determinants));
        Self::assemble(city, model, neighbors, series, normalizer, scaler)
    }

    /// Builds the dataset with normalisation taken from a trained checkpoint.
    pub fn with_normalization(
        city: &CityData,
        model: &Model,
        neighbors: usize,
        normalizer: Normalizer,
        scaler: Option<DeterminantScaler>,
    ) -> Result<Self> {
        let series = channel_series(city, &model.variant.channels)?;
        Self::assemble(city, model, neighbors, series, normalizer, scaler)
    }

    fn assemble(
        city: &CityData,
        model: &Model,
        neighbors: usize,
        series: SeriesSet,
        normalizer: Normalizer,
        scaler: Option<DeterminantScaler>,
    ) -> Result<Self> {
        city.validate()?;
        if normalizer.channels != model.variant.channels {
            return Err(Error::shape(
                "Dataset",
                format!("normalizer channels {:?} vs model {:?}", normalizer.channels, model.variant.channels),
            ));
        }
        let neighbor_map = build_neighbor_map(&city.graph, neighbors)?;
        let tract_ids = city.graph.city_ids();
        let gates = match (&scaler, model.variant.gate_enabled) {
            (Some(s), true) => {
                if city.determinants.determinants.len() != model.gate_k {
                    return Err(Error::shape(
                        "Dataset",
                        format!(
                            "model gate reads {} determinants, table has {}",
                            model.gate_k,
                            city.determinants.determinants.len()
                        ),
                    ));
                }
                Some(
                    tract_ids
                        .iter()
                        .map(|id| GateInputMap::build(neighbor_map.get(id).expect("in-city"), &city.determinants, s))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            (None, true) => return Err(Error::Invalid("the gated variant needs a determinant scaler".into())),
            (_, false) => None,
        };
        let city_tracts: Vec<_> = city.graph.city_tracts().collect();
        Ok(Self {
            range: city.range,
            days: model.days,
            populations: city_tracts.iter().map(|t| t.population).collect(),
            shares: city_tracts.iter().map(|t| t.shares).collect(),
            tract_ids,
            neighbors: neighbor_map,
            series,
            normalizer,
            scaler: if model.variant.gate_enabled { scaler } else { None },
            gates,
            targets: city.crimes.counts.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.tract_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tract_ids.is_empty()
    }

    /// Earliest day with a complete look-back window inside the study period.
    pub fn first_target_day(&self) -> NaiveDate {
        self.range.start + Duration::days(self.days as i64)
    }

    pub fn check_target_day(&self, day: NaiveDate) -> Result<()> {
        if day < self.first_target_day() || day > self.range.end {
            return Err(Error::Invalid(format!(
                "{day} has no complete {}-day look-back inside {}",
                self.days, self.range
            )));
        }
        Ok(())
    }

    /// Normalised inputs for every in-city tract, predicting `day`.
    pub fn features_for_day(&self, day: NaiveDate) -> Result<Vec<FeatureTensor>> {
        self.check_target_day(day)?;
        self.tract_ids
            .iter()
            .map(|id| {
                let mut t = layout_feature_map(self.neighbors.get(id).expect("in-city"), &self.series, day, self.days)?;
                self.normalizer.apply(&mut t)?;
                Ok(t)
            })
            .collect()
    }

    /// Observed reported counts on `day`, in tract order.
    pub fn targets_for_day(&self, day: NaiveDate) -> Result<Vec<f64>> {
        let off = self
            .range
            .offset(day)
            .ok_or_else(|| Error::Invalid(format!("{day} outside {}", self.range)))?;
        Ok(self.targets.iter().map(|t| t[off] as f64).collect())
    }

    pub fn gate_refs(&self) -> Option<Vec<&GateInputMap>> {
        self.gates.as_ref().map(|g| g.iter().collect())
    }

    /// Predictions for every in-city tract and every day of `range`.
    pub fn predict(&self, model: &Model, params: &crate::autodiff::Params, range: DateRange) -> Result<Vec<Prediction>> {
        let gates = self.gate_refs();
        let mut out = Vec::with_capacity(range.len() * self.len());
        // the gate has no temporal input, so evaluate it once
        let pis = match &gates {
            Some(g) if model.variant.gate_enabled => Some(model.reporting_rate_values(params, g)?),
            _ => None,
        };
        for day in range.days() {
            let feats = self.features_for_day(day)?;
            let refs: Vec<&FeatureTensor> = feats.iter().collect();
            let ys = model.true_crime_values(params, &refs)?;
            for (i, y) in ys.into_iter().enumerate() {
                let pi = pis.as_ref().map_or(1.0, |p| p[i]);
                out.push(Prediction {
                    tract_id: self.tract_ids[i].clone(),
                    day,
                    y,
                    pi,
                    z: y * pi,
                });
            }
        }
        Ok(out)
    }
}
