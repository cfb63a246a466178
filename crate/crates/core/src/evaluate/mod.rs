//! Hotspot labels, monthly F1, population-weighted fairness metrics and
//! cross-model comparison.

mod compare;
mod fairness;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::calendar::DateRange;
use crate::error::{Error, Result};
use crate::ingest::CrimeSeries;
use crate::model::Prediction;

pub use compare::{compare_models, ComparisonRow, ImprovementTable, Tally, IMPROVEMENT_RATIO};
pub use fairness::{
    degree_of_unfairness, fairness_metrics, group_confusion, Confusion, FairnessReport, GroupConfusion, GroupMetrics,
    Metric,
};

/// Binary labels for every in-city tract and day: `h[tract][day]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HotspotSeries {
    pub range: DateRange,
    pub tract_ids: Vec<String>,
    pub h: Vec<Vec<bool>>,
}

impl HotspotSeries {
    pub fn get(&self, tract: usize, day: NaiveDate) -> Option<bool> {
        Some(self.h.get(tract)?[self.range.offset(day)?])
    }

    fn check_aligned(&self, other: &HotspotSeries) -> Result<()> {
        if self.range != other.range || self.tract_ids != other.tract_ids {
            return Err(Error::shape(
                "HotspotSeries",
                format!(
                    "series over {} / {} tracts vs {} / {} tracts",
                    self.range,
                    self.tract_ids.len(),
                    other.range,
                    other.tract_ids.len()
                ),
            ));
        }
        Ok(())
    }

    /// Fraction of tract-days labelled as hotspots.
    pub fn density(&self) -> f64 {
        let n: usize = self.h.iter().map(|r| r.len()).sum();
        let pos = self.h.iter().flatten().filter(|&&b| b).count();
        pos as f64 / n.max(1) as f64
    }
}

/// A tract is a hotspot when its estimate is strictly above the day's mean
/// over all tracts.
pub fn binarize(y: &[f64]) -> Vec<bool> {
    if y.is_empty() {
        return Vec::new();
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|&v| v > mean).collect()
}

/// Binarizes predicted true crimes day by day. `preds` must hold one entry
/// per tract and day of `range`, in any order.
pub fn binarize_predictions(preds: &[Prediction], tract_ids: &[String], range: DateRange) -> Result<HotspotSeries> {
    let index: std::collections::HashMap<&str, usize> =
        tract_ids.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let mut y = vec![vec![f64::NAN; range.len()]; tract_ids.len()];
    for p in preds {
        let ti = *index
            .get(p.tract_id.as_str())
            .ok_or_else(|| Error::UnknownTract(p.tract_id.clone()))?;
        let d = range
            .offset(p.day)
            .ok_or_else(|| Error::Invalid(format!("prediction dated {} outside {range}", p.day)))?;
        y[ti][d] = p.y;
    }
    let mut h = vec![vec![false; range.len()]; tract_ids.len()];
    let mut day_vals = vec![0.0; tract_ids.len()];
    for d in 0..range.len() {
        for (ti, v) in day_vals.iter_mut().enumerate() {
            *v = y[ti][d];
            if v.is_nan() {
                return Err(Error::Invalid(format!(
                    "no prediction for tract `{}` on {}",
                    tract_ids[ti],
                    range.day(d)
                )));
            }
        }
        for (ti, b) in binarize(&day_vals).into_iter().enumerate() {
            h[ti][d] = b;
        }
    }
    Ok(HotspotSeries {
        range,
        tract_ids: tract_ids.to_vec(),
        h,
    })
}

/// A tract-day is a true hotspot when at least one crime was reported.
pub fn ground_truth_hotspots(crimes: &CrimeSeries, range: DateRange) -> Result<HotspotSeries> {
    let start = crimes
        .range
        .offset(range.start)
        .filter(|_| crimes.range.contains(range.end))
        .ok_or_else(|| Error::Invalid(format!("{range} not inside the crime series {}", crimes.range)))?;
    Ok(HotspotSeries {
        range,
        tract_ids: crimes.tract_ids.clone(),
        h: crimes
            .counts
            .iter()
            .map(|row| row[start..start + range.len()].iter().map(|&c| c >= 1).collect())
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonthF1 {
    pub year: i32,
    pub month: u32,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub f1: f64,
    /// No positives in either prediction or truth; F1 is reported as 0.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub months: Vec<MonthF1>,
    pub mean: f64,
}

pub fn f1_score(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// F1 of the hotspot class pooled over all tract-days of each calendar
/// month, and the mean over months.
pub fn monthly_f1(pred: &HotspotSeries, truth: &HotspotSeries) -> Result<F1Report> {
    pred.check_aligned(truth)?;
    let mut months: Vec<MonthF1> = Vec::new();
    for (d, day) in pred.range.days().enumerate() {
        if months.last().map_or(true, |m| (m.year, m.month) != (day.year(), day.month())) {
            months.push(MonthF1 {
                year: day.year(),
                month: day.month(),
                tp: 0,
                fp: 0,
                fn_: 0,
                f1: 0.0,
                degenerate: false,
            });
        }
        let m = months.last_mut().expect("pushed");
        for (p, t) in pred.h.iter().zip(&truth.h) {
            match (p[d], t[d]) {
                (true, true) => m.tp += 1,
                (true, false) => m.fp += 1,
                (false, true) => m.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    for m in &mut months {
        m.degenerate = m.tp + m.fp + m.fn_ == 0;
        m.f1 = f1_score(m.tp, m.fp, m.fn_);
    }
    let mean = months.iter().map(|m| m.f1).sum::<f64>() / months.len().max(1) as f64;
    Ok(F1Report { months, mean })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geo::{test_tract, TractGraph};
    use crate::ingest::CrimeType;

    fn day(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(&[1.0, 2.0, 3.0]), [false, false, true]);
        assert_eq!(binarize(&[2.5; 4]), [false; 4]);
        let y = [0.3, 1.7, 0.9, 2.2];
        let shifted: Vec<f64> = y.iter().map(|v| v + 5.0).collect();
        assert_eq!(binarize(&y), binarize(&shifted));
    }

    #[test]
    fn binarize_random_cases_against_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let n = rng.gen_range(1..40);
            // integer-valued draws make exact ties with the mean common
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64).collect();
            let h = binarize(&y);
            for (i, &b) in h.iter().enumerate() {
                // y_i > mean  ⇔  n·y_i > Σy, exact for small integers
                let direct = n as f64 * y[i] > y.iter().sum::<f64>();
                assert_eq!(b, direct);
            }
            // dyadic scale and integer shift keep the transform exact, so ties survive
            let a = [0.25, 0.5, 2.0, 8.0][rng.gen_range(0..4)];
            let c = rng.gen_range(-10..10) as f64;
            let t: Vec<f64> = y.iter().map(|v| a * v + c).collect();
            assert_eq!(binarize(&t), h);
        }
    }

    fn fixture() -> CrimeSeries {
        let g = TractGraph::new(vec![test_tract("a", 0.0, 0.0), test_tract("b", 0.0, 0.01)]).unwrap();
        let range = DateRange::new(day("2020-01-30"), day("2020-02-02")).unwrap();
        let mut s = CrimeSeries::zeros(CrimeType::Property, range, &g);
        s.counts = vec![vec![0, 3, 1, 0], vec![2, 0, 0, 0]];
        s
    }

    #[test]
    fn ground_truth_threshold_and_density() {
        let s = fixture();
        let h = ground_truth_hotspots(&s, s.range).unwrap();
        assert_eq!(h.h, vec![vec![false, true, true, false], vec![true, false, false, false]]);
        // 3 of 8 tract-days hold a crime
        assert_eq!(h.density(), 3.0 / 8.0);
        let feb = DateRange::new(day("2020-02-01"), day("2020-02-02")).unwrap();
        let hf = ground_truth_hotspots(&s, feb).unwrap();
        assert_eq!(hf.density(), 1.0 / 4.0);
        assert!(ground_truth_hotspots(&s, DateRange::new(day("2020-01-01"), day("2020-02-02")).unwrap()).is_err());
    }

    #[test]
    fn f1_examples() {
        assert!((f1_score(2, 1, 1) - 2.0 / 3.0).abs() < 1e-15);
        let s = fixture();
        let truth = ground_truth_hotspots(&s, s.range).unwrap();
        let r = monthly_f1(&truth, &truth).unwrap();
        assert_eq!(r.months.len(), 2);
        // February has one positive; both months score 1
        assert_eq!(r.mean, 1.0);
        let mut neg = truth.clone();
        for row in &mut neg.h {
            for b in row.iter_mut() {
                *b = !*b;
            }
        }
        let r = monthly_f1(&neg, &truth).unwrap();
        assert!(r.months.iter().all(|m| m.f1 == 0.0 && !m.degenerate));
        let empty = HotspotSeries {
            h: vec![vec![false; 4]; 2],
            ..truth.clone()
        };
        let r = monthly_f1(&empty, &empty).unwrap();
        assert!(r.months.iter().all(|m| m.degenerate && m.f1 == 0.0));
    }

    #[test]
    fn predictions_binarized_per_day() {
        let range = DateRange::new(day("2020-01-01"), day("2020-01-02")).unwrap();
        let ids = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let mk = |t: &str, d: &str, y: f64| Prediction {
            tract_id: t.into(),
            day: day(d),
            y,
            pi: 1.0,
            z: y,
        };
        let preds = vec![
            mk("a", "2020-01-01", 1.0),
            mk("b", "2020-01-01", 2.0),
            mk("c", "2020-01-01", 3.0),
            mk("c", "2020-01-02", 0.0),
            mk("a", "2020-01-02", 5.0),
            mk("b", "2020-01-02", 5.0),
        ];
        let h = binarize_predictions(&preds, &ids, range).unwrap();
        assert_eq!(h.h, vec![vec![false, true], vec![false, true], vec![true, false]]);
        assert!(binarize_predictions(&preds[..5], &ids, range).is_err());
    }
}
