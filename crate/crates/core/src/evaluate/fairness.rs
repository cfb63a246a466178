use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HotspotSeries;
use crate::error::{Error, Result};
use crate::geo::{Group, GroupShares};

/// Population-weighted confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: f64,
    pub fp: f64,
    pub tn: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

impl Confusion {
    pub fn total(&self) -> f64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// One [`Confusion`] per group, in [`Group::ALL`] order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupConfusion {
    pub groups: [Confusion; 4],
}

impl GroupConfusion {
    pub fn get(&self, g: Group) -> &Confusion {
        &self.groups[g as usize]
    }
}

/// Sums `p_i·w_i^g` over tract-days in each cell of the confusion matrix.
/// Cells are counted per tract first and weighted once, so the result does
/// not depend on day order.
pub fn group_confusion(
    pred: &HotspotSeries,
    truth: &HotspotSeries,
    populations: &[f64],
    shares: &[GroupShares],
) -> Result<GroupConfusion> {
    pred.check_aligned(truth)?;
    if populations.len() != pred.tract_ids.len() || shares.len() != pred.tract_ids.len() {
        return Err(Error::shape(
            "group_confusion",
            format!(
                "{} tracts vs {} populations / {} share rows",
                pred.tract_ids.len(),
                populations.len(),
                shares.len()
            ),
        ));
    }
    let mut out = GroupConfusion::default();
    for (i, (ph, th)) in pred.h.iter().zip(&truth.h).enumerate() {
        let mut cells = [0u64; 4];
        for (&p, &t) in ph.iter().zip(th) {
            let k = match (p, t) {
                (true, true) => 0,
                (true, false) => 1,
                (false, false) => 2,
                (false, true) => 3,
            };
            cells[k] += 1;
        }
        for g in Group::ALL {
            let w = populations[i] * shares[i].get(g);
            let c = &mut out.groups[g as usize];
            c.tp += w * cells[0] as f64;
            c.fp += w * cells[1] as f64;
            c.tn += w * cells[2] as f64;
            c.fn_ += w * cells[3] as f64;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    SP,
    FPR,
    FNR,
    LI,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::SP, Metric::FPR, Metric::FNR, Metric::LI];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::SP => "SP",
            Metric::FPR => "FPR",
            Metric::FNR => "FNR",
            Metric::LI => "LI",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Invalid(format!("unknown fairness metric `{s}`")))
    }
}

/// The four group metrics; `None` where the denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub sp: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub li: Option<f64>,
}

impl GroupMetrics {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::SP => self.sp,
            Metric::FPR => self.fpr,
            Metric::FNR => self.fnr,
            Metric::LI => self.li,
        }
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

pub fn fairness_metrics(c: &Confusion) -> GroupMetrics {
    GroupMetrics {
        sp: ratio(c.tp + c.fn_, c.total()),
        fpr: ratio(c.fp, c.tn + c.fp),
        fnr: ratio(c.fn_, c.tp + c.fn_),
        li: ratio(c.tp + c.fp, c.tp + c.fn_),
    }
}

/// `metric_pg / metric_npg − 1`; undefined when either metric is undefined
/// or the non-protected metric is zero.
pub fn degree_of_unfairness(pg: Option<f64>, npg: Option<f64>) -> Option<f64> {
    match (pg, npg) {
        (Some(a), Some(b)) if b != 0.0 => Some(a / b - 1.0),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub group: Group,
    pub confusion: Confusion,
    pub metrics: GroupMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeEntry {
    pub group: Group,
    pub metric: Metric,
    pub d: Option<f64>,
}

/// Fairness audit of one model's predictions in one city.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub city: String,
    pub model: String,
    pub groups: Vec<GroupEntry>,
    pub degrees: Vec<DegreeEntry>,
}

impl FairnessReport {
    pub fn new(city: impl Into<String>, model: impl Into<String>, conf: &GroupConfusion) -> Self {
        let groups: Vec<GroupEntry> = Group::ALL
            .iter()
            .map(|&g| GroupEntry {
                group: g,
                confusion: *conf.get(g),
                metrics: fairness_metrics(conf.get(g)),
            })
            .collect();
        let npg = groups[Group::NON_PROTECTED as usize].metrics;
        let mut degrees = Vec::new();
        for &g in &Group::PROTECTED {
            for m in Metric::ALL {
                degrees.push(DegreeEntry {
                    group: g,
                    metric: m,
                    d: degree_of_unfairness(groups[g as usize].metrics.get(m), npg.get(m)),
                });
            }
        }
        Self {
            city: city.into(),
            model: model.into(),
            groups,
            degrees,
        }
    }

    pub fn degree(&self, group: Group, metric: Metric) -> Option<f64> {
        self.degrees
            .iter()
            .find(|e| e.group == group && e.metric == metric)
            .and_then(|e| e.d)
    }

    /// Settings whose degree of unfairness is undefined.
    pub fn undefined(&self) -> Vec<(Group, Metric)> {
        self.degrees
            .iter()
            .filter(|e| e.d.is_none())
            .map(|e| (e.group, e.metric))
            .collect()
    }

    /// One row per (group, metric): `city,model,group,metric,value,d`.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut s = String::from("city,model,group,metric,value,d\n");
        for e in &self.groups {
            for m in Metric::ALL {
                let d = if e.group == Group::NON_PROTECTED {
                    None
                } else {
                    self.degree(e.group, m)
                };
                s += &format!(
                    "{},{},{},{},{},{}\n",
                    self.city,
                    self.model,
                    e.group,
                    m,
                    fmt(e.metrics.get(m)),
                    fmt(d)
                );
            }
        }
        s
    }

    pub fn render_text(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| format!("{:>9}", "undef"), |x| format!("{x:>9.4}"));
        let mut s = format!("fairness  city={}  model={}\n", self.city, self.model);
        s += &format!("{:<6}{:>9}{:>9}{:>9}{:>9}\n", "group", "SP", "FPR", "FNR", "LI");
        for e in &self.groups {
            s += &format!("{:<6}", e.group.as_str());
            for m in Metric::ALL {
                s += &cell(e.metrics.get(m));
            }
            s.push('\n');
        }
        s += &format!("{:<6}{:>9}{:>9}{:>9}{:>9}\n", "D", "SP", "FPR", "FNR", "LI");
        for &g in &Group::PROTECTED {
            s += &format!("{:<6}", format!("{g}/W"));
            for m in Metric::ALL {
                s += &cell(self.degree(g, m));
            }
            s.push('\n');
        }
        s
    }
}
