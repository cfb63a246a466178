use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{FairnessReport, Metric};
use crate::error::{Error, Result};
use crate::geo::Group;

/// A setting counts as improved when `|D_a| < IMPROVEMENT_RATIO · |D_b|`.
pub const IMPROVEMENT_RATIO: f64 = 0.95;

/// One city × metric × protected-group setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub city: String,
    pub metric: Metric,
    pub group: Group,
    pub d_a: Option<f64>,
    pub d_b: Option<f64>,
    /// `|D_a| / |D_b|`; absent when either degree is undefined.
    pub ratio: Option<f64>,
    /// `None` when the setting is excluded.
    pub improved: Option<bool>,
}

impl ComparisonRow {
    pub fn new(city: &str, metric: Metric, group: Group, d_a: Option<f64>, d_b: Option<f64>) -> Self {
        let (ratio, improved) = match (d_a, d_b) {
            (Some(a), Some(b)) => {
                let r = if b == 0.0 {
                    if a == 0.0 {
                        1.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    a.abs() / b.abs()
                };
                (Some(r), Some(a.abs() < IMPROVEMENT_RATIO * b.abs()))
            }
            _ => (None, None),
        };
        Self {
            city: city.to_string(),
            metric,
            group,
            d_a,
            d_b,
            ratio,
            improved,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub improved: usize,
    pub compared: usize,
    pub excluded: usize,
}

impl Tally {
    fn add(&mut self, verdict: Option<bool>) {
        match verdict {
            Some(v) => {
                self.compared += 1;
                self.improved += v as usize;
            }
            None => self.excluded += 1,
        }
    }

    /// Share of compared settings that improved, in percent.
    pub fn percentage(&self) -> Option<f64> {
        (self.compared > 0).then(|| 100.0 * self.improved as f64 / self.compared as f64)
    }

    pub fn beneficial(&self) -> bool {
        self.percentage().is_some_and(|p| p > 50.0)
    }
}

/// Model `a` compared against model `b` over every setting, with totals
/// broken down by metric, group and city.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprovementTable {
    pub model_a: String,
    pub model_b: String,
    pub rows: Vec<ComparisonRow>,
    pub overall: Tally,
    pub by_metric: BTreeMap<Metric, Tally>,
    pub by_group: BTreeMap<Group, Tally>,
    pub by_city: BTreeMap<String, Tally>,
}

impl ImprovementTable {
    pub fn from_rows(model_a: &str, model_b: &str, rows: Vec<ComparisonRow>) -> Self {
        let mut overall = Tally::default();
        let mut by_metric = BTreeMap::new();
        let mut by_group = BTreeMap::new();
        let mut by_city: BTreeMap<String, Tally> = BTreeMap::new();
        for r in &rows {
            overall.add(r.improved);
            by_metric.entry(r.metric).or_insert_with(Tally::default).add(r.improved);
            by_group.entry(r.group).or_insert_with(Tally::default).add(r.improved);
            by_city.entry(r.city.clone()).or_default().add(r.improved);
        }
        Self {
            model_a: model_a.to_string(),
            model_b: model_b.to_string(),
            rows,
            overall,
            by_metric,
            by_group,
            by_city,
        }
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut s = String::from("city,metric,group,d_a,d_b,ratio,verdict\n");
        for r in &self.rows {
            let verdict = match r.improved {
                Some(true) => "improved",
                Some(false) => "not_improved",
                None => "excluded",
            };
            s += &format!(
                "{},{},{},{},{},{},{}\n",
                r.city,
                r.metric,
                r.group,
                fmt(r.d_a),
                fmt(r.d_b),
                fmt(r.ratio),
                verdict
            );
        }
        s
    }

    pub fn render_text(&self) -> String {
        let pct = |t: &Tally| {
            t.percentage()
                .map_or_else(|| format!("{:>8}", "n/a"), |p| format!("{:>7.0}%", p))
        };
        let line = |label: &str, t: &Tally| format!("{label:<12}{}{:>6}/{:<4}{:>9}\n", pct(t), t.improved, t.compared, t.excluded);
        let mut s = format!("improvement of {} over {}\n", self.model_a, self.model_b);
        s += &format!("{:<12}{:>8}{:>11}{:>9}\n", "", "improved", "count", "excluded");
        s += &line("all", &self.overall);
        for (m, t) in &self.by_metric {
            s += &line(m.as_str(), t);
        }
        for (g, t) in &self.by_group {
            s += &line(g.as_str(), t);
        }
        for (c, t) in &self.by_city {
            s += &line(c, t);
        }
        s += &format!(
            "beneficial: {}\n",
            if self.overall.beneficial() { "yes" } else { "no" }
        );
        s
    }
}

/// Pairs reports by city and compares `a` against `b` on every city ×
/// metric × protected-group setting.
pub fn compare_models(a: &[FairnessReport], b: &[FairnessReport]) -> Result<ImprovementTable> {
    let name = |rs: &[FairnessReport]| -> Result<String> {
        let first = rs
            .first()
            .ok_or_else(|| Error::Invalid("compare_models needs at least one report per model".into()))?;
        if rs.iter().any(|r| r.model != first.model) {
            return Err(Error::Invalid("reports for one side mix several models".into()));
        }
        Ok(first.model.clone())
    };
    let (model_a, model_b) = (name(a)?, name(b)?);
    let mut rows = Vec::new();
    for ra in a {
        let rb = b
            .iter()
            .find(|r| r.city == ra.city)
            .ok_or_else(|| Error::Invalid(format!("no `{model_b}` report for city `{}`", ra.city)))?;
        for m in Metric::ALL {
            for &g in &Group::PROTECTED {
                rows.push(ComparisonRow::new(&ra.city, m, g, ra.degree(g, m), rb.degree(g, m)));
            }
        }
    }
    if b.len() != a.len() {
        return Err(Error::Invalid(format!(
            "{} `{model_a}` reports vs {} `{model_b}` reports",
            a.len(),
            b.len()
        )));
    }
    Ok(ImprovementTable::from_rows(&model_a, &model_b, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::{Confusion, GroupConfusion};

    fn verdict(a: f64, b: f64) -> Option<bool> {
        ComparisonRow::new("c", Metric::SP, Group::BA, Some(a), Some(b)).improved
    }

    #[test]
    fn threshold() {
        assert_eq!(verdict(0.9 * 0.4, 0.4), Some(true));
        assert_eq!(verdict(0.4, 0.4), Some(false));
        assert_eq!(verdict(-0.3, 0.5), Some(true));
        assert_eq!(verdict(0.0, 0.0), Some(false));
        assert_eq!(verdict(0.1, 0.0), Some(false));
        assert_eq!(ComparisonRow::new("c", Metric::LI, Group::A, None, Some(0.2)).improved, None);
    }

    #[test]
    fn boundary() {
        // 0.95 = 19/20 and 0.95·20 rounds to exactly 19
        assert_eq!(verdict(19.0, 20.0), Some(false));
        assert_eq!(verdict(18.999, 20.0), Some(true));
        // inside [0.95, 1/0.95] neither side improves on the other
        assert_eq!((verdict(0.97, 1.0), verdict(1.0, 0.97)), (Some(false), Some(false)));
        // outside, exactly one side improves
        assert_eq!((verdict(0.5, 1.0), verdict(1.0, 0.5)), (Some(true), Some(false)));
    }

    fn report(model: &str, city: &str, fp_ba: f64) -> FairnessReport {
        let mut conf = GroupConfusion::default();
        for g in Group::ALL {
            conf.groups[g as usize] = Confusion {
                tp: 10.0,
                fp: 10.0,
                tn: 10.0,
                fn_: 10.0,
            };
        }
        conf.groups[Group::BA as usize].fp = fp_ba;
        FairnessReport::new(city, model, &conf)
    }

    #[test]
    fn tallies_and_identity() {
        let a = [report("TC", "x", 11.0), report("TC", "y", 30.0)];
        let b = [report("UU", "x", 20.0), report("UU", "y", 20.0)];
        let t = compare_models(&a, &b).unwrap();
        assert_eq!(t.rows.len(), 24);
        // W-equal groups have D = 0 on both sides: compared, never improved
        assert_eq!(t.overall.compared, 24);
        // x improves BA on SP, FPR and LI; y worsens them
        assert_eq!(t.overall.improved, 3);
        assert_eq!(t.by_city["x"].improved, 3);
        assert_eq!(t.by_group[&Group::BA].improved, 3);
        assert_eq!(t.by_metric[&Metric::FNR].improved, 0);
        assert!(!t.overall.beneficial());
        let same = compare_models(&a, &a).unwrap();
        assert_eq!(same.overall.percentage(), Some(0.0));
        assert_eq!(t.to_csv().lines().count(), 25);
        assert!(t.render_text().contains("beneficial: no"));
        assert!(compare_models(&a, &b[..1]).is_err());
    }
}
