use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::crimes::CrimeType;
use crate::error::{Error, Result};
use crate::geo::TractGraph;

/// Census variables that drive the reporting rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Determinant {
    #[serde(rename = "PR")]
    Pr,
    #[serde(rename = "UR")]
    Ur,
    #[serde(rename = "AR")]
    Ar,
    #[serde(rename = "NMR")]
    Nmr,
    #[serde(rename = "M/F")]
    MaleFemale,
    #[serde(rename = "FHHR")]
    Fhhr,
    #[serde(rename = "LIR")]
    Lir,
    #[serde(rename = "FR")]
    Fr,
}

impl Determinant {
    pub const ALL: [Determinant; 8] = [
        Determinant::Pr,
        Determinant::Ur,
        Determinant::Ar,
        Determinant::Nmr,
        Determinant::MaleFemale,
        Determinant::Fhhr,
        Determinant::Lir,
        Determinant::Fr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Determinant::Pr => "PR",
            Determinant::Ur => "UR",
            Determinant::Ar => "AR",
            Determinant::Nmr => "NMR",
            Determinant::MaleFemale => "M/F",
            Determinant::Fhhr => "FHHR",
            Determinant::Lir => "LIR",
            Determinant::Fr => "FR",
        }
    }

    /// Everything except the sex ratio is a proportion in [0, 1].
    pub fn is_rate(self) -> bool {
        self != Determinant::MaleFemale
    }

    /// Gate inputs used for a crime type, in channel order.
    pub fn for_crime(ct: CrimeType) -> &'static [Determinant] {
        match ct {
            CrimeType::Property => &[Determinant::Pr, Determinant::Ur],
            CrimeType::Violent => &[
                Determinant::Pr,
                Determinant::Ar,
                Determinant::Nmr,
                Determinant::MaleFemale,
                Determinant::Fhhr,
                Determinant::Lir,
                Determinant::Fr,
            ],
        }
    }
}

impl fmt::Display for Determinant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Determinant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Determinant::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown determinant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub moe: f64,
}

/// Selected determinants (estimate and margin of error) per in-city tract.
#[derive(Clone, Debug, PartialEq)]
pub struct DeterminantTable {
    pub determinants: Vec<Determinant>,
    /// In-city tract id → one estimate per entry of `determinants`.
    pub values: BTreeMap<String, Vec<Estimate>>,
}

impl DeterminantTable {
    pub fn get(&self, tract_id: &str, d: Determinant) -> Option<Estimate> {
        let k = self.determinants.iter().position(|&x| x == d)?;
        self.values.get(tract_id).map(|v| v[k])
    }

    /// Checks value bounds for every entry.
    pub fn validate(&self) -> Result<()> {
        for (tract, row) in &self.values {
            if row.len() != self.determinants.len() {
                return Err(Error::Invalid(format!("tract `{tract}` has {} determinant values", row.len())));
            }
            for (d, e) in self.determinants.iter().zip(row) {
                check_bounds(tract, *d, *e)?;
            }
        }
        Ok(())
    }
}

fn check_bounds(tract: &str, d: Determinant, e: Estimate) -> Result<()> {
    let ok_est = e.estimate.is_finite() && e.estimate >= 0.0 && (!d.is_rate() || e.estimate <= 1.0);
    if !ok_est {
        return Err(Error::Invalid(format!(
            "tract `{tract}`: {d} estimate {} out of range",
            e.estimate
        )));
    }
    if !(e.moe.is_finite() && e.moe >= 0.0) {
        return Err(Error::Invalid(format!("tract `{tract}`: {d} margin of error {} must be ≥ 0", e.moe)));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct AcsRow {
    tract_id: String,
    name: String,
    estimate: f64,
    moe: f64,
}

/// Reads `tract_id,name,estimate,moe` and keeps the determinants used for
/// `crime_type`. Rows for out-of-city tracts and unused determinants are
/// ignored; every in-city tract must carry every selected determinant.
pub fn load_determinants(path: impl AsRef<Path>, crime_type: CrimeType, graph: &TractGraph) -> Result<DeterminantTable> {
    let path = path.as_ref();
    let selected = Determinant::for_crime(crime_type);
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut found: BTreeMap<String, Vec<Option<Estimate>>> = graph
        .city_ids()
        .into_iter()
        .map(|id| (id, vec![None; selected.len()]))
        .collect();
    for row in rdr.deserialize::<AcsRow>() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let d: Determinant = row.name.parse()?;
        if graph.get(&row.tract_id).is_none() {
            return Err(Error::UnknownTract(row.tract_id));
        }
        let e = Estimate {
            estimate: row.estimate,
            moe: row.moe,
        };
        check_bounds(&row.tract_id, d, e)?;
        let (Some(slot), Some(k)) = (found.get_mut(&row.tract_id), selected.iter().position(|&x| x == d)) else {
            continue;
        };
        if slot[k].is_some() {
            return Err(Error::Invalid(format!("duplicate {d} row for tract `{}`", row.tract_id)));
        }
        slot[k] = Some(e);
    }
    let mut gaps = Vec::new();
    for (tract, row) in &found {
        for (d, e) in selected.iter().zip(row) {
            if e.is_none() {
                gaps.push((tract.clone(), d.name().to_string()));
            }
        }
    }
    if !gaps.is_empty() {
        return Err(Error::MissingDeterminants(gaps));
    }
    let values = found
        .into_iter()
        .map(|(t, row)| (t, row.into_iter().map(|e| e.expect("gaps checked")).collect()))
        .collect();
    Ok(DeterminantTable {
        determinants: selected.to_vec(),
        values,
    })
}

/// Writes every determinant in `table` as long-format rows.
pub fn write_determinants(path: impl AsRef<Path>, table: &DeterminantTable, header_comment: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    if let Some(c) = header_comment {
        writeln!(file, "# {c}").map_err(|e| Error::io(path, e))?;
    }
    let mut w = csv::Writer::from_writer(file);
    for (tract, row) in &table.values {
        for (d, e) in table.determinants.iter().zip(row) {
            w.serialize(AcsRow {
                tract_id: tract.clone(),
                name: d.name().to_string(),
                estimate: e.estimate,
                moe: e.moe,
            })
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::test_tract;

    fn graph() -> TractGraph {
        TractGraph::new(vec![test_tract("a", 0.0, 0.0), test_tract("b", 0.0, 0.01)]).unwrap()
    }

    fn write(dir: &tempfile::TempDir, rows: &[(&str, &str, f64, f64)]) -> std::path::PathBuf {
        let mut body = String::from("tract_id,name,estimate,moe\n");
        for r in rows {
            body += &format!("{},{},{},{}\n", r.0, r.1, r.2, r.3);
        }
        let p = dir.path().join("acs.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    fn full_rows(skip: Option<(&str, &str)>) -> Vec<(&'static str, &'static str, f64, f64)> {
        let mut rows = Vec::new();
        for t in ["a", "b"] {
            for d in Determinant::ALL {
                if skip == Some((t, d.name())) {
                    continue;
                }
                let est = if d.is_rate() { 0.2 } else { 0.97 };
                rows.push((t, d.name(), est, 0.01));
            }
        }
        rows
    }

    #[test]
    fn property_table_with_only_pr_ur() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            &[("a", "PR", 0.3, 0.05), ("a", "UR", 0.1, 0.02), ("b", "PR", 0.2, 0.04), ("b", "UR", 0.05, 0.01)],
        );
        let t = load_determinants(&p, CrimeType::Property, &graph()).unwrap();
        assert_eq!(t.determinants, [Determinant::Pr, Determinant::Ur]);
        assert_eq!(t.get("a", Determinant::Ur), Some(Estimate { estimate: 0.1, moe: 0.02 }));
        assert!(load_determinants(&p, CrimeType::Violent, &graph()).is_err());
    }

    #[test]
    fn violent_missing_fr_names_tract_and_determinant() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, &full_rows(Some(("b", "FR"))));
        match load_determinants(&p, CrimeType::Violent, &graph()) {
            Err(Error::MissingDeterminants(gaps)) => assert_eq!(gaps, [("b".to_string(), "FR".to_string())]),
            other => panic!("expected missing determinants, got {other:?}"),
        }
        // UR is not a violent-crime input, so its absence is fine
        let p = write(&dir, &full_rows(Some(("a", "UR"))));
        let t = load_determinants(&p, CrimeType::Violent, &graph()).unwrap();
        assert_eq!(t.determinants.len(), 7);
    }

    #[test]
    fn out_of_range_values_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, &[("a", "PR", 1.2, 0.0)]);
        assert!(load_determinants(&p, CrimeType::Property, &graph()).is_err());
        let p = write(&dir, &[("a", "PR", 0.2, -0.1)]);
        assert!(load_determinants(&p, CrimeType::Property, &graph()).is_err());
        // the sex ratio is not capped at one
        let mut rows = full_rows(None);
        rows.push(("a", "M/F", 1.4, 0.1));
        rows.retain(|r| !(r.0 == "a" && r.1 == "M/F" && r.2 != 1.4));
        let p = write(&dir, &rows);
        let t = load_determinants(&p, CrimeType::Violent, &graph()).unwrap();
        assert_eq!(t.get("a", Determinant::MaleFemale).unwrap().estimate, 1.4);
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, &full_rows(None));
        let t = load_determinants(&p, CrimeType::Violent, &graph()).unwrap();
        let q = dir.path().join("out.csv");
        write_determinants(&q, &t, None).unwrap();
        assert_eq!(load_determinants(&q, CrimeType::Violent, &graph()).unwrap(), t);
        t.validate().unwrap();
    }
}
