use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::DateRange;
use crate::error::{Error, Result};
use crate::geo::TractGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrimeType {
    Property,
    Violent,
}

impl CrimeType {
    pub fn as_str(self) -> &'static str {
        match self {
            CrimeType::Property => "property",
            CrimeType::Violent => "violent",
        }
    }
}

impl fmt::Display for CrimeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CrimeType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "property" => Ok(CrimeType::Property),
            "violent" => Ok(CrimeType::Violent),
            other => Err(Error::Invalid(format!("unknown crime type `{other}`"))),
        }
    }
}

/// Dense daily reported counts for every in-city tract.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrimeSeries {
    pub crime_type: CrimeType,
    pub range: DateRange,
    /// In-city tract ids in graph order.
    pub tract_ids: Vec<String>,
    /// `counts[tract][day offset]`
    pub counts: Vec<Vec<u32>>,
}

impl CrimeSeries {
    pub fn zeros(crime_type: CrimeType, range: DateRange, graph: &TractGraph) -> Self {
        let tract_ids = graph.city_ids();
        let counts = vec![vec![0; range.len()]; tract_ids.len()];
        Self {
            crime_type,
            range,
            tract_ids,
            counts,
        }
    }

    pub fn get(&self, tract: usize, day: NaiveDate) -> Option<u32> {
        let off = self.range.offset(day)?;
        self.counts.get(tract).map(|c| c[off])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().map(|&c| c as u64).sum()
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct CrimeRow {
    date: NaiveDate,
    tract_id: String,
    crime_type: String,
    count: i64,
}

/// Reads `date,tract_id,crime_type,count` rows into one dense series per
/// crime type over `range`. Duplicate (tract, date) rows are summed and
/// absent pairs are zero. Both crime types are always returned.
pub fn load_crimes(
    path: impl AsRef<Path>,
    graph: &TractGraph,
    range: DateRange,
) -> Result<BTreeMap<CrimeType, CrimeSeries>> {
    let path = path.as_ref();
    let mut out: BTreeMap<CrimeType, CrimeSeries> = [CrimeType::Property, CrimeType::Violent]
        .into_iter()
        .map(|ct| (ct, CrimeSeries::zeros(ct, range, graph)))
        .collect();
    let city_pos: BTreeMap<&str, usize> = graph
        .city_tracts()
        .enumerate()
        .map(|(i, t)| (t.tract_id.as_str(), i))
        .collect();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    for row in rdr.deserialize::<CrimeRow>() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let ct: CrimeType = row.crime_type.parse()?;
        let Some(&ti) = city_pos.get(row.tract_id.as_str()) else {
            return Err(Error::UnknownTract(row.tract_id));
        };
        if row.count < 0 {
            return Err(Error::Invalid(format!(
                "negative count {} for tract `{}` on {}",
                row.count, row.tract_id, row.date
            )));
        }
        let Some(off) = range.offset(row.date) else {
            return Err(Error::Invalid(format!(
                "{}: crime row dated {} outside configured range {range}",
                path.display(),
                row.date
            )));
        };
        let cell = &mut out.get_mut(&ct).expect("both types present").counts[ti][off];
        *cell = cell
            .checked_add(u32::try_from(row.count).map_err(|_| Error::Invalid("count overflow".into()))?)
            .ok_or_else(|| Error::Invalid("count overflow".into()))?;
    }
    Ok(out)
}

/// Writes non-zero cells in (date, tract) order, optionally behind a
/// `# key=value` comment line.
pub fn write_crimes(path: impl AsRef<Path>, series: &[&CrimeSeries], header_comment: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    if let Some(c) = header_comment {
        writeln!(file, "# {c}").map_err(|e| Error::io(path, e))?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["date", "tract_id", "crime_type", "count"])
        .map_err(|e| Error::csv(path, e))?;
    for s in series {
        for (off, day) in s.range.days().enumerate() {
            for (ti, id) in s.tract_ids.iter().enumerate() {
                let c = s.counts[ti][off];
                if c > 0 {
                    w.write_record([
                        day.to_string(),
                        id.clone(),
                        s.crime_type.to_string(),
                        c.to_string(),
                    ])
                    .map_err(|e| Error::csv(path, e))?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::test_tract;

    fn day(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn graph() -> TractGraph {
        TractGraph::new(vec![test_tract("a", 0.0, 0.0), test_tract("b", 0.0, 0.01)]).unwrap()
    }

    fn range() -> DateRange {
        DateRange::new(day("2020-01-01"), day("2020-01-05")).unwrap()
    }

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("crimes.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn empty_file_gives_zero_series() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "date,tract_id,crime_type,count\n");
        let s = load_crimes(&p, &graph(), range()).unwrap();
        for ct in [CrimeType::Property, CrimeType::Violent] {
            assert_eq!(s[&ct].counts, vec![vec![0; 5]; 2]);
        }
    }

    #[test]
    fn duplicates_sum_and_types_partition() {
        let rows = [
            ("2020-01-02", "a", "property", 2),
            ("2020-01-02", "a", "property", 3),
            ("2020-01-02", "a", "violent", 1),
            ("2020-01-05", "b", "property", 1),
            ("2020-01-02", "a", "property", 1),
            ("2020-01-01", "b", "violent", 4),
        ];
        let mut body = String::from("date,tract_id,crime_type,count\n");
        for r in rows {
            body += &format!("{},{},{},{}\n", r.0, r.1, r.2, r.3);
        }
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, &body);
        let s = load_crimes(&p, &graph(), range()).unwrap();

        // independent group-by-sum
        let mut oracle: BTreeMap<(&str, &str, &str), u32> = BTreeMap::new();
        for r in rows {
            *oracle.entry((r.2, r.1, r.0)).or_default() += r.3;
        }
        for ((ct, tract, date), total) in oracle {
            let ct: CrimeType = ct.parse().unwrap();
            let ti = if tract == "a" { 0 } else { 1 };
            assert_eq!(s[&ct].get(ti, day(date)), Some(total));
        }
        assert_eq!(s[&CrimeType::Property].total(), 7);
        assert_eq!(s[&CrimeType::Violent].total(), 5);
    }

    #[test]
    fn unknown_tract_and_negative_count_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "date,tract_id,crime_type,count\n2020-01-01,zz,property,1\n");
        assert!(matches!(load_crimes(&p, &graph(), range()), Err(Error::UnknownTract(_))));
        let p = write(&dir, "date,tract_id,crime_type,count\n2020-01-01,a,property,-1\n");
        assert!(load_crimes(&p, &graph(), range()).is_err());
        let p = write(&dir, "date,tract_id,crime_type,count\n2020-02-01,a,property,1\n");
        assert!(load_crimes(&p, &graph(), range()).is_err());
    }

    #[test]
    fn write_then_load_round_trips() {
        let g = graph();
        let mut s = CrimeSeries::zeros(CrimeType::Violent, range(), &g);
        s.counts[0][1] = 3;
        s.counts[1][4] = 1;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write_crimes(&p, &[&s], Some("config_hash=abc")).unwrap();
        let back = load_crimes(&p, &g, range()).unwrap();
        assert_eq!(back[&CrimeType::Violent], s);
        assert_eq!(back[&CrimeType::Property].total(), 0);
    }
}
