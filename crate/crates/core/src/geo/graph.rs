use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Racial and ethnic population groups used for fairness auditing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    /// Non-Hispanic, non-Latino White; the non-protected group.
    W,
    /// Black or African-American.
    BA,
    /// Hispanic or Latino.
    HL,
    /// Asian.
    A,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::W, Group::BA, Group::HL, Group::A];
    pub const PROTECTED: [Group; 3] = [Group::BA, Group::HL, Group::A];
    pub const NON_PROTECTED: Group = Group::W;

    pub fn as_str(self) -> &'static str {
        match self {
            Group::W => "W",
            Group::BA => "BA",
            Group::HL => "HL",
            Group::A => "A",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.as_str() == s)
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Population fractions per group. Groups may overlap, so the shares need
/// not sum to one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupShares {
    pub w: f64,
    pub ba: f64,
    pub hl: f64,
    pub a: f64,
}

impl GroupShares {
    pub fn get(&self, g: Group) -> f64 {
        match g {
            Group::W => self.w,
            Group::BA => self.ba,
            Group::HL => self.hl,
            Group::A => self.a,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tract {
    pub tract_id: String,
    pub lat: f64,
    pub lon: f64,
    pub population: f64,
    pub shares: GroupShares,
    pub county_id: String,
    pub state_id: String,
    pub in_city: bool,
}

/// The spatial substrate: tracts with centroids, populations and group shares.
#[derive(Clone, Debug, PartialEq)]
pub struct TractGraph {
    tracts: Vec<Tract>,
    index: HashMap<String, usize>,
    city: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TractRow {
    tract_id: String,
    lat: f64,
    lon: f64,
    population: f64,
    share_w: f64,
    share_ba: f64,
    share_hl: f64,
    share_a: f64,
    county_id: String,
    state_id: String,
    in_city: String,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

impl TractGraph {
    pub fn new(tracts: Vec<Tract>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tracts.len());
        let mut problems = Vec::new();
        for (i, t) in tracts.iter().enumerate() {
            if index.insert(t.tract_id.clone(), i).is_some() {
                problems.push(format!("duplicate tract_id `{}`", t.tract_id));
            }
            if !(t.lat.is_finite() && (-90.0..=90.0).contains(&t.lat))
                || !(t.lon.is_finite() && (-180.0..=180.0).contains(&t.lon))
            {
                problems.push(format!("tract `{}` has invalid centroid", t.tract_id));
            }
            if !(t.population.is_finite() && t.population >= 0.0) {
                problems.push(format!("tract `{}` has invalid population", t.tract_id));
            }
            for g in Group::ALL {
                let s = t.shares.get(g);
                if !(0.0..=1.0).contains(&s) {
                    problems.push(format!("tract `{}` share {g} = {s} outside [0,1]", t.tract_id));
                }
            }
        }
        let city: Vec<usize> = (0..tracts.len()).filter(|&i| tracts[i].in_city).collect();
        if city.is_empty() {
            problems.push("no in-city tracts".to_string());
        }
        if !problems.is_empty() {
            return Err(Error::Invalid(problems.join("; ")));
        }
        Ok(Self {
            tracts,
            index,
            city,
        })
    }

    pub fn tracts(&self) -> &[Tract] {
        &self.tracts
    }

    pub fn len(&self) -> usize {
        self.tracts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracts.is_empty()
    }

    pub fn get(&self, tract_id: &str) -> Option<&Tract> {
        self.index.get(tract_id).map(|&i| &self.tracts[i])
    }

    pub fn position(&self, tract_id: &str) -> Option<usize> {
        self.index.get(tract_id).copied()
    }

    /// In-city tracts in file order.
    pub fn city_tracts(&self) -> impl Iterator<Item = &Tract> + '_ {
        self.city.iter().map(|&i| &self.tracts[i])
    }

    pub fn city_ids(&self) -> Vec<String> {
        self.city_tracts().map(|t| t.tract_id.clone()).collect()
    }

    pub fn city_len(&self) -> usize {
        self.city.len()
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| Error::csv(path, e))?;
        let mut tracts = Vec::new();
        for row in rdr.deserialize::<TractRow>() {
            let row = row.map_err(|e| Error::csv(path, e))?;
            let in_city = parse_bool(&row.in_city).ok_or_else(|| {
                Error::Invalid(format!("tract `{}`: bad in_city `{}`", row.tract_id, row.in_city))
            })?;
            tracts.push(Tract {
                tract_id: row.tract_id,
                lat: row.lat,
                lon: row.lon,
                population: row.population,
                shares: GroupShares {
                    w: row.share_w,
                    ba: row.share_ba,
                    hl: row.share_hl,
                    a: row.share_a,
                },
                county_id: row.county_id,
                state_id: row.state_id,
                in_city,
            });
        }
        Self::new(tracts)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, header_comment: Option<&str>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        if let Some(c) = header_comment {
            writeln!(file, "# {c}").map_err(|e| Error::io(path, e))?;
        }
        let mut w = csv::Writer::from_writer(file);
        for t in &self.tracts {
            w.serialize(TractRow {
                tract_id: t.tract_id.clone(),
                lat: t.lat,
                lon: t.lon,
                population: t.population,
                share_w: t.shares.w,
                share_ba: t.shares.ba,
                share_hl: t.shares.hl,
                share_a: t.shares.a,
                county_id: t.county_id.clone(),
                state_id: t.state_id.clone(),
                in_city: t.in_city.to_string(),
            })
            .map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Great-circle distance in kilometres between two lat/lon points (degrees).
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

#[cfg(test)]
pub(crate) fn test_tract(id: &str, lat: f64, lon: f64) -> Tract {
    Tract {
        tract_id: id.to_string(),
        lat,
        lon,
        population: 1000.0,
        shares: GroupShares {
            w: 0.5,
            ba: 0.3,
            hl: 0.1,
            a: 0.1,
        },
        county_id: "C".into(),
        state_id: "S".into(),
        in_city: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicate_ids() {
        let err = TractGraph::new(vec![test_tract("a", 0.0, 0.0), test_tract("a", 0.0, 0.0)]);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_bad_share_and_empty_city() {
        let mut t = test_tract("a", 0.0, 0.0);
        t.shares.ba = 1.2;
        assert!(TractGraph::new(vec![t]).is_err());
        let mut t = test_tract("a", 0.0, 0.0);
        t.in_city = false;
        assert!(TractGraph::new(vec![t]).is_err());
    }

    #[test]
    fn haversine_one_degree_latitude() {
        let d = haversine_km(0.0, 0.0, 1.0, 0.0);
        assert!((d - 111.195).abs() < 0.01, "{d}");
        assert_eq!(haversine_km(10.0, 20.0, 10.0, 20.0), 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tracts.csv");
        let g = TractGraph::new(vec![test_tract("a", 1.0, 2.0), test_tract("b", 1.5, 2.5)]).unwrap();
        g.write_csv(&path, Some("config_hash=abc")).unwrap();
        assert_eq!(TractGraph::read_csv(&path).unwrap(), g);
    }
}
