use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::DateRange;
use crate::error::{Error, Result};
use crate::geo::TractGraph;

/// An OD endpoint: a tract (in or out of the city) or an external county.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Tract(String),
    County { county_id: String, state_id: String },
}

/// One daily origin→destination flow. Endpoints index into
/// [`OdFlows::regions`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdRecord {
    pub date: NaiveDate,
    pub origin: u32,
    pub dest: u32,
    pub flow: f64,
}

/// OD records with interned endpoints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OdFlows {
    regions: Vec<Region>,
    lookup: HashMap<Region, u32>,
    pub records: Vec<OdRecord>,
}

impl OdFlows {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, r: Region) -> u32 {
        if let Some(&id) = self.lookup.get(&r) {
            return id;
        }
        let id = self.regions.len() as u32;
        self.regions.push(r.clone());
        self.lookup.insert(r, id);
        id
    }

    pub fn region(&self, id: u32) -> &Region {
        &self.regions[id as usize]
    }

    pub fn push(&mut self, date: NaiveDate, origin: Region, dest: Region, flow: f64) -> Result<()> {
        if !(flow.is_finite() && flow >= 0.0) {
            return Err(Error::Invalid(format!("flow {flow} on {date} must be finite and ≥ 0")));
        }
        let origin = self.intern(origin);
        let dest = self.intern(dest);
        self.records.push(OdRecord {
            date,
            origin,
            dest,
            flow,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Multiplies every flow by `factor` (device counts → population scale).
pub fn rescale_flows(flows: &OdFlows, factor: f64) -> Result<OdFlows> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Invalid(format!("rescale factor must be positive, got {factor}")));
    }
    let mut out = flows.clone();
    for r in &mut out.records {
        r.flow *= factor;
    }
    Ok(out)
}

pub const DEFAULT_RESCALE_FACTOR: f64 = 10.0;

/// The ten daily mobility features, in channel order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MobilityFeature {
    InCityInflow,
    InCityOutflow,
    OutCityInflow,
    OutCityOutflow,
    TractsByInflow,
    TractsByOutflow,
    CountiesByInflow,
    CountiesByOutflow,
    StatesByInflow,
    StatesByOutflow,
}

impl MobilityFeature {
    pub const ALL: [MobilityFeature; 10] = [
        MobilityFeature::InCityInflow,
        MobilityFeature::InCityOutflow,
        MobilityFeature::OutCityInflow,
        MobilityFeature::OutCityOutflow,
        MobilityFeature::TractsByInflow,
        MobilityFeature::TractsByOutflow,
        MobilityFeature::CountiesByInflow,
        MobilityFeature::CountiesByOutflow,
        MobilityFeature::StatesByInflow,
        MobilityFeature::StatesByOutflow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MobilityFeature::InCityInflow => "in_city_inflow",
            MobilityFeature::InCityOutflow => "in_city_outflow",
            MobilityFeature::OutCityInflow => "out_city_inflow",
            MobilityFeature::OutCityOutflow => "out_city_outflow",
            MobilityFeature::TractsByInflow => "tracts_by_inflow",
            MobilityFeature::TractsByOutflow => "tracts_by_outflow",
            MobilityFeature::CountiesByInflow => "counties_by_inflow",
            MobilityFeature::CountiesByOutflow => "counties_by_outflow",
            MobilityFeature::StatesByInflow => "states_by_inflow",
            MobilityFeature::StatesByOutflow => "states_by_outflow",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// `values[tract][feature][day]` for in-city tracts in graph order.
#[derive(Clone, Debug, PartialEq)]
pub struct MobilityFeatures {
    pub range: DateRange,
    pub tract_ids: Vec<String>,
    pub values: Vec<[Vec<f64>; 10]>,
}

impl MobilityFeatures {
    pub fn get(&self, tract: usize, feature: MobilityFeature, day: NaiveDate) -> Option<f64> {
        let off = self.range.offset(day)?;
        Some(self.values.get(tract)?[feature.index()][off])
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Side {
    Inflow,
    Outflow,
}

enum Endpoint<'a> {
    City(usize),
    External { county: &'a str, state: &'a str },
}

/// Derives the ten per-tract daily mobility features over `range`.
///
/// Inflow means the tract is the destination. A region counts as connected
/// on a day when a positive flow links it to the tract.
pub fn derive_mobility_features(flows: &OdFlows, graph: &TractGraph, range: DateRange) -> Result<MobilityFeatures> {
    let tract_ids = graph.city_ids();
    let city_pos: HashMap<&str, usize> = tract_ids.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let n_days = range.len();
    let mut values: Vec<[Vec<f64>; 10]> = (0..tract_ids.len())
        .map(|_| std::array::from_fn(|_| vec![0.0; n_days]))
        .collect();

    let endpoints: Vec<Endpoint> = flows
        .regions
        .iter()
        .map(|r| match r {
            Region::Tract(id) => {
                if let Some(&i) = city_pos.get(id.as_str()) {
                    Ok(Endpoint::City(i))
                } else {
                    let t = graph.get(id).ok_or_else(|| Error::UnknownTract(id.clone()))?;
                    Ok(Endpoint::External {
                        county: &t.county_id,
                        state: &t.state_id,
                    })
                }
            }
            Region::County { county_id, state_id } => Ok(Endpoint::External {
                county: county_id,
                state: state_id,
            }),
        })
        .collect::<Result<_>>()?;

    // (tract, day, side, key) connection keys, deduplicated after the pass
    let mut tract_links: Vec<(usize, usize, Side, usize)> = Vec::new();
    let mut county_links: Vec<(usize, usize, Side, &str, &str)> = Vec::new();
    let mut state_links: Vec<(usize, usize, Side, &str)> = Vec::new();

    for rec in &flows.records {
        let Some(day) = range.offset(rec.date) else {
            return Err(Error::Invalid(format!(
                "OD record dated {} outside configured range {range}",
                rec.date
            )));
        };
        let connected = rec.flow > 0.0;
        match (&endpoints[rec.origin as usize], &endpoints[rec.dest as usize]) {
            (Endpoint::City(o), Endpoint::City(d)) => {
                values[*d][MobilityFeature::InCityInflow.index()][day] += rec.flow;
                values[*o][MobilityFeature::InCityOutflow.index()][day] += rec.flow;
                if connected && o != d {
                    tract_links.push((*d, day, Side::Inflow, *o));
                    tract_links.push((*o, day, Side::Outflow, *d));
                }
            }
            (Endpoint::External { county, state }, Endpoint::City(d)) => {
                values[*d][MobilityFeature::OutCityInflow.index()][day] += rec.flow;
                if connected {
                    county_links.push((*d, day, Side::Inflow, county, state));
                    state_links.push((*d, day, Side::Inflow, state));
                }
            }
            (Endpoint::City(o), Endpoint::External { county, state }) => {
                values[*o][MobilityFeature::OutCityOutflow.index()][day] += rec.flow;
                if connected {
                    county_links.push((*o, day, Side::Outflow, county, state));
                    state_links.push((*o, day, Side::Outflow, state));
                }
            }
            (Endpoint::External { .. }, Endpoint::External { .. }) => {
                return Err(Error::Invalid(format!(
                    "OD record on {} has no in-city endpoint: {:?} -> {:?}",
                    rec.date,
                    flows.region(rec.origin),
                    flows.region(rec.dest)
                )));
            }
        }
    }

    fn side_feature(side: Side, inflow: MobilityFeature, outflow: MobilityFeature) -> usize {
        match side {
            Side::Inflow => inflow.index(),
            Side::Outflow => outflow.index(),
        }
    }

    tract_links.sort_unstable();
    tract_links.dedup();
    for (t, day, side, _) in tract_links {
        let f = side_feature(side, MobilityFeature::TractsByInflow, MobilityFeature::TractsByOutflow);
        values[t][f][day] += 1.0;
    }
    county_links.sort_unstable();
    county_links.dedup();
    for (t, day, side, _, _) in county_links {
        let f = side_feature(side, MobilityFeature::CountiesByInflow, MobilityFeature::CountiesByOutflow);
        values[t][f][day] += 1.0;
    }
    state_links.sort_unstable();
    state_links.dedup();
    for (t, day, side, _) in state_links {
        let f = side_feature(side, MobilityFeature::StatesByInflow, MobilityFeature::StatesByOutflow);
        values[t][f][day] += 1.0;
    }

    Ok(MobilityFeatures {
        range,
        tract_ids,
        values,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct OdRow {
    date: NaiveDate,
    origin_id: String,
    origin_kind: String,
    dest_id: String,
    dest_kind: String,
    flow: f64,
    state_id_if_external: String,
}

fn region_from_row(id: String, kind: &str, state: &str, graph: &TractGraph) -> Result<Region> {
    match kind {
        "tract" => {
            if graph.get(&id).is_none() {
                return Err(Error::UnknownTract(id));
            }
            Ok(Region::Tract(id))
        }
        "county" => {
            if state.is_empty() {
                return Err(Error::Invalid(format!("county `{id}` without state_id_if_external")));
            }
            Ok(Region::County {
                county_id: id,
                state_id: state.to_string(),
            })
        }
        other => Err(Error::Invalid(format!("unknown region kind `{other}`"))),
    }
}

/// Reads `date,origin_id,origin_kind,dest_id,dest_kind,flow,state_id_if_external`.
pub fn load_od(path: impl AsRef<Path>, graph: &TractGraph) -> Result<OdFlows> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut flows = OdFlows::new();
    for row in rdr.deserialize::<OdRow>() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let origin = region_from_row(row.origin_id, &row.origin_kind, &row.state_id_if_external, graph)?;
        let dest = region_from_row(row.dest_id, &row.dest_kind, &row.state_id_if_external, graph)?;
        flows.push(row.date, origin, dest, row.flow)?;
    }
    Ok(flows)
}

pub fn write_od(path: impl AsRef<Path>, flows: &OdFlows, header_comment: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    if let Some(c) = header_comment {
        writeln!(file, "# {c}").map_err(|e| Error::io(path, e))?;
    }
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let split = |r: &Region| -> (String, &'static str, String) {
        match r {
            Region::Tract(id) => (id.clone(), "tract", String::new()),
            Region::County { county_id, state_id } => (county_id.clone(), "county", state_id.clone()),
        }
    };
    for rec in &flows.records {
        let (oid, okind, ostate) = split(flows.region(rec.origin));
        let (did, dkind, dstate) = split(flows.region(rec.dest));
        let state = if ostate.is_empty() { dstate } else { ostate };
        w.serialize(OdRow {
            date: rec.date,
            origin_id: oid,
            origin_kind: okind.into(),
            dest_id: did,
            dest_kind: dkind.into(),
            flow: rec.flow,
            state_id_if_external: state,
        })
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
