//! Synthetic cities with a planted true-crime process and planted reporting
//! rates. The only source of ground truth for `y` and `π`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::calendar::DateRange;
use crate::dataset::CityData;
use crate::error::{Error, Result};
use crate::geo::{GroupShares, Tract, TractGraph};
use crate::ingest::{
    derive_mobility_features, rescale_flows, write_crimes, write_determinants, write_od, CrimeSeries, CrimeType,
    Determinant, DeterminantTable, Estimate, OdFlows, Region,
};

const CITY_COUNTY: &str = "C001";
const CITY_STATE: &str = "S01";
const ORIGIN_LAT: f64 = 40.0;
const ORIGIN_LON: f64 = -75.0;
const KM_PER_DEG_LAT: f64 = 111.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportingSpec {
    /// Slope of the reporting score inside the sigmoid.
    pub coef: f64,
    pub intercept: f64,
    pub pi_min: f64,
    pub pi_max: f64,
    /// Adds a non-monotone quadratic term to the score.
    pub nonlinear: bool,
}

impl Default for ReportingSpec {
    fn default() -> Self {
        Self {
            coef: 2.0,
            intercept: 0.0,
            pi_min: 0.3,
            pi_max: 0.95,
            nonlinear: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrimeSpec {
    /// Mean daily true crimes per tract with every other term at zero.
    pub base_rate: f64,
    /// Weight of log(1 + last week's mean true crimes), centred per tract.
    pub ar: f64,
    /// Weight of the previous day's log inflow, centred per tract.
    pub mobility: f64,
    pub dow_amplitude: f64,
    /// Weight of the tract's standardized mean log inflow on its base rate.
    pub level_weight: f64,
    /// Spread of independent per-tract log-rate offsets.
    pub tract_sd: f64,
}

impl Default for CrimeSpec {
    fn default() -> Self {
        Self {
            base_rate: 1.2,
            ar: 0.3,
            mobility: 1.0,
            dow_amplitude: 0.2,
            level_weight: 0.3,
            tract_sd: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilitySpec {
    /// Mean raw daily outflow per tract, before rescaling.
    pub volume: f64,
    /// In-city destinations kept per origin.
    pub partners: usize,
    pub distance_decay: f64,
    pub external_counties: usize,
    /// Fraction of a tract's volume exchanged with external counties.
    pub external_share: f64,
    /// AR(1) coefficient of the daily log activity of each tract.
    pub activity_rho: f64,
    pub activity_sd: f64,
    /// Flow multiplier on Saturdays and Sundays.
    pub weekend_factor: f64,
}

impl Default for MobilitySpec {
    fn default() -> Self {
        Self {
            volume: 300.0,
            partners: 30,
            distance_decay: 1.0,
            external_counties: 4,
            external_share: 0.1,
            activity_rho: 0.7,
            activity_sd: 0.5,
            weekend_factor: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub seed: u64,
    pub tracts: usize,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub crime_type: CrimeType,
    pub spacing_km: f64,
    /// Range of the protected-group share across the city's gradient, in [0, 1].
    pub group_gradient: f64,
    pub reporting: ReportingSpec,
    pub crime: CrimeSpec,
    pub mobility: MobilitySpec,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            tracts: 100,
            start: NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
            end: NaiveDate::from_ymd_opt(2020, 12, 31).expect("valid date"),
            crime_type: CrimeType::Property,
            spacing_km: 1.0,
            group_gradient: 0.7,
            reporting: ReportingSpec::default(),
            crime: CrimeSpec::default(),
            mobility: MobilitySpec::default(),
        }
    }
}

impl SynthSpec {
    /// Every violated field, prefixed with `section`.
    pub fn validate(&self, section: &str) -> Vec<String> {
        let mut errs = Vec::new();
        let mut need = |ok: bool, field: &str, what: &str| {
            if !ok {
                errs.push(format!("{section}.{field}: {what}"));
            }
        };
        let pos = |x: f64| x > 0.0 && x.is_finite();
        let r = &self.reporting;
        let c = &self.crime;
        let m = &self.mobility;
        need(self.tracts > 0, "tracts", "must be positive");
        need(self.end >= self.start, "end", "must not precede start");
        need(pos(self.spacing_km), "spacing_km", "must be positive");
        need((0.0..=1.0).contains(&self.group_gradient), "group_gradient", "must lie in [0, 1]");
        need(r.coef.is_finite() && r.intercept.is_finite(), "reporting.coef", "must be finite");
        need(
            0.0 < r.pi_min && r.pi_min <= r.pi_max && r.pi_max <= 1.0,
            "reporting.pi_min",
            "need 0 < pi_min ≤ pi_max ≤ 1",
        );
        need(pos(c.base_rate), "crime.base_rate", "must be positive");
        need(
            [c.ar, c.mobility, c.dow_amplitude, c.level_weight].iter().all(|x| x.is_finite()),
            "crime",
            "weights must be finite",
        );
        need((0.0..1.0).contains(&c.ar), "crime.ar", "must lie in [0, 1)");
        need(c.tract_sd >= 0.0, "crime.tract_sd", "must be non-negative");
        need(pos(m.volume), "mobility.volume", "must be positive");
        need(m.distance_decay >= 0.0, "mobility.distance_decay", "must be non-negative");
        need(
            (0.0..1.0).contains(&m.external_share),
            "mobility.external_share",
            "must lie in [0, 1)",
        );
        need(
            m.external_share == 0.0 || m.external_counties > 0,
            "mobility.external_counties",
            "must be positive when external_share > 0",
        );
        need((0.0..1.0).contains(&m.activity_rho), "mobility.activity_rho", "must lie in [0, 1)");
        need(m.activity_sd >= 0.0, "mobility.activity_sd", "must be non-negative");
        need(pos(m.weekend_factor), "mobility.weekend_factor", "must be positive");
        errs
    }

    pub fn range(&self) -> Result<DateRange> {
        DateRange::new(self.start, self.end)
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Planted quantities: per-tract reporting rates, true counts, and the
/// reported counts obtained by binomial thinning.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthTruth {
    pub range: DateRange,
    pub tract_ids: Vec<String>,
    pub pi_star: Vec<f64>,
    /// `y*[tract][day]`.
    pub true_counts: Vec<Vec<u32>>,
    pub reported: CrimeSeries,
}

#[derive(Clone, Debug)]
pub struct SynthCity {
    pub spec: SynthSpec,
    pub graph: TractGraph,
    /// Every determinant, for every tract.
    pub determinants: DeterminantTable,
    pub flows: OdFlows,
    pub truth: SynthTruth,
}

fn unit_direction(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let a = rng.gen_range(0.0..std::f64::consts::TAU);
    (a.cos(), a.sin())
}

/// Projections of `pts` onto `dir`, rescaled to [0, 1].
fn gradient(pts: &[(f64, f64)], dir: (f64, f64)) -> Vec<f64> {
    let proj: Vec<f64> = pts.iter().map(|p| p.0 * dir.0 + p.1 * dir.1).collect();
    let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    proj.iter()
        .map(|v| if span > 0.0 { (v - lo) / span } else { 0.5 })
        .collect()
}

fn tract_id(i: usize) -> String {
    format!("T{i:04}")
}

/// Tracts on a jittered grid with spatially correlated group shares and
/// determinants. Protected-group share rises along a random direction and
/// PR, UR, NMR and FHHR rise with it.
pub fn generate_city(spec: &SynthSpec) -> Result<(TractGraph, DeterminantTable)> {
    let errs = spec.validate("synth");
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let mut rng = spec.rng(1);
    let n = spec.tracts;
    let side = (n as f64).sqrt().ceil() as usize;
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let (gx, gy) = ((i % side) as f64, (i / side) as f64);
            (
                (gx + rng.gen_range(-0.3..0.3)) * spec.spacing_km,
                (gy + rng.gen_range(-0.3..0.3)) * spec.spacing_km,
            )
        })
        .collect();
    let main = gradient(&pts, unit_direction(&mut rng));
    let ba_field = gradient(&pts, unit_direction(&mut rng));
    let hl_field = gradient(&pts, unit_direction(&mut rng));
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let km_per_deg_lon = KM_PER_DEG_LAT * ORIGIN_LAT.to_radians().cos();
    let mut tracts = Vec::with_capacity(n);
    let mut values = BTreeMap::new();
    for i in 0..n {
        let g = spec.group_gradient;
        let protected = (0.5 - g / 2.0 + g * main[i] + 0.05 * noise.sample(&mut rng)).clamp(0.02, 0.98);
        let wb = (1.5 * ba_field[i]).exp();
        let wh = (1.5 * hl_field[i]).exp();
        let wa = 0.4 * (0.5 * rng.gen::<f64>()).exp();
        let total = wb + wh + wa;
        let shares = GroupShares {
            w: 1.0 - protected,
            ba: protected * wb / total,
            hl: protected * wh / total,
            a: protected * wa / total,
        };
        let id = tract_id(i);
        tracts.push(Tract {
            tract_id: id.clone(),
            lat: ORIGIN_LAT + pts[i].1 / KM_PER_DEG_LAT,
            lon: ORIGIN_LON + pts[i].0 / km_per_deg_lon,
            population: rng.gen_range(1500.0..6000.0f64).round(),
            shares,
            county_id: CITY_COUNTY.into(),
            state_id: CITY_STATE.into(),
            in_city: true,
        });

        let mut draw = |mean: f64, sd: f64| mean + sd * noise.sample(&mut rng);
        let rate = |x: f64| x.clamp(0.001, 0.999);
        let p = protected;
        let row: Vec<(Determinant, f64)> = vec![
            (Determinant::Pr, rate(draw(0.04 + 0.35 * p, 0.04))),
            (Determinant::Ur, rate(draw(0.02 + 0.12 * p, 0.015))),
            (Determinant::Ar, rate(draw(0.82 - 0.12 * p, 0.03))),
            (Determinant::Nmr, rate(draw(0.25 + 0.25 * p, 0.04))),
            (Determinant::MaleFemale, draw(0.97, 0.06).max(0.5)),
            (Determinant::Fhhr, rate(draw(0.03 + 0.15 * p, 0.02))),
            (Determinant::Lir, rate(draw(0.01 + 0.25 * shares.hl + 0.2 * shares.a, 0.01))),
            (Determinant::Fr, rate(draw(0.04 + 0.3 * (shares.hl + shares.a), 0.03))),
        ];
        let ests = row
            .into_iter()
            .map(|(_, e)| Estimate {
                estimate: e,
                moe: e * rng.gen_range(0.1..0.35) + 0.005,
            })
            .collect::<Vec<_>>();
        values.insert(id, ests);
    }
    let table = DeterminantTable {
        determinants: Determinant::ALL.to_vec(),
        values,
    };
    Ok((TractGraph::new(tracts)?, table))
}

/// Reporting propensity of each determinant: poverty-like variables lower
/// the reporting rate.
fn reporting_weight(d: Determinant) -> f64 {
    match d {
        Determinant::Pr => -1.0,
        Determinant::Ur => -1.0,
        Determinant::Ar => 0.5,
        Determinant::Nmr => -0.5,
        Determinant::MaleFemale => 0.3,
        Determinant::Fhhr => -1.0,
        Determinant::Lir => -0.7,
        Determinant::Fr => -0.5,
    }
}

/// Planted reporting rates `π*_i = pi_min + (pi_max − pi_min)·σ(a·s_i + b)`,
/// where `s_i` is a weighted sum of the standardized determinant estimates
/// used for `spec.crime_type`.
pub fn reporting_rates(spec: &SynthSpec, graph: &TractGraph, table: &DeterminantTable) -> Result<Vec<f64>> {
    let ids = graph.city_ids();
    let used = Determinant::for_crime(spec.crime_type);
    let norm = used.iter().map(|&d| reporting_weight(d).powi(2)).sum::<f64>().sqrt();
    let mut score = vec![0.0; ids.len()];
    for &d in used {
        let col: Vec<f64> = ids
            .iter()
            .map(|id| {
                table
                    .get(id, d)
                    .map(|e| e.estimate)
                    .ok_or_else(|| Error::MissingDeterminants(vec![(id.clone(), d.name().to_string())]))
            })
            .collect::<Result<_>>()?;
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
        for (s, v) in score.iter_mut().zip(&col) {
            let z = if sd > 0.0 { (v - mean) / sd } else { 0.0 };
            *s += reporting_weight(d) * z / norm;
        }
    }
    let r = &spec.reporting;
    Ok(score
        .into_iter()
        .map(|s| {
            let s = if r.nonlinear { s + 0.8 * (s * s - 1.0) } else { s };
            let sig = 1.0 / (1.0 + (-(r.coef * s + r.intercept)).exp());
            r.pi_min + (r.pi_max - r.pi_min) * sig
        })
        .collect())
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> f64 {
    if lambda > 0.0 {
        Poisson::new(lambda).expect("positive rate").sample(rng)
    } else {
        0.0
    }
}

fn weekend(day: NaiveDate) -> bool {
    day.weekday().number_from_monday() >= 6
}

/// Gravity-model OD flows: each origin keeps its `partners` strongest
/// in-city destinations (`∝ pop_o·pop_d / dist^γ`) and exchanges a fixed
/// share with external counties. Daily flows are Poisson around the
/// expected volume, scaled by the destination's latent activity and a
/// weekend factor.
pub fn generate_flows(spec: &SynthSpec, graph: &TractGraph) -> Result<OdFlows> {
    let m = &spec.mobility;
    let range = spec.range()?;
    let mut rng = spec.rng(2);
    let tracts: Vec<&Tract> = graph.city_tracts().collect();
    let n = tracts.len();
    let mean_pop = tracts.iter().map(|t| t.population).sum::<f64>() / n as f64;

    let mut partners: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for (o, to) in tracts.iter().enumerate() {
        let mut w: Vec<(usize, f64)> = tracts
            .iter()
            .enumerate()
            .filter(|&(d, _)| d != o)
            .map(|(d, td)| {
                let dist = crate::geo::haversine_km(to.lat, to.lon, td.lat, td.lon).max(0.1);
                (d, to.population * td.population / dist.powf(m.distance_decay))
            })
            .collect();
        w.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        w.truncate(m.partners);
        let total: f64 = w.iter().map(|x| x.1).sum();
        let volume = m.volume * (1.0 - m.external_share) * to.population / mean_pop;
        partners.push(w.into_iter().map(|(d, x)| (d, volume * x / total)).collect());
    }

    let step = Normal::new(0.0, m.activity_sd * (1.0 - m.activity_rho * m.activity_rho).sqrt()).expect("finite sd");
    let mut activity: Vec<f64> = (0..n)
        .map(|_| m.activity_sd * Normal::new(0.0, 1.0).expect("unit").sample(&mut rng))
        .collect();
    let counties: Vec<Region> = (0..m.external_counties)
        .map(|k| Region::County {
            county_id: format!("X{:03}", k + 1),
            state_id: if k % 2 == 0 { CITY_STATE.into() } else { "S02".into() },
        })
        .collect();
    let regions: Vec<Region> = tracts.iter().map(|t| Region::Tract(t.tract_id.clone())).collect();

    let mut flows = OdFlows::new();
    for day in range.days() {
        let week = if weekend(day) { m.weekend_factor } else { 1.0 };
        let lift: Vec<f64> = activity.iter().map(|a| a.exp() * week).collect();
        for (o, ps) in partners.iter().enumerate() {
            for &(d, base) in ps {
                let f = poisson(&mut rng, base * lift[d]);
                if f > 0.0 {
                    flows.push(day, regions[o].clone(), regions[d].clone(), f)?;
                }
            }
        }
        if !counties.is_empty() {
            for (i, t) in tracts.iter().enumerate() {
                let ext = m.volume * m.external_share * t.population / mean_pop / (2 * counties.len()) as f64;
                for c in &counties {
                    let fin = poisson(&mut rng, ext * lift[i]);
                    if fin > 0.0 {
                        flows.push(day, c.clone(), regions[i].clone(), fin)?;
                    }
                    let fout = poisson(&mut rng, ext * week);
                    if fout > 0.0 {
                        flows.push(day, regions[i].clone(), c.clone(), fout)?;
                    }
                }
            }
        }
        for a in &mut activity {
            *a = m.activity_rho * *a + step.sample(&mut rng);
        }
    }
    Ok(flows)
}

/// Raw daily inflow per in-city tract, `[tract][day]`.
fn daily_inflow(flows: &OdFlows, graph: &TractGraph, range: DateRange) -> Vec<Vec<f64>> {
    let pos: BTreeMap<String, usize> = graph.city_ids().into_iter().enumerate().map(|(i, t)| (t, i)).collect();
    let mut inflow = vec![vec![0.0; range.len()]; pos.len()];
    for r in &flows.records {
        if let (Region::Tract(id), Some(d)) = (flows.region(r.dest), range.offset(r.date)) {
            if let Some(&i) = pos.get(id) {
                inflow[i][d] += r.flow;
            }
        }
    }
    inflow
}

/// Draws `y* ~ Poisson(μ)` with
/// `log μ_{i,t} = log base + u_i + ar·f_{i,t} + mob·x_{i,t−1} + dow_t`, where
/// `f` is log(1 + mean true crimes over the previous week) centred on the
/// tract's base level and `x` is the tract's log inflow centred over the
/// period. Reported counts are `z* ~ Binomial(y*, π*_i)`.
pub fn generate_crimes(
    spec: &SynthSpec,
    graph: &TractGraph,
    determinants: &DeterminantTable,
    flows: &OdFlows,
) -> Result<SynthTruth> {
    let range = spec.range()?;
    let c = &spec.crime;
    let pi_star = reporting_rates(spec, graph, determinants)?;
    let mut rng = spec.rng(3);
    let n = pi_star.len();

    let log_inflow: Vec<Vec<f64>> = daily_inflow(flows, graph, range)
        .into_iter()
        .map(|row| row.into_iter().map(|v| v.ln_1p()).collect())
        .collect();
    let mean_log: Vec<f64> = log_inflow
        .iter()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .collect();
    let level_mean = mean_log.iter().sum::<f64>() / n as f64;
    let level_sd = (mean_log.iter().map(|v| (v - level_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let offset: Vec<f64> = mean_log
        .iter()
        .map(|m| {
            let z = if level_sd > 0.0 { (m - level_mean) / level_sd } else { 0.0 };
            c.level_weight * z + c.tract_sd * noise.sample(&mut rng)
        })
        .collect();

    let base = c.base_rate.ln();
    const WEEK: usize = 7;
    let mut history: Vec<Vec<u32>> = (0..n)
        .map(|i| {
            (0..WEEK)
                .map(|_| poisson(&mut rng, (base + offset[i]).exp()) as u32)
                .collect()
        })
        .collect();
    let mut true_counts = vec![vec![0u32; range.len()]; n];
    let mut reported = vec![vec![0u32; range.len()]; n];
    for (d, day) in range.days().enumerate() {
        let wd = day.weekday().num_days_from_monday() as f64;
        let dow = c.dow_amplitude * (std::f64::consts::TAU * wd / 7.0).cos();
        for i in 0..n {
            let level = (base + offset[i]).exp();
            let recent = history[i].iter().map(|&v| v as f64).sum::<f64>() / WEEK as f64;
            let f = ((1.0 + recent) / (1.0 + level)).ln();
            let x = if d > 0 { log_inflow[i][d - 1] - mean_log[i] } else { 0.0 };
            let mu = (base + offset[i] + c.ar * f + c.mobility * x + dow).exp();
            let y = poisson(&mut rng, mu) as u32;
            let z = if y == 0 {
                0
            } else {
                Binomial::new(y as u64, pi_star[i]).expect("valid probability").sample(&mut rng) as u32
            };
            true_counts[i][d] = y;
            reported[i][d] = z;
            history[i].remove(0);
            history[i].push(y);
        }
    }
    let mut series = CrimeSeries::zeros(spec.crime_type, range, graph);
    series.counts = reported;
    Ok(SynthTruth {
        range,
        tract_ids: graph.city_ids(),
        pi_star,
        true_counts,
        reported: series,
    })
}

/// Generates the city, its flows and its crimes from one spec.
pub fn generate(spec: &SynthSpec) -> Result<SynthCity> {
    let (graph, determinants) = generate_city(spec)?;
    let flows = generate_flows(spec, &graph)?;
    let truth = generate_crimes(spec, &graph, &determinants, &flows)?;
    Ok(SynthCity {
        spec: spec.clone(),
        graph,
        determinants,
        flows,
        truth,
    })
}

/// Paths written by [`SynthCity::export`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthFiles {
    pub tracts: PathBuf,
    pub od: PathBuf,
    pub determinants: PathBuf,
    pub crimes: PathBuf,
    pub oracle: PathBuf,
}

impl SynthFiles {
    /// The files a pipeline may read. The oracle is never among them.
    pub fn inputs(&self) -> [&Path; 4] {
        [&self.tracts, &self.od, &self.determinants, &self.crimes]
    }
}

/// Oracle values read back from `oracle.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct Oracle {
    pub pi_star: BTreeMap<String, f64>,
    pub true_counts: BTreeMap<String, Vec<u32>>,
}

impl Oracle {
    pub fn total(&self) -> u64 {
        self.true_counts.values().flatten().map(|&v| v as u64).sum()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct OracleRow {
    tract_id: String,
    date: NaiveDate,
    pi_star: f64,
    y_star: u32,
}

impl SynthCity {
    /// In-memory equivalent of loading the exported inputs, with OD flows
    /// rescaled by `rescale`.
    pub fn city_data(&self, rescale: f64) -> Result<CityData> {
        let range = self.truth.range;
        let used = Determinant::for_crime(self.spec.crime_type);
        let cols: Vec<usize> = used
            .iter()
            .map(|d| self.determinants.determinants.iter().position(|x| x == d).expect("all determinants generated"))
            .collect();
        let determinants = DeterminantTable {
            determinants: used.to_vec(),
            values: self
                .determinants
                .values
                .iter()
                .map(|(k, row)| (k.clone(), cols.iter().map(|&c| row[c]).collect()))
                .collect(),
        };
        let flows = rescale_flows(&self.flows, rescale)?;
        let city = CityData {
            mobility: derive_mobility_features(&flows, &self.graph, range)?,
            graph: self.graph.clone(),
            range,
            crimes: self.truth.reported.clone(),
            determinants,
        };
        city.validate()?;
        Ok(city)
    }

    /// Writes `tracts.csv`, `od.csv`, `determinants.csv`, `crimes.csv`
    /// (reported counts only) and `oracle.csv` into `dir`.
    pub fn export(&self, dir: impl AsRef<Path>, header_comment: Option<&str>) -> Result<SynthFiles> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = SynthFiles {
            tracts: dir.join("tracts.csv"),
            od: dir.join("od.csv"),
            determinants: dir.join("determinants.csv"),
            crimes: dir.join("crimes.csv"),
            oracle: dir.join("oracle.csv"),
        };
        self.graph.write_csv(&files.tracts, header_comment)?;
        write_od(&files.od, &self.flows, header_comment)?;
        write_determinants(&files.determinants, &self.determinants, header_comment)?;
        write_crimes(&files.crimes, &[&self.truth.reported], header_comment)?;

        let path = files.oracle.as_path();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        if let Some(c) = header_comment {
            writeln!(file, "# {c}").map_err(|e| Error::io(path, e))?;
        }
        let mut w = csv::Writer::from_writer(file);
        let t = &self.truth;
        for (i, id) in t.tract_ids.iter().enumerate() {
            for (d, day) in t.range.days().enumerate() {
                w.serialize(OracleRow {
                    tract_id: id.clone(),
                    date: day,
                    pi_star: t.pi_star[i],
                    y_star: t.true_counts[i][d],
                })
                .map_err(|e| Error::csv(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(files)
    }
}

pub fn read_oracle(path: impl AsRef<Path>) -> Result<Oracle> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut pi_star = BTreeMap::new();
    let mut true_counts: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for row in rdr.deserialize::<OracleRow>() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        pi_star.insert(row.tract_id.clone(), row.pi_star);
        true_counts.entry(row.tract_id).or_default().push(row.y_star);
    }
    Ok(Oracle { pi_star, true_counts })
}
