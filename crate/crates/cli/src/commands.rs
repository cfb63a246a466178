//! The five pipeline commands. Each reads only its inputs and writes only
//! under the configured output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use chrono::NaiveDate;
use hotspot_core::calendar::DateRange;
use hotspot_core::dataset::{CityData, Dataset};
use hotspot_core::evaluate::{
    binarize_predictions, compare_models, ground_truth_hotspots, group_confusion, monthly_f1, F1Report, FairnessReport,
    HotspotSeries, ImprovementTable,
};
use hotspot_core::geo::TractGraph;
use hotspot_core::ingest::{derive_mobility_features, load_crimes, load_determinants, load_od, rescale_flows, CrimeSeries};
use hotspot_core::model::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, Model, ModelVariant, Prediction, VariantKind};
use hotspot_core::synth::{generate, SynthFiles};
use hotspot_core::training::{train, write_training_log};
use hotspot_core::Error;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// A JSON output with the run's config hash alongside the payload.
#[derive(Debug, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    #[serde(flatten)]
    pub body: T,
}

fn stamp(cfg: &RunConfig) -> String {
    format!("config_hash={}", cfg.hash())
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_json<T: Serialize>(cfg: &RunConfig, path: &Path, body: &T) -> anyhow::Result<()> {
    let doc = Stamped {
        config_hash: cfg.hash(),
        body,
    };
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Stamped<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_slice(&bytes).with_context(|| format!("{}: not a valid report", path.display()))
}

fn write_text(cfg: &RunConfig, path: &Path, text: &str) -> anyhow::Result<()> {
    write_file(path, format!("# {}\n{text}", stamp(cfg)).as_bytes())
}

/// Generates the configured synthetic city into `<out>/data`.
pub fn cmd_synth(cfg: &RunConfig) -> anyhow::Result<SynthFiles> {
    let Some(spec) = &cfg.synth else {
        return Err(Error::Config(vec!["synth: the synth command needs a [synth] section".into()]).into());
    };
    let dir = cfg.synth_dir();
    create_dir(&dir)?;
    let city = generate(spec)?;
    let files = city.export(&dir, Some(&stamp(cfg)))?;
    write_json(cfg, &dir.join("synth.json"), spec)?;
    Ok(files)
}

/// Loads the configured inputs over the study period.
pub fn load_city(cfg: &RunConfig) -> anyhow::Result<CityData> {
    let paths = cfg.data_paths();
    let missing: Vec<String> = paths
        .all()
        .iter()
        .filter(|(_, p)| !p.is_file())
        .map(|(k, p)| format!("data.{k}: file {} not found", p.display()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(missing).into());
    }
    let range = cfg.study_period()?;
    let graph = TractGraph::read_csv(&paths.tracts)?;
    let crimes = load_crimes(&paths.crimes, &graph, range)?
        .remove(&cfg.crime_type)
        .unwrap_or_else(|| CrimeSeries::zeros(cfg.crime_type, range, &graph));
    let flows = rescale_flows(&load_od(&paths.od, &graph)?, cfg.rescale())?;
    let mobility = derive_mobility_features(&flows, &graph, range)?;
    let determinants = load_determinants(&paths.determinants, cfg.crime_type, &graph)?;
    let city = CityData {
        graph,
        range,
        crimes,
        mobility,
        determinants,
    };
    city.validate()?;
    Ok(city)
}

fn build_model(cfg: &RunConfig, kind: VariantKind, gate_k: usize) -> anyhow::Result<Model> {
    let lambda = if kind == VariantKind::Ifg { cfg.train.ifg_weight } else { 0.0 };
    let variant = ModelVariant::new(kind, lambda)?;
    Ok(Model::new(variant, cfg.model.arch.clone(), cfg.train.lookback, gate_k)?)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub variant: VariantKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub best_val_mse: f64,
    pub checkpoint: PathBuf,
}

/// Trains every configured variant: `<out>/<VARIANT>/checkpoint.bin` and
/// `training_log.csv`.
pub fn cmd_train(cfg: &RunConfig) -> anyhow::Result<Vec<TrainSummary>> {
    let city = load_city(cfg)?;
    train_city(cfg, &city)
}

pub fn train_city(cfg: &RunConfig, city: &CityData) -> anyhow::Result<Vec<TrainSummary>> {
    let split = cfg.split_plan()?;
    let mut out = Vec::new();
    for &kind in &cfg.model.variants {
        let model = build_model(cfg, kind, city.determinants.determinants.len())?;
        let data = Dataset::fit(city, &model, cfg.train.neighbors, split.train)?;
        let outcome = train(&model, &data, &split, &cfg.train).with_context(|| format!("training {kind}"))?;
        let dir = cfg.variant_dir(kind);
        create_dir(&dir)?;
        let ckpt_path = dir.join("checkpoint.bin");
        let ckpt = Checkpoint {
            meta: CheckpointMeta {
                model: model.clone(),
                crime_type: cfg.crime_type,
                seed: cfg.train.seed,
                config_hash: cfg.hash(),
                neighbors: cfg.train.neighbors,
                normalizer: data.normalizer.clone(),
                determinant_scaler: data.scaler.clone(),
                learning_rate: outcome.learning_rate,
                epochs: outcome.epochs,
                tensors: Vec::new(),
            },
            params: outcome.params,
        };
        save_checkpoint(&ckpt_path, &ckpt)?;
        write_training_log(dir.join("training_log.csv"), &outcome.log, Some(&stamp(cfg)))?;
        let summary = TrainSummary {
            variant: kind,
            learning_rate: outcome.learning_rate,
            epochs: outcome.epochs,
            best_val_mse: outcome.best_val_mse,
            checkpoint: ckpt_path,
        };
        write_json(cfg, &dir.join("train.json"), &summary)?;
        out.push(summary);
    }
    Ok(out)
}

/// Rebuilds the dataset a checkpoint was trained on.
pub fn dataset_for(city: &CityData, ckpt: &Checkpoint) -> anyhow::Result<Dataset> {
    let m = &ckpt.meta;
    if m.crime_type != city.crimes.crime_type {
        bail!(Error::Checkpoint(format!(
            "checkpoint was trained on {} crimes, config selects {}",
            m.crime_type, city.crimes.crime_type
        )));
    }
    Ok(Dataset::with_normalization(
        city,
        &m.model,
        m.neighbors,
        m.normalizer.clone(),
        m.determinant_scaler.clone(),
    )?)
}

pub fn predict_range(ckpt: &Checkpoint, data: &Dataset, range: DateRange) -> anyhow::Result<(Vec<Prediction>, HotspotSeries)> {
    let preds = data.predict(&ckpt.meta.model, &ckpt.params, range)?;
    let h = binarize_predictions(&preds, &data.tract_ids, range)?;
    Ok((preds, h))
}

/// Predicts the test period with each variant's checkpoint:
/// `<out>/<VARIANT>/predictions.csv` with `tract_id,date,y,pi,z,h`.
pub fn cmd_predict(cfg: &RunConfig) -> anyhow::Result<Vec<PathBuf>> {
    let city = load_city(cfg)?;
    let test = cfg.split_plan()?.test;
    let mut written = Vec::new();
    for &kind in &cfg.model.variants {
        let dir = cfg.variant_dir(kind);
        let ckpt = load_checkpoint(dir.join("checkpoint.bin"))?;
        if ckpt.meta.model.variant.kind != kind {
            bail!(Error::Checkpoint(format!(
                "{} holds a {} model",
                dir.join("checkpoint.bin").display(),
                ckpt.meta.model.variant.kind
            )));
        }
        let data = dataset_for(&city, &ckpt)?;
        let (preds, h) = predict_range(&ckpt, &data, test)?;
        let path = dir.join("predictions.csv");
        write_predictions(cfg, &path, &preds, &h)?;
        written.push(path);
    }
    Ok(written)
}

fn write_predictions(cfg: &RunConfig, path: &Path, preds: &[Prediction], h: &HotspotSeries) -> anyhow::Result<()> {
    let pos: BTreeMap<&str, usize> = h.tract_ids.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let mut rows: Vec<&Prediction> = preds.iter().collect();
    rows.sort_by(|a, b| (a.day, pos[a.tract_id.as_str()]).cmp(&(b.day, pos[b.tract_id.as_str()])));
    let mut body = String::from("tract_id,date,y,pi,z,h\n");
    for p in rows {
        let hot = h.get(pos[p.tract_id.as_str()], p.day).expect("aligned");
        writeln!(body, "{},{},{},{},{},{}", p.tract_id, p.day, p.y, p.pi, p.z, u8::from(hot)).expect("string write");
    }
    write_text(cfg, path, &body)
}

#[derive(Debug, Deserialize)]
struct PredictionRow {
    tract_id: String,
    date: NaiveDate,
    y: f64,
    pi: f64,
    z: f64,
}

pub fn read_predictions(path: &Path) -> anyhow::Result<Vec<Prediction>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<PredictionRow>() {
        let r = row.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        out.push(Prediction {
            tract_id: r.tract_id,
            day: r.date,
            y: r.y,
            pi: r.pi,
            z: r.z,
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Evaluation {
    pub f1: F1Report,
    pub fairness: FairnessReport,
}

pub fn evaluate_predictions(
    cfg: &RunConfig,
    kind: VariantKind,
    preds: &[Prediction],
    crimes: &CrimeSeries,
    graph: &TractGraph,
) -> anyhow::Result<Evaluation> {
    let test = cfg.split_plan()?.test;
    let tract_ids = graph.city_ids();
    let pred = binarize_predictions(preds, &tract_ids, test)?;
    let truth = ground_truth_hotspots(crimes, test)?;
    let f1 = monthly_f1(&pred, &truth)?;
    let tracts: Vec<_> = graph.city_tracts().collect();
    let populations: Vec<f64> = tracts.iter().map(|t| t.population).collect();
    let shares: Vec<_> = tracts.iter().map(|t| t.shares).collect();
    let conf = group_confusion(&pred, &truth, &populations, &shares)?;
    Ok(Evaluation {
        f1,
        fairness: FairnessReport::new(&cfg.city, kind.as_str(), &conf),
    })
}

fn render_f1(kind: VariantKind, city: &str, f1: &F1Report) -> String {
    let mut s = format!("monthly F1  city={city}  model={kind}\n");
    s += &format!("{:<9}{:>8}{:>8}{:>8}{:>9}\n", "month", "tp", "fp", "fn", "f1");
    for m in &f1.months {
        s += &format!(
            "{:<9}{:>8}{:>8}{:>8}{:>9.4}{}\n",
            format!("{}-{:02}", m.year, m.month),
            m.tp,
            m.fp,
            m.fn_,
            m.f1,
            if m.degenerate { "  (no positives)" } else { "" }
        );
    }
    s += &format!("{:<9}{:>33.4}\n", "mean", f1.mean);
    s
}

/// Scores each variant's predictions against reported hotspots:
/// `f1.{json,txt}` and `fairness.{json,csv,txt}`.
pub fn cmd_evaluate(cfg: &RunConfig) -> anyhow::Result<Vec<Evaluation>> {
    let paths = cfg.data_paths();
    let range = cfg.study_period()?;
    let graph = TractGraph::read_csv(&paths.tracts)?;
    let crimes = load_crimes(&paths.crimes, &graph, range)?
        .remove(&cfg.crime_type)
        .unwrap_or_else(|| CrimeSeries::zeros(cfg.crime_type, range, &graph));
    let mut out = Vec::new();
    for &kind in &cfg.model.variants {
        let dir = cfg.variant_dir(kind);
        let preds = read_predictions(&dir.join("predictions.csv"))?;
        let ev = evaluate_predictions(cfg, kind, &preds, &crimes, &graph)?;
        write_json(cfg, &dir.join("f1.json"), &ev.f1)?;
        write_text(cfg, &dir.join("f1.txt"), &render_f1(kind, &cfg.city, &ev.f1))?;
        write_json(cfg, &dir.join("fairness.json"), &ev.fairness)?;
        write_text(cfg, &dir.join("fairness.csv"), &ev.fairness.to_csv())?;
        write_text(cfg, &dir.join("fairness.txt"), &ev.fairness.render_text())?;
        out.push(ev);
    }
    Ok(out)
}

pub fn read_fairness(path: &Path) -> anyhow::Result<FairnessReport> {
    Ok(read_json::<FairnessReport>(path)?.body)
}

/// Compares each configured pair over this run and every run listed in
/// `compare.runs`: `<out>/compare/<A>_vs_<B>.{json,csv,txt}`.
pub fn cmd_compare(cfg: &RunConfig) -> anyhow::Result<Vec<ImprovementTable>> {
    let dir = cfg.out.join("compare");
    create_dir(&dir)?;
    let mut runs = vec![cfg.out.clone()];
    runs.extend(cfg.compare.runs.iter().cloned());
    let mut tables = Vec::new();
    for [a, b] in &cfg.compare.pairs {
        let gather = |v: VariantKind| -> anyhow::Result<Vec<FairnessReport>> {
            runs.iter()
                .map(|r| read_fairness(&r.join(v.as_str()).join("fairness.json")))
                .collect()
        };
        let table = compare_models(&gather(*a)?, &gather(*b)?)?;
        let stem = format!("{a}_vs_{b}");
        write_json(cfg, &dir.join(format!("{stem}.json")), &table)?;
        write_text(cfg, &dir.join(format!("{stem}.csv")), &table.to_csv())?;
        write_text(cfg, &dir.join(format!("{stem}.txt")), &table.render_text())?;
        tables.push(table);
    }
    Ok(tables)
}

/// A single-line JSON description: `{"error":kind,"messages":[...]}`.
pub fn error_line(err: &anyhow::Error) -> String {
    // causes already quoted by their parent's message are dropped
    let mut text = String::new();
    for cause in err.chain() {
        let c = cause.to_string();
        if !text.contains(&c) {
            if !text.is_empty() {
                text += ": ";
            }
            text += &c;
        }
    }
    let (kind, messages) = match err.downcast_ref::<Error>() {
        Some(Error::Config(msgs)) => ("config", msgs.clone()),
        Some(e) => (e.kind(), vec![text]),
        None => ("error", vec![text]),
    };
    let messages: Vec<String> = messages.into_iter().map(|m| m.replace('\n', " ")).collect();
    serde_json::json!({ "error": kind, "messages": messages }).to_string()
}

pub fn print_error(err: &anyhow::Error) {
    let _ = writeln!(std::io::stderr(), "{}", error_line(err));
}
