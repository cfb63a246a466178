//! The run configuration file.

use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use hotspot_core::calendar::DateRange;
use hotspot_core::ingest::{CrimeType, DEFAULT_RESCALE_FACTOR};
use hotspot_core::model::{ArchConfig, VariantKind};
use hotspot_core::synth::SynthSpec;
use hotspot_core::training::{SplitPlan, TrainConfig};
use hotspot_core::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides `train.seed` and `synth.seed` when set.
    #[serde(default)]
    pub seed: Option<u64>,
    pub out: PathBuf,
    #[serde(default = "default_city")]
    pub city: String,
    #[serde(default = "default_crime_type")]
    pub crime_type: CrimeType,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    pub split: SplitConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub compare: CompareConfig,
}

fn default_city() -> String {
    "city".into()
}

fn default_crime_type() -> CrimeType {
    CrimeType::Property
}

/// Input files. `dir` supplies defaults named `tracts.csv`, `od.csv`,
/// `determinants.csv` and `crimes.csv`; explicit paths win.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub tracts: Option<PathBuf>,
    pub od: Option<PathBuf>,
    pub determinants: Option<PathBuf>,
    pub crimes: Option<PathBuf>,
    /// Multiplier applied to raw OD flows; defaults to 10.
    pub rescale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataPaths {
    pub tracts: PathBuf,
    pub od: PathBuf,
    pub determinants: PathBuf,
    pub crimes: PathBuf,
}

impl DataPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            tracts: dir.join("tracts.csv"),
            od: dir.join("od.csv"),
            determinants: dir.join("determinants.csv"),
            crimes: dir.join("crimes.csv"),
        }
    }

    pub fn all(&self) -> [(&'static str, &Path); 4] {
        [
            ("tracts", &self.tracts),
            ("od", &self.od),
            ("determinants", &self.determinants),
            ("crimes", &self.crimes),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// First day of the study period; the 1st or the 16th of a month.
    pub start: NaiveDate,
    #[serde(default = "d13")]
    pub train_half_months: u32,
    #[serde(default = "d1")]
    pub validation_half_months: u32,
    #[serde(default = "d10")]
    pub test_half_months: u32,
}

fn d13() -> u32 {
    13
}
fn d1() -> u32 {
    1
}
fn d10() -> u32 {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variants: Vec<VariantKind>,
    pub arch: ArchConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variants: VariantKind::ALL.to_vec(),
            arch: ArchConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    /// `[model_a, model_b]` pairs; `a` is scored against `b`.
    pub pairs: Vec<[VariantKind; 2]>,
    /// Output directories of further runs (other cities) whose reports
    /// join this run's in every comparison.
    pub runs: Vec<PathBuf>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            pairs: vec![[VariantKind::Tc, VariantKind::Uu], [VariantKind::Tc, VariantKind::Ifg]],
            runs: Vec::new(),
        }
    }
}

/// Command-line overrides; the only settings allowed outside the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Parses, applies overrides, resolves relative paths against the config
    /// file's directory and validates.
    pub fn load(path: &Path, overrides: &Overrides) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base, overrides)
    }

    pub fn parse(text: &str, base: &Path, overrides: &Overrides) -> anyhow::Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(vec![e.message().replace('\n', " ")]))?;
        if let Some(s) = overrides.seed {
            cfg.seed = Some(s);
        }
        if let Some(s) = cfg.seed {
            cfg.train.seed = s;
            if let Some(sy) = &mut cfg.synth {
                sy.seed = s;
            }
        }
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &overrides.out {
            Some(o) => cfg.out = o.clone(),
            None => resolve(&mut cfg.out),
        }
        if let Some(d) = &mut cfg.data {
            for p in [&mut d.dir, &mut d.tracts, &mut d.od, &mut d.determinants, &mut d.crimes]
                .into_iter()
                .flatten()
            {
                resolve(p);
            }
        }
        for r in &mut cfg.compare.runs {
            resolve(r);
        }
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs).into());
        }
        Ok(cfg)
    }

    /// Every violated field.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.city.is_empty() || self.city.contains([',', '\n']) {
            errs.push("city: must be a non-empty name without commas".into());
        }
        match (&self.data, &self.synth) {
            (None, None) => errs.push("data: give a [data] section or a [synth] section".into()),
            (Some(d), _) => {
                if d.dir.is_none() && [&d.tracts, &d.od, &d.determinants, &d.crimes].iter().any(|p| p.is_none()) {
                    errs.push("data: set `dir` or all of tracts, od, determinants, crimes".into());
                }
                if let Some(r) = d.rescale {
                    if !(r > 0.0 && r.is_finite()) {
                        errs.push("data.rescale: must be positive".into());
                    }
                }
            }
            (None, Some(_)) => {}
        }
        if let Some(s) = &self.synth {
            errs.extend(s.validate("synth"));
            if s.crime_type != self.crime_type {
                errs.push(format!(
                    "synth.crime_type: `{}` differs from crime_type `{}`",
                    s.crime_type, self.crime_type
                ));
            }
        }
        let sp = &self.split;
        if !matches!(sp.start.day(), 1 | 16) {
            errs.push("split.start: must fall on the 1st or the 16th of a month".into());
        }
        for (v, f) in [
            (sp.train_half_months, "train_half_months"),
            (sp.validation_half_months, "validation_half_months"),
            (sp.test_half_months, "test_half_months"),
        ] {
            if v == 0 {
                errs.push(format!("split.{f}: must be positive"));
            }
        }
        if errs.iter().all(|e| !e.starts_with("split")) {
            match self.split_plan() {
                Ok(plan) => {
                    if plan.train_targets(self.train.lookback).is_err() {
                        errs.push(format!(
                            "split.train_half_months: training range {} is shorter than train.lookback",
                            plan.train
                        ));
                    }
                    if let Some(s) = &self.synth {
                        if let Ok(r) = s.range() {
                            let period = plan.study_period();
                            if r.start > period.start || r.end < period.end {
                                errs.push(format!("synth.end: synthetic range {r} does not cover the study period {period}"));
                            }
                        }
                    }
                }
                Err(e) => errs.push(format!("split: {e}")),
            }
        }
        if self.model.variants.is_empty() {
            errs.push("model.variants: list at least one variant".into());
        }
        let mut seen = self.model.variants.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.model.variants.len() {
            errs.push("model.variants: duplicate entries".into());
        }
        errs.extend(self.model.arch.validate());
        errs.extend(self.train.validate("train"));
        for [a, b] in &self.compare.pairs {
            if a == b {
                errs.push(format!("compare.pairs: `{a}` compared with itself"));
            }
            for v in [a, b] {
                if !self.model.variants.contains(v) {
                    errs.push(format!("compare.pairs: `{v}` is not in model.variants"));
                }
            }
        }
        errs
    }

    pub fn split_plan(&self) -> hotspot_core::Result<SplitPlan> {
        let s = &self.split;
        SplitPlan::from_half_months(s.start, s.train_half_months, s.validation_half_months, s.test_half_months)
    }

    pub fn study_period(&self) -> hotspot_core::Result<DateRange> {
        Ok(self.split_plan()?.study_period())
    }

    /// Where `synth` writes and, without a `[data]` section, where the other
    /// commands read.
    pub fn synth_dir(&self) -> PathBuf {
        self.out.join("data")
    }

    pub fn data_paths(&self) -> DataPaths {
        match &self.data {
            Some(d) => {
                let defaults = d.dir.as_deref().map(DataPaths::in_dir);
                let pick = |explicit: &Option<PathBuf>, f: fn(&DataPaths) -> &PathBuf| {
                    explicit
                        .clone()
                        .or_else(|| defaults.as_ref().map(|x| f(x).clone()))
                        .expect("validated")
                };
                DataPaths {
                    tracts: pick(&d.tracts, |x| &x.tracts),
                    od: pick(&d.od, |x| &x.od),
                    determinants: pick(&d.determinants, |x| &x.determinants),
                    crimes: pick(&d.crimes, |x| &x.crimes),
                }
            }
            None => DataPaths::in_dir(&self.synth_dir()),
        }
    }

    pub fn rescale(&self) -> f64 {
        self.data
            .as_ref()
            .and_then(|d| d.rescale)
            .unwrap_or(DEFAULT_RESCALE_FACTOR)
    }

    pub fn variant_dir(&self, v: VariantKind) -> PathBuf {
        self.out.join(v.as_str())
    }

    /// SHA-256 of the canonical JSON form of the configuration. The output
    /// directory is left out so that relocated reruns hash identically.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.out = PathBuf::new();
        let json = serde_json::to_vec(&canon).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
out = "run"
[synth]
tracts = 5
[split]
start = "2020-01-01"
"#;

    #[test]
    fn minimal_config_defaults() {
        let cfg = RunConfig::parse(MINIMAL, Path::new("/cfg"), &Overrides::default()).unwrap();
        assert_eq!(cfg.out, PathBuf::from("/cfg/run"));
        assert_eq!(cfg.model.variants.len(), 4);
        assert_eq!(cfg.data_paths().crimes, PathBuf::from("/cfg/run/data/crimes.csv"));
        assert_eq!(cfg.rescale(), 10.0);
        assert_eq!(cfg.split_plan().unwrap().test.months().len(), 5);
    }

    #[test]
    fn overrides_apply_to_seed_and_out_only() {
        let o = Overrides {
            seed: Some(42),
            out: Some(PathBuf::from("elsewhere")),
        };
        let cfg = RunConfig::parse(MINIMAL, Path::new("/cfg"), &o).unwrap();
        assert_eq!(cfg.out, PathBuf::from("elsewhere"));
        assert_eq!(cfg.train.seed, 42);
        assert_eq!(cfg.synth.as_ref().unwrap().seed, 42);
    }

    #[test]
    fn hash_ignores_out_but_tracks_seed() {
        let a = RunConfig::parse(MINIMAL, Path::new("/a"), &Overrides::default()).unwrap();
        let b = RunConfig::parse(MINIMAL, Path::new("/b"), &Overrides::default()).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let c = RunConfig::parse(
            MINIMAL,
            Path::new("/a"),
            &Overrides {
                seed: Some(1),
                out: None,
            },
        )
        .unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn validation_enumerates_every_violation() {
        let text = r#"
out = "run"
[split]
start = "2020-01-05"
test_half_months = 0
[model]
variants = []
[model.arch]
predictor_channels = [0]
[train]
lr_grid = []
patience = 0
"#;
        let err = RunConfig::parse(text, Path::new("."), &Overrides::default()).unwrap_err();
        let Some(Error::Config(msgs)) = err.downcast_ref::<Error>() else {
            panic!("{err}")
        };
        let fields: Vec<&str> = msgs.iter().map(|m| m.split(':').next().unwrap()).collect();
        for f in [
            "data",
            "split.start",
            "split.test_half_months",
            "model.variants",
            "model.arch.predictor_channels",
            "train.lr_grid",
            "train.patience",
        ] {
            assert!(fields.contains(&f), "{f} missing from {msgs:?}");
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::parse(&format!("{MINIMAL}\n[train]\nlearning_rate = 1.0\n"), Path::new("."), &Overrides::default())
            .unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }
}
