use std::io::Write;
use std::path::Path;
use std::time::Instant;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{IfgWeights, SplitPlan, TrainConfig};
use crate::autodiff::{Adam, Array, Params, Tape, Var};
use crate::calendar::DateRange;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geo::FeatureTensor;
use crate::model::{Model, VariantKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Learning-rate selection with early stopping on validation.
    Select,
    /// Retraining on training plus validation days.
    Final,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub phase: Phase,
    pub lr: f64,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: Option<f64>,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Params,
    pub learning_rate: f64,
    pub epochs: usize,
    pub best_val_mse: f64,
    pub log: Vec<LogRow>,
}

struct Objective<'a> {
    model: &'a Model,
    data: &'a Dataset,
    ifg: Option<IfgWeights>,
    lambda: f64,
}

impl<'a> Objective<'a> {
    fn new(model: &'a Model, data: &'a Dataset) -> Result<Self> {
        let ifg = match model.variant.kind {
            VariantKind::Ifg => Some(IfgWeights::new(&data.populations, &data.shares)?),
            _ => None,
        };
        Ok(Self {
            model,
            data,
            ifg,
            lambda: model.variant.ifg_weight,
        })
    }

    /// Mean over `days` of each day's MSE plus the weighted fairness gap.
    fn loss(&self, tape: &mut Tape, params: &Params, days: &[NaiveDate]) -> Result<Var> {
        let gates = self.data.gate_refs();
        let mut total: Option<Var> = None;
        for &day in days {
            let feats = self.data.features_for_day(day)?;
            let refs: Vec<&FeatureTensor> = feats.iter().collect();
            let targets = self.data.targets_for_day(day)?;
            let z = self.model.reported_var(tape, params, &refs, gates.as_deref())?;
            let mut l = tape.mse(z, &targets)?;
            if let Some(w) = &self.ifg {
                if let Some(gap) = w.term(tape, z, targets.iter().sum())? {
                    let gap = tape.scale(gap, self.lambda);
                    l = tape.add(l, gap)?;
                }
            }
            total = Some(match total {
                Some(t) => tape.add(t, l)?,
                None => l,
            });
        }
        let total = total.ok_or_else(|| Error::Invalid("empty batch".into()))?;
        Ok(tape.scale(total, 1.0 / days.len() as f64))
    }
}

/// Mean squared error of reported-crime predictions over every in-city
/// tract and every day of `range`.
pub fn evaluate_mse(model: &Model, params: &Params, data: &Dataset, range: DateRange) -> Result<f64> {
    let preds = data.predict(model, params, range)?;
    let mut sq = 0.0;
    for (d, day) in range.days().enumerate() {
        let targets = data.targets_for_day(day)?;
        for (p, t) in preds[d * data.len()..(d + 1) * data.len()].iter().zip(&targets) {
            sq += (t - p.z) * (t - p.z);
        }
    }
    Ok(sq / preds.len() as f64)
}

/// Gradient of the mean per-day loss over `days`, accumulated one day at a
/// time without any parameter update.
pub fn epoch_gradient(model: &Model, params: &Params, data: &Dataset, days: &[NaiveDate]) -> Result<Vec<Array>> {
    let obj = Objective::new(model, data)?;
    let mut work = params.clone();
    work.zero_grad();
    for &day in days {
        let mut tape = Tape::new();
        let l = obj.loss(&mut tape, &work, &[day])?;
        let l = tape.scale(l, 1.0 / days.len() as f64);
        tape.backward(l, &mut work)?;
    }
    Ok(work.iter().map(|p| p.grad.clone()).collect())
}

struct RunResult {
    params: Params,
    best_epoch: usize,
    best_val: f64,
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15)
}

#[allow(clippy::too_many_arguments)]
fn run(
    obj: &Objective,
    cfg: &TrainConfig,
    phase: Phase,
    lr: f64,
    targets: DateRange,
    validation: Option<DateRange>,
    epochs: usize,
    log: &mut Vec<LogRow>,
) -> Result<RunResult> {
    let started = Instant::now();
    let mut params = obj.model.init_params(cfg.seed)?;
    let mut adam = Adam::with_constants(lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, &params)?;
    let mut rng = shuffle_rng(cfg.seed);
    let mut days: Vec<NaiveDate> = targets.days().collect();
    let mut best = (0usize, f64::INFINITY, params.clone());
    let mut since_best = 0usize;

    for epoch in 1..=epochs {
        if cfg.shuffle {
            days.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in days.chunks(cfg.batch_days).enumerate() {
            params.zero_grad();
            let mut tape = Tape::new();
            let l = obj.loss(&mut tape, &params, chunk)?;
            let value = tape.value(l).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    value,
                    epoch,
                    batch: b,
                    lr,
                });
            }
            tape.backward(l, &mut params)?;
            adam.step(&mut params);
            loss_sum += value;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let val_mse = validation
            .map(|v| evaluate_mse(obj.model, &params, obj.data, v))
            .transpose()?;
        log.push(LogRow {
            phase,
            lr,
            epoch,
            train_loss,
            val_mse,
            wall_time: started.elapsed().as_secs_f64(),
        });
        match val_mse {
            Some(v) if v < best.1 => {
                best = (epoch, v, params.clone());
                since_best = 0;
            }
            Some(_) => {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
            None => {}
        }
    }
    if validation.is_none() {
        return Ok(RunResult {
            params,
            best_epoch: epochs,
            best_val: f64::NAN,
        });
    }
    if best.0 == 0 {
        return Err(Error::Invalid(format!("no finite validation error at learning rate {lr}")));
    }
    Ok(RunResult {
        params: best.2,
        best_epoch: best.0,
        best_val: best.1,
    })
}

/// Selects the learning rate and epoch budget on validation, then retrains
/// from the same initialisation on training plus validation days.
pub fn train(model: &Model, data: &Dataset, split: &SplitPlan, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let errs = cfg.validate("train");
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    if model.days != cfg.lookback {
        return Err(Error::Config(vec![format!(
            "train.lookback: {} differs from the model's {}",
            cfg.lookback, model.days
        )]));
    }
    let obj = Objective::new(model, data)?;
    let train_days = split.train_targets(cfg.lookback)?;
    let mut log = Vec::new();
    let mut chosen: Option<(f64, usize, f64)> = None;
    for &lr in &cfg.lr_grid {
        let r = run(
            &obj,
            cfg,
            Phase::Select,
            lr,
            train_days,
            Some(split.validation),
            cfg.max_epochs,
            &mut log,
        )?;
        if chosen.map_or(true, |c| r.best_val < c.2) {
            chosen = Some((lr, r.best_epoch, r.best_val));
        }
    }
    let (lr, epochs, best_val) = chosen.expect("non-empty grid");
    let all_days = split.train_and_validation_targets(cfg.lookback)?;
    let fin = run(&obj, cfg, Phase::Final, lr, all_days, None, epochs, &mut log)?;
    Ok(TrainOutcome {
        params: fin.params,
        learning_rate: lr,
        epochs,
        best_val_mse: best_val,
        log,
    })
}

pub fn write_training_log(path: impl AsRef<Path>, log: &[LogRow], header_comment: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    if let Some(c) = header_comment {
        writeln!(file, "# {c}").map_err(|e| Error::io(path, e))?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["phase", "epoch", "train_loss", "val_mse", "lr", "wall_time"])
        .map_err(|e| Error::csv(path, e))?;
    for r in log {
        w.write_record([
            match r.phase {
                Phase::Select => "select".to_string(),
                Phase::Final => "final".to_string(),
            },
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_mse.map_or(String::new(), |v| v.to_string()),
            r.lr.to_string(),
            format!("{:.3}", r.wall_time),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::tiny_city;
    use crate::model::{ArchConfig, ModelVariant};

    fn arch() -> ArchConfig {
        ArchConfig {
            predictor_channels: vec![3],
            predictor_kernel: [3, 3],
            gate_channels: vec![2],
            gate_kernel: [3, 3],
        }
    }

    fn setup(variant: ModelVariant) -> (Model, Dataset, SplitPlan, TrainConfig) {
        let city = tiny_city(40);
        let cfg = TrainConfig {
            lr_grid: vec![1e-2, 1e-3],
            max_epochs: 6,
            patience: 2,
            lookback: 4,
            neighbors: 2,
            seed: 3,
            ..TrainConfig::default()
        };
        let model = Model::new(variant, arch(), cfg.lookback, 2).unwrap();
        let r = |a: usize, b: usize| DateRange::new(city.range.day(a), city.range.day(b)).unwrap();
        let split = SplitPlan::new(r(0, 24), r(25, 29), r(30, 39)).unwrap();
        let data = Dataset::fit(&city, &model, cfg.neighbors, split.train).unwrap();
        (model, data, split, cfg)
    }

    #[test]
    fn ifg_with_zero_weight_matches_uu() {
        let (m_uu, d, split, cfg) = setup(ModelVariant::uu());
        let m_ifg = Model::new(ModelVariant::ifg(0.0).unwrap(), arch(), cfg.lookback, 2).unwrap();
        let a = train(&m_uu, &d, &split, &cfg).unwrap();
        let b = train(&m_ifg, &d, &split, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!((a.learning_rate, a.epochs), (b.learning_rate, b.epochs));
    }

    #[test]
    fn rerun_is_deterministic_and_selection_consistent() {
        let (m, d, split, cfg) = setup(ModelVariant::tc());
        let a = train(&m, &d, &split, &cfg).unwrap();
        let b = train(&m, &d, &split, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        let sel: Vec<&LogRow> = a.log.iter().filter(|r| r.phase == Phase::Select).collect();
        let best = sel
            .iter()
            .filter_map(|r| r.val_mse)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best, a.best_val_mse);
        let row = sel.iter().find(|r| r.val_mse == Some(best)).unwrap();
        assert_eq!((row.lr, row.epoch), (a.learning_rate, a.epochs));
        let fin = a.log.iter().filter(|r| r.phase == Phase::Final).count();
        assert_eq!(fin, a.epochs);
    }

    #[test]
    fn gradient_independent_of_day_order() {
        let (m, d, split, cfg) = setup(ModelVariant::uu());
        let params = m.init_params(cfg.seed).unwrap();
        let mut days: Vec<NaiveDate> = split.train_targets(cfg.lookback).unwrap().days().collect();
        let g1 = epoch_gradient(&m, &params, &d, &days).unwrap();
        days.reverse();
        days.rotate_left(5);
        let g2 = epoch_gradient(&m, &params, &d, &days).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-3), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn early_stopping_respects_patience() {
        let (m, d, split, mut cfg) = setup(ModelVariant::uu_c());
        cfg.lr_grid = vec![0.5];
        cfg.max_epochs = 30;
        cfg.patience = 1;
        let out = train(&m, &d, &split, &cfg).unwrap();
        let vals: Vec<f64> = out
            .log
            .iter()
            .filter(|r| r.phase == Phase::Select)
            .map(|r| r.val_mse.unwrap())
            .collect();
        // with patience 1 every epoch but the last improves on the previous one
        let k = vals.len();
        assert!(vals[..k - 1].windows(2).all(|w| w[1] < w[0]), "{vals:?}");
        assert!(k == 30 || vals[k - 1] >= vals[k - 2]);
        assert_eq!(out.epochs, if k == 30 && vals[k - 1] < vals[k - 2] { 30 } else { k - 1 });
    }
}
