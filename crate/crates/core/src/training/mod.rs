//! Losses, the chronological split protocol and the two-phase trainer.

mod loss;
mod trainer;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::autodiff::Adam;
use crate::calendar::{add_half_months, DateRange};
use crate::error::{Error, Result};

pub use loss::{ifg_loss, ifg_pair, mse_loss, IfgWeights};
pub use trainer::{epoch_gradient, evaluate_mse, train, write_training_log, LogRow, Phase, TrainOutcome};

/// Contiguous, ordered train / validation / test ranges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: DateRange,
    pub validation: DateRange,
    pub test: DateRange,
}

impl SplitPlan {
    pub fn new(train: DateRange, validation: DateRange, test: DateRange) -> Result<Self> {
        let next = |r: DateRange| r.end + Duration::days(1);
        let mut errs = Vec::new();
        if validation.start != next(train) {
            errs.push(format!("validation must start on {} (day after training)", next(train)));
        }
        if test.start != next(validation) {
            errs.push(format!("test must start on {} (day after validation)", next(validation)));
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        Ok(Self {
            train,
            validation,
            test,
        })
    }

    /// Splits the period starting at `start` (the 1st or 16th of a month)
    /// into half-month blocks; the default 13 / 1 / 10 gives 6.5 months of
    /// training, half a month of validation and 5 months of testing.
    pub fn from_half_months(start: NaiveDate, train: u32, validation: u32, test: u32) -> Result<Self> {
        if train == 0 || validation == 0 || test == 0 {
            return Err(Error::Config(vec!["split: every range needs at least one half-month".into()]));
        }
        let day_before = |d: NaiveDate| d - Duration::days(1);
        let v0 = add_half_months(start, train)?;
        let t0 = add_half_months(v0, validation)?;
        let end = add_half_months(t0, test)?;
        Self::new(
            DateRange::new(start, day_before(v0))?,
            DateRange::new(v0, day_before(t0))?,
            DateRange::new(t0, day_before(end))?,
        )
    }

    pub fn study_period(&self) -> DateRange {
        DateRange {
            start: self.train.start,
            end: self.test.end,
        }
    }

    /// Training targets start once a full look-back window is available.
    pub fn train_targets(&self, lookback: usize) -> Result<DateRange> {
        let first = self.train.start + Duration::days(lookback as i64);
        DateRange::new(first, self.train.end).map_err(|_| {
            Error::Config(vec![format!(
                "split.train: range {} is too short for a {lookback}-day look-back",
                self.train
            )])
        })
    }

    /// Training targets followed by the validation range, for the final retrain.
    pub fn train_and_validation_targets(&self, lookback: usize) -> Result<DateRange> {
        Ok(DateRange {
            start: self.train_targets(lookback)?.start,
            end: self.validation.end,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_grid: Vec<f64>,
    pub max_epochs: usize,
    pub patience: usize,
    /// Days per optimizer step; each day contributes every in-city tract.
    pub batch_days: usize,
    pub seed: u64,
    /// Weight of the fairness-gap term for the IFG variant.
    pub ifg_weight: f64,
    /// Look-back length T in days.
    pub lookback: usize,
    pub neighbors: usize,
    pub shuffle: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_grid: vec![1e-2, 1e-3, 1e-4],
            max_epochs: 200,
            patience: 5,
            batch_days: 1,
            seed: 0,
            ifg_weight: 0.1,
            lookback: 14,
            neighbors: 8,
            shuffle: true,
            adam_beta1: Adam::BETA1,
            adam_beta2: Adam::BETA2,
            adam_eps: Adam::EPS,
        }
    }
}

impl TrainConfig {
    /// Every violated field, prefixed with `section`.
    pub fn validate(&self, section: &str) -> Vec<String> {
        let mut errs = Vec::new();
        let mut need = |ok: bool, field: &str, what: &str| {
            if !ok {
                errs.push(format!("{section}.{field}: {what}"));
            }
        };
        need(!self.lr_grid.is_empty(), "lr_grid", "must list at least one learning rate");
        need(
            self.lr_grid.iter().all(|&lr| lr > 0.0 && lr.is_finite()),
            "lr_grid",
            "learning rates must be positive",
        );
        need(self.max_epochs > 0, "max_epochs", "must be positive");
        need(self.patience > 0, "patience", "must be positive");
        need(self.batch_days > 0, "batch_days", "must be positive");
        need(
            self.ifg_weight >= 0.0 && self.ifg_weight.is_finite(),
            "ifg_weight",
            "must be non-negative",
        );
        need(self.lookback > 0, "lookback", "must be positive");
        need(self.neighbors <= 8, "neighbors", "at most 8 neighbours fit the layout");
        need((0.0..1.0).contains(&self.adam_beta1), "adam_beta1", "must lie in [0, 1)");
        need((0.0..1.0).contains(&self.adam_beta2), "adam_beta2", "must lie in [0, 1)");
        need(self.adam_eps > 0.0, "adam_eps", "must be positive");
        errs
    }
}
