use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{NeighborSet, LAYOUT_ROWS};
use crate::ingest::{Determinant, DeterminantTable};

/// Per-determinant affine rescaling. Rates pass through unchanged; the sex
/// ratio is min-max scaled over the city. Margins of error share the scale
/// of their estimate but not its offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeterminantScaler {
    pub determinants: Vec<Determinant>,
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl DeterminantScaler {
    pub fn fit(table: &DeterminantTable) -> Self {
        let k = table.determinants.len();
        let mut offset = vec![0.0; k];
        let mut scale = vec![1.0; k];
        for (j, d) in table.determinants.iter().enumerate() {
            if d.is_rate() {
                continue;
            }
            let (lo, hi) = table
                .values
                .values()
                .map(|row| row[j].estimate)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if hi > lo {
                offset[j] = lo;
                scale[j] = 1.0 / (hi - lo);
            } else if lo.is_finite() {
                offset[j] = lo;
            }
        }
        Self {
            determinants: table.determinants.clone(),
            offset,
            scale,
        }
    }
}

/// Determinant estimates and margins of error laid out over the neighbour
/// rows: `values[row][determinant][{estimate, moe}]`, padded rows zero.
#[derive(Clone, Debug, PartialEq)]
pub struct GateInputMap {
    pub target_tract: String,
    pub k: usize,
    pub pad_mask: [bool; LAYOUT_ROWS],
    pub values: Vec<f64>,
}

impl GateInputMap {
    pub fn build(set: &NeighborSet, table: &DeterminantTable, scaler: &DeterminantScaler) -> Result<Self> {
        if scaler.determinants != table.determinants {
            return Err(Error::shape(
                "GateInputMap::build",
                format!("scaler {:?} vs table {:?}", scaler.determinants, table.determinants),
            ));
        }
        let k = table.determinants.len();
        let mut values = vec![0.0; LAYOUT_ROWS * k * 2];
        for row in 0..LAYOUT_ROWS {
            let Some(tract) = set.tract_at(row) else {
                continue;
            };
            let est = table
                .values
                .get(tract)
                .ok_or_else(|| Error::UnknownTract(tract.to_string()))?;
            for j in 0..k {
                let base = (row * k + j) * 2;
                values[base] = (est[j].estimate - scaler.offset[j]) * scaler.scale[j];
                values[base + 1] = est[j].moe * scaler.scale[j];
            }
        }
        Ok(Self {
            target_tract: set.target.clone(),
            k,
            pad_mask: set.pad_mask(),
            values,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        [LAYOUT_ROWS, self.k, 2]
    }

    pub fn get(&self, row: usize, determinant: usize, channel: usize) -> f64 {
        self.values[(row * self.k + determinant) * 2 + channel]
    }
}
