use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Standard deviations below this are treated as constant dimensions.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-dimension z-scoring fitted on the gate-training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 for constant dimensions.
    pub std: Vec<f64>,
}

pub fn fit_normalizer(rows: ArrayView2<f64>) -> Result<FeatureNormalizer> {
    let n = rows.nrows();
    if n == 0 {
        return Err(Error::invalid("cannot fit a normalizer on zero rows"));
    }
    let mean = rows.mean_axis(Axis(0)).expect("nonempty");
    let mut var = vec![0.0; rows.ncols()];
    for row in rows.outer_iter() {
        for (j, &x) in row.iter().enumerate() {
            let d = x - mean[j];
            var[j] += d * d;
        }
    }
    let std = var
        .into_iter()
        .map(|v| {
            let s = (v / n as f64).sqrt();
            if s < STD_FLOOR {
                1.0
            } else {
                s
            }
        })
        .collect();
    Ok(FeatureNormalizer {
        mean: mean.to_vec(),
        std,
    })
}

impl FeatureNormalizer {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &mut [f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
        Ok(())
    }

    pub fn apply_rows(&self, rows: &mut Array2<f64>) -> Result<()> {
        if rows.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: rows.ncols(),
            });
        }
        for mut row in rows.outer_iter_mut() {
            self.apply(row.as_slice_mut().expect("standard layout"))?;
        }
        Ok(())
    }
}
