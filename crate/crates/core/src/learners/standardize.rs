use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-feature z-normalization fitted on training rows.
///
/// Uses the population standard deviation (divide by `n`). Columns with
/// zero spread map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "standardizer needs at least 2 rows, got {}",
                rows.len()
            )));
        }
        let width = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != width) {
            return Err(Error::SchemaMismatch {
                expected: width,
                found: bad.len(),
            });
        }
        let n = rows.len() as f64;
        let means: Vec<f64> = (0..width)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
            .collect();
        let stds = (0..width)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n;
                var.sqrt()
            })
            .collect();
        Ok(Standardizer { means, stds })
    }

    pub fn width(&self) -> usize {
        self.means.len()
    }

    fn is_constant(&self, j: usize) -> bool {
        self.stds[j] <= 1e-12 * self.means[j].abs().max(1.0)
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.width() {
            return Err(Error::SchemaMismatch {
                expected: self.width(),
                found: row.len(),
            });
        }
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                if self.is_constant(j) {
                    0.0
                } else {
                    (x - self.means[j]) / self.stds[j]
                }
            })
            .collect())
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.transform_row(r)).collect()
    }
}
