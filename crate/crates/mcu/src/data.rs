//! Matrix containers and the preprocessing transforms applied before
//! unfolding: covariate standardization, response centering/scaling and
//! the Gram matrix of the scaled responses.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{McuError, Result};

/// Standardized control-variable matrix (N samples by P variables).
///
/// Keeps the column means and standard deviations so points can be mapped
/// back to original control units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateMatrix {
    pub values: DMatrix<f64>,
    pub column_means: Vec<f64>,
    pub column_stds: Vec<f64>,
    pub standardized: bool,
}

/// Centered and globally scaled response matrix (N samples by M = n*d
/// flattened coordinates).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResponseMatrix {
    pub values: DMatrix<f64>,
    pub column_means: Vec<f64>,
    pub global_scale: f64,
    pub points_per_cloud: usize,
    pub ambient_dim: usize,
}

/// Symmetric positive semidefinite Gram matrix of response rows.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(McuError::NonFiniteInput(i, j));
            }
        }
    }
    Ok(())
}

/// Sample mean and standard deviation (denominator N-1) of a column.
fn column_stats(m: &DMatrix<f64>, j: usize) -> (f64, f64) {
    let n = m.nrows() as f64;
    let mean = m.column(j).sum() / n;
    let ss: f64 = m.column(j).iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Standardize each control-variable column to sample mean 0 and sample
/// variance 1 (denominator N-1).
pub fn standardize_covariates(raw: &DMatrix<f64>) -> Result<CovariateMatrix> {
    if raw.nrows() < 2 {
        return Err(McuError::ShapeMismatch {
            expected: "N >= 2 rows".into(),
            got: format!("{} rows", raw.nrows()),
        });
    }
    check_finite(raw)?;
    let mut values = raw.clone();
    let mut column_means = Vec::with_capacity(raw.ncols());
    let mut column_stds = Vec::with_capacity(raw.ncols());
    for j in 0..raw.ncols() {
        let (mean, std) = column_stats(raw, j);
        if std == 0.0 {
            return Err(McuError::ZeroVarianceColumn(j));
        }
        for i in 0..raw.nrows() {
            values[(i, j)] = (raw[(i, j)] - mean) / std;
        }
        column_means.push(mean);
        column_stds.push(std);
    }
    Ok(CovariateMatrix {
        values,
        column_means,
        column_stds,
        standardized: true,
    })
}

impl CovariateMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    /// Map a standardized covariate vector back to original control units.
    pub fn unstandardize_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.column_stds.iter().zip(&self.column_means))
            .map(|(v, (s, m))| v * s + m)
            .collect()
    }

    /// Map a raw covariate vector into the standardized frame.
    pub fn standardize_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.column_stds.iter().zip(&self.column_means))
            .map(|(v, (s, m))| (v - m) / s)
            .collect()
    }
}

/// Center every response column and scale the whole matrix by the
/// reciprocal of the average per-column sample standard deviation, so
/// the average column std becomes exactly 1.
pub fn center_scale_responses(
    raw: &DMatrix<f64>,
    points_per_cloud: usize,
    ambient_dim: usize,
) -> Result<ResponseMatrix> {
    if raw.nrows() < 2 {
        return Err(McuError::ShapeMismatch {
            expected: "N >= 2 rows".into(),
            got: format!("{} rows", raw.nrows()),
        });
    }
    if points_per_cloud * ambient_dim != raw.ncols() {
        return Err(McuError::ShapeMismatch {
            expected: format!("M = {} * {}", points_per_cloud, ambient_dim),
            got: format!("M = {}", raw.ncols()),
        });
    }
    check_finite(raw)?;
    let mut values = raw.clone();
    let mut column_means = Vec::with_capacity(raw.ncols());
    let mut std_sum = 0.0;
    for j in 0..raw.ncols() {
        let (mean, std) = column_stats(raw, j);
        for i in 0..raw.nrows() {
            values[(i, j)] -= mean;
        }
        column_means.push(mean);
        std_sum += std;
    }
    let avg_std = std_sum / raw.ncols() as f64;
    if avg_std == 0.0 {
        return Err(McuError::AllZeroVariance);
    }
    let global_scale = 1.0 / avg_std;
    values *= global_scale;
    Ok(ResponseMatrix {
        values,
        column_means,
        global_scale,
        points_per_cloud,
        ambient_dim,
    })
}

impl ResponseMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn m(&self) -> usize {
        self.values.ncols()
    }

    /// Apply the stored centering/scaling to a new flattened response,
    /// mapping it into the same frame as the training rows.
    pub fn transform_row(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.m() {
            return Err(McuError::DimensionMismatch {
                expected: self.m(),
                got: raw.len(),
            });
        }
        Ok(raw
            .iter()
            .zip(&self.column_means)
            .map(|(v, m)| (v - m) * self.global_scale)
            .collect())
    }

    /// Squared Euclidean distance between two rows.
    pub fn row_sq_dist(&self, i: usize, j: usize) -> f64 {
        let mut acc = 0.0;
        for c in 0..self.m() {
            let d = self.values[(i, c)] - self.values[(j, c)];
            acc += d * d;
        }
        acc
    }
}

/// Gram matrix Y * Y^T of the centered/scaled responses.
pub fn gram(responses: &ResponseMatrix) -> GramMatrix {
    let y = &responses.values;
    let mut g = y * y.transpose();
    // enforce exact symmetry against rounding
    let n = g.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (g[(i, j)] + g[(j, i)]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    GramMatrix { values: g }
}

// ---------------------------------------------------------------------------
// CSV matrix IO

/// Read a dense matrix from CSV. A header row is tolerated (detected by a
/// non-numeric first row); ragged rows are rejected.
pub fn read_matrix_csv(path: &std::path::Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    parse_matrix_csv(&text)
}

pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(vals) => {
                match width {
                    None => width = Some(vals.len()),
                    Some(w) if w != vals.len() => {
                        return Err(McuError::Csv(format!(
                            "ragged row at line {}: expected {} fields, got {}",
                            lineno + 1,
                            w,
                            vals.len()
                        )))
                    }
                    _ => {}
                }
                rows.push(vals);
            }
            Err(_) if rows.is_empty() && lineno == 0 => {
                // header row
                continue;
            }
            Err(e) => {
                return Err(McuError::Csv(format!(
                    "bad value at line {}: {}",
                    lineno + 1,
                    e
                )))
            }
        }
    }
    let ncols = width.ok_or_else(|| McuError::Csv("empty matrix".into()))?;
    let nrows = rows.len();
    let mut m = DMatrix::zeros(nrows, ncols);
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

/// Write a matrix as CSV with round-trippable decimal text.
pub fn write_matrix_csv(path: &std::path::Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    format_matrix_csv(&mut out, m);
    crate::io_util::write_atomic(path, out.as_bytes())
}

pub fn format_matrix_csv(out: &mut String, m: &DMatrix<f64>) {
    use std::fmt::Write;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            // {:?} on f64 prints the shortest representation that
            // round-trips through parse
            write!(out, "{:?}", m[(i, j)]).unwrap();
        }
        out.push('\n');
    }
}
