//! Ridge regression of the embedding on standardized covariates, and
//! the evaluation metrics used to compare methods.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::CovariateMatrix;
use crate::error::{McuError, Result};
use crate::unfold::Embedding;

/// Intercept-free linear map from standardized covariates to the
/// embedding space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionModel {
    /// P x m_tilde coefficient matrix.
    pub b_hat: DMatrix<f64>,
    pub lambda: f64,
}

/// B = (X^T X + lambda I)^-1 X^T Y~ via a Cholesky solve. At lambda = 0
/// this is the ordinary least-squares solution.
pub fn fit_ridge(x: &CovariateMatrix, embedding: &Embedding, lambda: f64) -> Result<RegressionModel> {
    let xt = x.values.transpose();
    let mut lhs = &xt * &x.values;
    for i in 0..lhs.nrows() {
        lhs[(i, i)] += lambda;
    }
    let rhs = xt * &embedding.y_tilde;
    let b_hat = lhs
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .ok_or(McuError::SingularSystem)?;
    if b_hat.iter().any(|v| !v.is_finite()) {
        return Err(McuError::SingularSystem);
    }
    Ok(RegressionModel { b_hat, lambda })
}

impl RegressionModel {
    /// Predicted embedding point for one standardized covariate vector.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.b_hat.nrows() {
            return Err(McuError::DimensionMismatch {
                expected: self.b_hat.nrows(),
                got: x.len(),
            });
        }
        let xv = nalgebra::RowDVector::from_row_slice(x);
        let out = xv * &self.b_hat;
        Ok(out.iter().copied().collect())
    }

    /// Row-wise predictions for a standardized covariate matrix.
    pub fn predict_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x * &self.b_hat
    }
}

/// Relative reconstruction error ||y~ - y^||_2 / ||y~||_2.
pub fn rre(y_tilde: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y_tilde.len() != y_hat.len() {
        return Err(McuError::DimensionMismatch {
            expected: y_tilde.len(),
            got: y_hat.len(),
        });
    }
    let norm: f64 = y_tilde.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(McuError::ZeroReference);
    }
    let diff: f64 = y_tilde
        .iter()
        .zip(y_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm)
}

/// Euclidean deviation between recovered and true control settings, in
/// original (unstandardized) units.
pub fn covariate_deviation(x_hat: &[f64], x_nom: &[f64]) -> Result<f64> {
    if x_hat.len() != x_nom.len() {
        return Err(McuError::DimensionMismatch {
            expected: x_nom.len(),
            got: x_hat.len(),
        });
    }
    Ok(x_hat
        .iter()
        .zip(x_nom)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Per-point Euclidean distances between two corresponded point clouds
/// flattened point-major, restricted to `mask` when given.
pub fn pointwise_deviation(
    y_hat: &[f64],
    y_nom: &[f64],
    ambient_dim: usize,
    mask: Option<&[usize]>,
) -> Result<Vec<f64>> {
    if y_hat.len() != y_nom.len() || y_hat.len() % ambient_dim != 0 {
        return Err(McuError::ShapeMismatch {
            expected: format!("{} values", y_nom.len()),
            got: format!("{} values", y_hat.len()),
        });
    }
    let n_points = y_hat.len() / ambient_dim;
    let point_dist = |p: usize| -> f64 {
        let mut acc = 0.0;
        for c in 0..ambient_dim {
            let d = y_hat[p * ambient_dim + c] - y_nom[p * ambient_dim + c];
            acc += d * d;
        }
        acc.sqrt()
    };
    Ok(match mask {
        Some(indices) => indices.iter().map(|&p| point_dist(p)).collect(),
        None => (0..n_points).map(point_dist).collect(),
    })
}

/// Quantile with the linear-interpolation convention: the q-quantile
/// sits at fractional position (len-1)*q of the sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

pub fn summarize(values: &[f64]) -> SummaryStats {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    SummaryStats {
        median: quantile(&sorted, 0.5),
        q1,
        q3,
        iqr: q3 - q1,
        min: sorted.first().copied().unwrap_or(f64::NAN),
        max: sorted.last().copied().unwrap_or(f64::NAN),
        count: sorted.len(),
    }
}
