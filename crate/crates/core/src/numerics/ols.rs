use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::NumericsError;

const JITTER: f64 = 1e-10;
const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct LinearFit {
    pub coefficients: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub residual_variance: f64,
    /// `(XᵀX)⁻¹`, kept for prediction standard errors.
    pub xtx_inv: DMatrix<f64>,
}

impl LinearFit {
    /// Standard error of the fitted mean at design row `row`.
    pub fn prediction_se(&self, row: &[f64]) -> f64 {
        let p = row.len();
        let mut q = 0.0;
        for i in 0..p {
            for j in 0..p {
                q += row[i] * self.covariance[(i, j)] * row[j];
            }
        }
        q.max(0.0).sqrt()
    }
}

/// Numerical rank of a symmetric positive semi-definite matrix after unit
/// diagonal scaling.
fn numerical_rank(a: &DMatrix<f64>) -> usize {
    let p = a.nrows();
    let d: Vec<f64> = (0..p).map(|i| a[(i, i)].max(0.0).sqrt()).collect();
    if d.contains(&0.0) {
        // A zero column can never be in the span; count the others.
        let nonzero: Vec<usize> = (0..p).filter(|&i| d[i] > 0.0).collect();
        let sub = DMatrix::from_fn(nonzero.len(), nonzero.len(), |i, j| a[(nonzero[i], nonzero[j])]);
        return if sub.nrows() == 0 { 0 } else { numerical_rank(&sub) };
    }
    let scaled = DMatrix::from_fn(p, p, |i, j| a[(i, j)] / (d[i] * d[j]));
    let eig = scaled.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(0.0, f64::max);
    eig.iter().filter(|&&v| v > RANK_TOL * max).count()
}

/// Cholesky factor of a symmetric positive definite matrix, retrying once
/// with a `1e-10` diagonal jitter.
pub fn cholesky(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, NumericsError> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c);
    }
    let p = a.nrows();
    let scale = (0..p).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let jittered = a + DMatrix::identity(p, p) * (JITTER * scale);
    Cholesky::new(jittered).ok_or(NumericsError::NotPositiveDefinite { dim: p })
}

pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>, NumericsError> {
    let inv = cholesky(a)?.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Ordinary least squares via the normal equations.
pub fn ols_fit(design: &DMatrix<f64>, response: &[f64]) -> Result<LinearFit, NumericsError> {
    let (n, p) = design.shape();
    if n != response.len() {
        return Err(NumericsError::DimensionMismatch {
            rows: n,
            len: response.len(),
        });
    }
    let xtx = design.transpose() * design;
    let rank = if n < p { n.min(numerical_rank(&xtx)) } else { numerical_rank(&xtx) };
    if rank < p {
        return Err(NumericsError::RankDeficient { columns: p, rank });
    }
    let y = DVector::from_column_slice(response);
    let xty = design.transpose() * &y;
    let chol = cholesky(&xtx)?;
    let beta = chol.solve(&xty);
    let fitted_v = design * &beta;
    let fitted: Vec<f64> = fitted_v.iter().copied().collect();
    let residuals: Vec<f64> = response.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let ssr: f64 = residuals.iter().map(|r| r * r).sum();
    let residual_variance = if n > p { ssr / (n - p) as f64 } else { 0.0 };
    let inv = chol.inverse();
    let xtx_inv = (&inv + inv.transpose()) * 0.5;
    let covariance = &xtx_inv * residual_variance;
    let standard_errors = (0..p).map(|i| covariance[(i, i)].max(0.0).sqrt()).collect();
    Ok(LinearFit {
        coefficients: beta.iter().copied().collect(),
        covariance,
        residuals,
        fitted,
        standard_errors,
        residual_variance,
        xtx_inv,
    })
}

/// Build an `n × p` design from column slices.
pub fn design_from_columns(columns: &[&[f64]]) -> DMatrix<f64> {
    let n = columns.first().map_or(0, |c| c.len());
    DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i])
}
