use nalgebra::{DMatrix, DVector};

use super::ols::{cholesky, spd_inverse};
use super::stats::expit;
use super::NumericsError;

pub const SCORE_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 100;
pub const SEPARATION_NORM: f64 = 1e3;
/// Linear predictors beyond this put fitted probabilities within 1e-16 of 0 or 1.
const SATURATED_ETA: f64 = 37.0;

#[derive(Clone, Debug)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    /// Inverse Fisher information at the returned coefficients.
    pub covariance: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
}

pub fn logistic_log_likelihood(design: &DMatrix<f64>, response: &[f64], beta: &[f64]) -> f64 {
    let b = DVector::from_column_slice(beta);
    let eta = design * b;
    eta.iter()
        .zip(response)
        .map(|(&e, &y)| {
            // log(1 + exp(e)) computed without overflow
            let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            y * e - softplus
        })
        .sum()
}

/// Logistic regression by iteratively reweighted least squares (Newton's
/// method with step halving).
///
/// Stops when the max-norm of the score falls below `1e-8`. Fails with the
/// per-iteration score trace when the coefficient norm passes `1e3`
/// or a fitted probability saturates at 0 or 1 (separation), or after 100
/// iterations.
pub fn logistic_fit(design: &DMatrix<f64>, response: &[f64]) -> Result<GlmFit, NumericsError> {
    let (n, p) = design.shape();
    if n != response.len() {
        return Err(NumericsError::DimensionMismatch {
            rows: n,
            len: response.len(),
        });
    }
    if let Some(bad) = response.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(NumericsError::NonBinaryResponse { value: *bad });
    }
    let y = DVector::from_column_slice(response);
    let mut beta = DVector::zeros(p);
    let mut ll = logistic_log_likelihood(design, response, beta.as_slice());
    let mut trace = Vec::new();

    for iter in 0..=MAX_ITER {
        let eta = design * &beta;
        let prob = eta.map(expit);
        let score = design.transpose() * (&y - &prob);
        let score_norm = score.amax();
        trace.push(score_norm);
        let weights = prob.map(|q| q * (1.0 - q));
        let info = information(design, &weights);

        if score_norm < SCORE_TOL {
            if eta.amax() > SATURATED_ETA {
                return Err(NumericsError::Separation { trace });
            }
            return Ok(GlmFit {
                coefficients: beta.iter().copied().collect(),
                covariance: spd_inverse(&info)?,
                converged: true,
                iterations: iter,
                log_likelihood: ll,
            });
        }
        if iter == MAX_ITER {
            break;
        }
        let step = cholesky(&info)
            .map_err(|_| NumericsError::Separation { trace: trace.clone() })?
            .solve(&score);
        let mut scale = 1.0;
        let mut next = &beta + &step;
        let mut next_ll = logistic_log_likelihood(design, response, next.as_slice());
        while next_ll < ll - 1e-12 * ll.abs().max(1.0) && scale > 1e-6 {
            scale *= 0.5;
            next = &beta + &step * scale;
            next_ll = logistic_log_likelihood(design, response, next.as_slice());
        }
        beta = next;
        ll = next_ll;
        if beta.norm() > SEPARATION_NORM || !beta.iter().all(|b| b.is_finite()) {
            return Err(NumericsError::Separation { trace });
        }
    }
    Err(NumericsError::NonConvergence { trace })
}

fn information(design: &DMatrix<f64>, weights: &DVector<f64>) -> DMatrix<f64> {
    let (n, p) = design.shape();
    let mut info = DMatrix::zeros(p, p);
    for i in 0..n {
        let w = weights[i];
        for a in 0..p {
            let xa = design[(i, a)] * w;
            for b in a..p {
                info[(a, b)] += xa * design[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            info[(a, b)] = info[(b, a)];
        }
    }
    info
}
