use super::{EstimateSummary, InferenceError};
use crate::numerics::stats::{ess, mean, quantile_sorted};

pub const MIN_DRAWS: usize = 1000;

/// Posterior mean, equal-tailed 95% interval and effective sample size of
/// draws stored chain after chain.
pub fn summarize(draws: &[f64], chains: usize, estimator: &str) -> Result<EstimateSummary, InferenceError> {
    if draws.len() < MIN_DRAWS {
        return Err(InferenceError::TooFewDraws {
            have: draws.len(),
            need: MIN_DRAWS,
        });
    }
    if let Some(bad) = draws.iter().find(|v| !v.is_finite()) {
        return Err(InferenceError::NonFinite(*bad));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(EstimateSummary::new(
        estimator,
        mean(draws),
        quantile_sorted(&sorted, 0.025),
        quantile_sorted(&sorted, 0.975),
        Some(ess(draws, chains)),
        Vec::new(),
    ))
}
