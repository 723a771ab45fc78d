use super::draws::{Param, PosteriorDraws};
use super::{EstimateSummary, InferenceError, UNSTABLE_WIDTH};
use crate::numerics::stats::{ess, mean, quantile_sorted};

/// Share of non-finite ratio draws above which the summary is unstable.
pub const MAX_NON_FINITE: f64 = 0.001;

/// Index-paired ratio `Δβ_i / Δπ_i`, with no truncation of extreme ratios.
///
/// Non-finite ratios (Δπ_i = 0) are kept in the returned draws but left out of
/// the summary moments; more than 0.1% of them marks the summary unstable.
pub fn late(numerator: &PosteriorDraws, denominator: &PosteriorDraws, estimator: &str) -> Result<(PosteriorDraws, EstimateSummary), InferenceError> {
    let db = numerator.require(Param::DeltaBeta)?;
    let dp = denominator.require(Param::DeltaPi)?;
    if db.len() != dp.len() {
        return Err(InferenceError::DrawMismatch {
            numerator: db.len(),
            denominator: dp.len(),
        });
    }
    let ratio: Vec<f64> = db.iter().zip(dp).map(|(b, p)| b / p).collect();
    let summary = summarize_ratio(&ratio, numerator.chains, estimator)?;
    let mut warnings = numerator.warnings.clone();
    warnings.extend(denominator.warnings.iter().cloned());
    let draws = PosteriorDraws {
        chains: numerator.chains,
        per_chain: numerator.per_chain,
        burn_in: numerator.burn_in,
        thin: numerator.thin,
        seed: numerator.seed,
        stream_id: numerator.stream_id,
        columns: vec![
            (Param::DeltaBeta, db.to_vec()),
            (Param::DeltaPi, dp.to_vec()),
            (Param::Late, ratio),
        ],
        warnings,
    };
    Ok((draws, summary))
}

fn summarize_ratio(ratio: &[f64], chains: usize, estimator: &str) -> Result<EstimateSummary, InferenceError> {
    let finite: Vec<f64> = ratio.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < super::summary::MIN_DRAWS {
        return Err(InferenceError::TooFewDraws {
            have: finite.len(),
            need: super::summary::MIN_DRAWS,
        });
    }
    let dropped = ratio.len() - finite.len();
    let mut warnings = Vec::new();
    let mut forced_unstable = false;
    if dropped > 0 {
        let share = dropped as f64 / ratio.len() as f64;
        warnings.push(format!("{dropped} non-finite ratio draws excluded from moments"));
        forced_unstable = share > MAX_NON_FINITE;
    }
    let mut sorted = finite.clone();
    sorted.sort_by(f64::total_cmp);
    let ess_value = if dropped == 0 { ess(ratio, chains) } else { ess(&finite, 1) };
    let mut s = EstimateSummary::new(
        estimator,
        mean(&finite),
        quantile_sorted(&sorted, 0.025),
        quantile_sorted(&sorted, 0.975),
        Some(ess_value),
        warnings,
    );
    if forced_unstable {
        s.unstable = true;
    }
    debug_assert!(s.unstable || s.upper - s.lower <= UNSTABLE_WIDTH);
    Ok(s)
}
