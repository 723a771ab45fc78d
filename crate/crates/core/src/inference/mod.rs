//! Frequentist and Bayesian estimators of the jump in outcome (ATE) and of
//! its ratio to the jump in treatment probability (LATE).

pub mod ate;
pub mod denominator;
pub mod draws;
pub mod freq;
pub mod late;
pub mod summary;
pub mod window;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use ate::{sample_ate, AteData, AtePrior, AteSampler};
pub use denominator::{sample_denominator, DenomPrior};
pub use draws::{Param, PosteriorDraws};
pub use freq::{freq_ate, local_linear_jump};
pub use late::late;
pub use summary::summarize;
pub use window::{rd_points, window, BandwidthWindow, RdPoint, TreatmentCounts};

use crate::numerics::{NumericsError, RngStream};

/// 97.5% standard normal quantile.
pub const Z_975: f64 = 1.959_963_984_540_054;
/// Intervals wider than this (mmol/l) are flagged unstable.
pub const UNSTABLE_WIDTH: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error("bandwidth must be positive (got {0})")]
    Bandwidth(f64),
    #[error("no records {side} the threshold within bandwidth {h}")]
    EmptySide { side: &'static str, h: f64 },
    #[error("{n} records {side} the threshold; need at least {needed}")]
    TooFewPoints { side: &'static str, n: usize, needed: usize },
    #[error("local linear fit {side} the threshold: {source}")]
    SideFit {
        side: &'static str,
        #[source]
        source: NumericsError,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid prior: {0}")]
    Prior(String),
    #[error("invalid MCMC settings: {0}")]
    Mcmc(String),
    #[error("inconsistent treatment counts {0:?}")]
    Counts(TreatmentCounts),
    #[error("{have} draws available, at least {need} required")]
    TooFewDraws { have: usize, need: usize },
    #[error("non-finite draw {0}")]
    NonFinite(f64),
    #[error("draws lack parameter {0}")]
    MissingParameter(&'static str),
    #[error("numerator has {numerator} draws but denominator has {denominator}")]
    DrawMismatch { numerator: usize, denominator: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chains: 2,
            iterations: 12_500,
            burn_in: 2_500,
            thin: 1,
        }
    }
}

/// Chains get consecutive substreams, so at most this many fit between the
/// estimator stream offsets.
pub const MAX_CHAINS: usize = 8;

impl McmcConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.chains == 0 || self.chains > MAX_CHAINS {
            return Err(InferenceError::Mcmc(format!("chains must be in 1..={MAX_CHAINS} (got {})", self.chains)));
        }
        if self.thin == 0 {
            return Err(InferenceError::Mcmc("thin must be at least 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(InferenceError::Mcmc(format!(
                "burn_in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }

    pub fn retained_per_chain(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }

    pub fn keeps(&self, iteration: usize) -> bool {
        iteration >= self.burn_in && (iteration - self.burn_in).is_multiple_of(self.thin)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub estimator: String,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub ess: Option<f64>,
    pub unstable: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EstimateSummary {
    /// Unstable when the interval is wider than 10 or excludes the point.
    pub fn new(estimator: &str, point: f64, lower: f64, upper: f64, ess: Option<f64>, warnings: Vec<String>) -> Self {
        let unstable = upper - lower > UNSTABLE_WIDTH || point < lower || point > upper;
        Self {
            estimator: estimator.to_string(),
            point,
            lower,
            upper,
            ess,
            unstable,
            warnings,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "freq")]
    Freq,
    #[serde(rename = "wip")]
    Wip,
    #[serde(rename = "sip")]
    Sip,
    #[serde(rename = "late-unct")]
    LateUnct,
    #[serde(rename = "late-flex")]
    LateFlex,
    #[serde(rename = "late-cnst")]
    LateCnst,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [
        Estimator::Freq,
        Estimator::Wip,
        Estimator::Sip,
        Estimator::LateUnct,
        Estimator::LateFlex,
        Estimator::LateCnst,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Freq => "freq",
            Estimator::Wip => "wip",
            Estimator::Sip => "sip",
            Estimator::LateUnct => "late-unct",
            Estimator::LateFlex => "late-flex",
            Estimator::LateCnst => "late-cnst",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|e| e.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .iter()
            .copied()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown estimator `{s}`; valid: {}", Self::valid_names()))
    }
}

/// Priors and sampler settings shared by every estimator run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceSettings {
    pub mcmc: McmcConfig,
    pub wip: AtePrior,
    pub sip: AtePrior,
    pub fix: DenomPrior,
    pub fdp: DenomPrior,
    pub min_side: usize,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        Self {
            mcmc: McmcConfig::default(),
            wip: AtePrior::wip(),
            sip: AtePrior::sip(),
            fix: DenomPrior::fix(),
            fdp: DenomPrior::fdp(),
            min_side: window::DEFAULT_MIN_SIDE,
        }
    }
}

/// Substream offsets (within a replicate) of each sampler; chain `c` adds `c`.
/// fdp uses two substreams per chain.
pub mod streams {
    pub const WIP: u64 = 16;
    pub const SIP: u64 = 32;
    pub const UNC: u64 = 48;
    pub const FIX: u64 = 64;
    pub const FDP: u64 = 80;
}

/// Summaries plus any posterior draws produced along the way.
#[derive(Clone, Debug, Default)]
pub struct EstimateRun {
    pub results: Vec<(Estimator, Result<EstimateSummary, String>)>,
    pub draws: Vec<(Estimator, PosteriorDraws)>,
}

/// Run the requested estimators on one window. Samplers needed by several
/// estimators (the sip numerator of every LATE) run once. `base` supplies the
/// seed and the replicate's stream id; samplers use fixed offsets from it.
pub fn estimate_window(w: &BandwidthWindow, requested: &[Estimator], settings: &InferenceSettings, base: &RngStream, keep_draws: bool) -> EstimateRun {
    let mut run = EstimateRun::default();
    let data = AteData::from_window(w);
    let counts = w.counts();
    let ate = |prior: &AtePrior, offset: u64| AteSampler::new(prior.clone(), settings.mcmc.clone()).run(&data, &base.split(offset));
    let denom = |prior: &DenomPrior, offset: u64| sample_denominator(&counts, prior, &settings.mcmc, &base.split(offset));
    let needs_sip = requested.iter().any(|e| !matches!(e, Estimator::Freq | Estimator::Wip));
    let sip = if needs_sip { Some(ate(&settings.sip, streams::SIP)) } else { None };

    let with_warnings = |mut s: EstimateSummary, d: &PosteriorDraws| {
        let mut all = w.warnings.clone();
        all.extend(d.warnings.iter().cloned());
        all.append(&mut s.warnings);
        s.warnings = all;
        s
    };

    for &e in requested {
        let outcome: Result<(EstimateSummary, Option<PosteriorDraws>), InferenceError> = match e {
            Estimator::Freq => freq_ate(w).map(|s| (s, None)),
            Estimator::Wip | Estimator::Sip => {
                let draws = if e == Estimator::Wip {
                    ate(&settings.wip, streams::WIP)
                } else {
                    match sip.as_ref().expect("sip sampled") {
                        Ok(d) => Ok(d.clone()),
                        Err(err) => Err(clone_err(err)),
                    }
                };
                draws.and_then(|d| {
                    let s = summarize(d.require(Param::DeltaBeta)?, d.chains, e.name())?;
                    Ok((with_warnings(s, &d), Some(d)))
                })
            }
            Estimator::LateUnct | Estimator::LateFlex | Estimator::LateCnst => {
                let (prior, offset) = match e {
                    Estimator::LateUnct => (&DenomPrior::Unc, streams::UNC),
                    Estimator::LateFlex => (&settings.fdp, streams::FDP),
                    _ => (&settings.fix, streams::FIX),
                };
                let num = sip.as_ref().expect("sip sampled").as_ref().map_err(clone_err);
                num.and_then(|num| {
                    let den = denom(prior, offset)?;
                    let (d, s) = late(num, &den, e.name())?;
                    Ok((with_warnings(s, &d), Some(d)))
                })
            }
        };
        match outcome {
            Ok((s, d)) => {
                if keep_draws {
                    if let Some(d) = d {
                        run.draws.push((e, d));
                    }
                }
                run.results.push((e, Ok(s)));
            }
            Err(err) => run.results.push((e, Err(err.to_string()))),
        }
    }
    run
}

fn clone_err(e: &InferenceError) -> InferenceError {
    InferenceError::Mcmc(e.to_string())
}
