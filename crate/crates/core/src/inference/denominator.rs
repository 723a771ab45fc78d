use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::draws::{Param, PosteriorDraws};
use super::window::TreatmentCounts;
use super::{InferenceError, McmcConfig};
use crate::numerics::dist::{beta, open_unit, std_normal};
use crate::numerics::stats::expit;
use crate::numerics::RngStream;

const ADAPT_BATCH: usize = 50;
const TARGET_ACCEPT: (f64, f64) = (0.3, 0.5);

/// Priors on the treatment probabilities below (π_b) and above (π_a) the
/// threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DenomPrior {
    /// Independent Beta(1, 1).
    Unc,
    /// π_b ~ Beta(α_b, n_b + 1), π_a ~ Beta(α_b + ν, 1) with uniform α_b, ν.
    Fix { alpha_b: (f64, f64), nu: (f64, f64) },
    /// Independent normal priors on logit(π_a) and logit(π_b) (sd, not variance).
    Fdp { mean_above: f64, mean_below: f64, sd: f64 },
}

impl DenomPrior {
    pub fn fix() -> Self {
        DenomPrior::Fix {
            alpha_b: (1.0, 100_000.0),
            nu: (200.0, 10_000.0),
        }
    }

    pub fn fdp() -> Self {
        DenomPrior::Fdp {
            mean_above: 2.0,
            mean_below: -2.0,
            sd: 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DenomPrior::Unc => "unc",
            DenomPrior::Fix { .. } => "fix",
            DenomPrior::Fdp { .. } => "fdp",
        }
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        match self {
            DenomPrior::Unc => Ok(()),
            DenomPrior::Fix { alpha_b, nu } => {
                for (name, (lo, hi)) in [("alpha_b", alpha_b), ("nu", nu)] {
                    if !(lo.is_finite() && hi.is_finite() && *lo > 0.0 && hi > lo) {
                        return Err(InferenceError::Prior(format!("{name} support [{lo}, {hi}] must be positive with positive width")));
                    }
                }
                Ok(())
            }
            DenomPrior::Fdp { mean_above, mean_below, sd } => {
                if !(*sd > 0.0 && sd.is_finite() && mean_above.is_finite() && mean_below.is_finite()) {
                    return Err(InferenceError::Prior(format!("fdp sd {sd} must be positive")));
                }
                Ok(())
            }
        }
    }
}

fn check_counts(c: &TreatmentCounts) -> Result<(), InferenceError> {
    if c.s_b > c.n_b || c.s_a > c.n_a {
        return Err(InferenceError::Counts(*c));
    }
    Ok(())
}

/// Posterior draws of (π_b, π_a) and Δπ = π_a − π_b. Zero counts sample the
/// prior, except under fix, whose window-dependent prior needs records on
/// both sides. Chain `c` runs on `rng.split(c)`.
pub fn sample_denominator(counts: &TreatmentCounts, prior: &DenomPrior, config: &McmcConfig, rng: &RngStream) -> Result<PosteriorDraws, InferenceError> {
    prior.validate()?;
    config.validate()?;
    check_counts(counts)?;
    let per_chain = config.retained_per_chain();
    let mut pi_b = Vec::with_capacity(config.chains * per_chain);
    let mut pi_a = Vec::with_capacity(config.chains * per_chain);
    let mut extra: Vec<(Param, Vec<f64>)> = Vec::new();
    let mut warnings = Vec::new();

    match prior {
        DenomPrior::Unc => {
            let (nb, sb, na, sa) = as_f64(counts);
            for c in 0..config.chains {
                let mut r = rng.split(c as u64);
                for _ in 0..per_chain {
                    pi_b.push(beta(&mut r, 1.0 + sb, 1.0 + nb - sb)?);
                    pi_a.push(beta(&mut r, 1.0 + sa, 1.0 + na - sa)?);
                }
            }
        }
        DenomPrior::Fix { alpha_b, nu } => {
            if counts.n_b == 0 || counts.n_a == 0 {
                return Err(InferenceError::Prior(format!(
                    "fix prior needs records on both sides of the threshold (n_b = {}, n_a = {})",
                    counts.n_b, counts.n_a
                )));
            }
            let mut ab = Vec::with_capacity(pi_b.capacity());
            let mut nus = Vec::with_capacity(pi_b.capacity());
            let model = FixModel::new(*counts, *alpha_b, *nu);
            for c in 0..config.chains {
                let mut r = rng.split(c as u64);
                model.run_chain(config, &mut r, &mut pi_b, &mut pi_a, &mut ab, &mut nus)?;
            }
            extra.push((Param::AlphaBelow, ab));
            extra.push((Param::Nu, nus));
        }
        DenomPrior::Fdp { mean_above, mean_below, sd } => {
            let (nb, sb, na, sa) = as_f64(counts);
            for c in 0..config.chains {
                let mut r_b = rng.split(2 * c as u64);
                let mut r_a = rng.split(2 * c as u64 + 1);
                let (db, acc_b) = logit_rw_chain(sb, nb, *mean_below, *sd, config, &mut r_b);
                let (da, acc_a) = logit_rw_chain(sa, na, *mean_above, *sd, config, &mut r_a);
                for (side, acc) in [("below", acc_b), ("above", acc_a)] {
                    if !(0.15..=0.7).contains(&acc) {
                        warnings.push(format!("fdp chain {c} {side}: acceptance {acc:.2}"));
                    }
                }
                pi_b.extend(db);
                pi_a.extend(da);
            }
        }
    }

    let delta: Vec<f64> = pi_a.iter().zip(&pi_b).map(|(a, b)| a - b).collect();
    let mut columns = vec![(Param::PiBelow, pi_b), (Param::PiAbove, pi_a), (Param::DeltaPi, delta)];
    columns.extend(extra);
    Ok(PosteriorDraws {
        chains: config.chains,
        per_chain,
        burn_in: config.burn_in,
        thin: config.thin,
        seed: rng.seed(),
        stream_id: rng.stream_id(),
        columns,
        warnings,
    })
}

fn as_f64(c: &TreatmentCounts) -> (f64, f64, f64, f64) {
    (c.n_b as f64, c.s_b as f64, c.n_a as f64, c.s_a as f64)
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Reflect `x` into `[lo, hi]`.
fn reflect(mut x: f64, lo: f64, hi: f64) -> f64 {
    let width = hi - lo;
    loop {
        if x < lo {
            x = 2.0 * lo - x;
        } else if x > hi {
            x = 2.0 * hi - x;
        } else {
            return x;
        }
        if (x - lo).abs() > 4.0 * width {
            x = lo + (x - lo).rem_euclid(2.0 * width);
        }
    }
}

/// Batch step-size tuning toward the acceptance band; a no-op outside burn-in.
fn adapt(step: &mut f64, accepted: &mut usize, it: usize, burn_in: usize) {
    if it < burn_in && (it + 1).is_multiple_of(ADAPT_BATCH) {
        let rate = *accepted as f64 / ADAPT_BATCH as f64;
        if rate < TARGET_ACCEPT.0 {
            *step *= (0.5 + rate).min(0.9);
        } else if rate > TARGET_ACCEPT.1 {
            *step *= 1.0 + rate;
        }
        *accepted = 0;
    }
}

struct FixModel {
    nb: f64,
    sb: f64,
    na: f64,
    sa: f64,
    alpha_b: (f64, f64),
    nu: (f64, f64),
}

impl FixModel {
    fn new(c: TreatmentCounts, alpha_b: (f64, f64), nu: (f64, f64)) -> Self {
        let (nb, sb, na, sa) = as_f64(&c);
        Self { nb, sb, na, sa, alpha_b, nu }
    }

    /// Log posterior of (α_b, ν) with both probabilities integrated out.
    fn log_marginal(&self, ab: f64, nu: f64) -> f64 {
        let aa = ab + nu;
        ln_beta(ab + self.sb, 2.0 * self.nb + 1.0 - self.sb) - ln_beta(ab, self.nb + 1.0)
            + ln_beta(aa + self.sa, 1.0 + self.na - self.sa)
            + aa.ln()
    }

    /// Mode of the log-marginal on a coarse log-spaced grid.
    fn grid_start(&self) -> (f64, f64) {
        let grid = |(lo, hi): (f64, f64), k: usize| -> Vec<f64> {
            (0..k)
                .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (k - 1) as f64).exp().clamp(lo, hi))
                .collect()
        };
        let mut best = (self.alpha_b.0, self.nu.0, f64::NEG_INFINITY);
        for &ab in &grid(self.alpha_b, 80) {
            for &nu in &grid(self.nu, 40) {
                let v = self.log_marginal(ab, nu);
                if v > best.2 {
                    best = (ab, nu, v);
                }
            }
        }
        (best.0, best.1)
    }

    fn run_chain(
        &self,
        config: &McmcConfig,
        rng: &mut RngStream,
        pi_b: &mut Vec<f64>,
        pi_a: &mut Vec<f64>,
        ab_out: &mut Vec<f64>,
        nu_out: &mut Vec<f64>,
    ) -> Result<(), InferenceError> {
        let (mut ab, mut nu) = self.grid_start();
        let mut lp = self.log_marginal(ab, nu);
        let mut step_ab = (0.1 * ab).max(0.5);
        let mut step_nu = (0.1 * nu).max(5.0);
        let (mut acc_ab, mut acc_nu) = (0usize, 0usize);

        for it in 0..config.iterations {
            let cand = reflect(ab + step_ab * std_normal(rng), self.alpha_b.0, self.alpha_b.1);
            let lp_c = self.log_marginal(cand, nu);
            if open_unit(rng).ln() < lp_c - lp {
                ab = cand;
                lp = lp_c;
                acc_ab += 1;
            }
            let cand = reflect(nu + step_nu * std_normal(rng), self.nu.0, self.nu.1);
            let lp_c = self.log_marginal(ab, cand);
            if open_unit(rng).ln() < lp_c - lp {
                nu = cand;
                lp = lp_c;
                acc_nu += 1;
            }
            adapt(&mut step_ab, &mut acc_ab, it, config.burn_in);
            adapt(&mut step_nu, &mut acc_nu, it, config.burn_in);

            let pb = beta(rng, ab + self.sb, 2.0 * self.nb + 1.0 - self.sb)?;
            let pa = beta(rng, ab + nu + self.sa, 1.0 + self.na - self.sa)?;
            if config.keeps(it) {
                pi_b.push(pb);
                pi_a.push(pa);
                ab_out.push(ab);
                nu_out.push(nu);
            }
        }
        Ok(())
    }
}

/// Random-walk Metropolis on η = logit(π) with a N(mean, sd²) prior and a
/// binomial likelihood. Returns retained π draws and the post-burn-in
/// acceptance rate.
fn logit_rw_chain(s: f64, n: f64, mean: f64, sd: f64, config: &McmcConfig, rng: &mut RngStream) -> (Vec<f64>, f64) {
    let log_post = |eta: f64| {
        let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
        s * eta - n * softplus - 0.5 * ((eta - mean) / sd).powi(2)
    };
    let mut eta = mean;
    let mut lp = log_post(eta);
    // Start near the posterior scale: prior and binomial information combined.
    let mut step = 2.4 / (1.0 / (sd * sd) + 0.25 * n).sqrt();
    let mut accepted = 0usize;
    let mut kept_accepts = 0usize;
    let mut out = Vec::with_capacity(config.retained_per_chain());
    for it in 0..config.iterations {
        let cand = eta + step * std_normal(rng);
        let lp_c = log_post(cand);
        if open_unit(rng).ln() < lp_c - lp {
            eta = cand;
            lp = lp_c;
            accepted += 1;
            if it >= config.burn_in {
                kept_accepts += 1;
            }
        }
        adapt(&mut step, &mut accepted, it, config.burn_in);
        if config.keeps(it) {
            out.push(expit(eta));
        }
    }
    let post = (config.iterations - config.burn_in).max(1) as f64;
    (out, kept_accepts as f64 / post)
}
