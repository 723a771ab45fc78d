use nalgebra::{Cholesky, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::draws::{Param, PosteriorDraws};
use super::window::{BandwidthWindow, RdPoint};
use super::{InferenceError, McmcConfig};
use crate::numerics::dist::{open_unit, std_normal};
use crate::numerics::stats::split_rhat;
use crate::numerics::RngStream;

pub const RHAT_WARNING: f64 = 1.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AtePriorKind {
    Wip,
    Sip,
}

/// Normal priors on intercept, jump and slopes; uniform prior on σ.
/// Every `s*` is a standard deviation, `phi_var` a variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtePrior {
    pub kind: AtePriorKind,
    pub m0: f64,
    pub s0: f64,
    pub m1b: f64,
    pub s1b: f64,
    pub m1a: f64,
    pub s1a: f64,
    pub phi_mean: f64,
    pub phi_var: f64,
    pub sigma_upper: f64,
}

impl AtePrior {
    fn base(kind: AtePriorKind, phi_mean: f64, phi_var: f64) -> Self {
        Self {
            kind,
            m0: 3.7,
            s0: 0.5,
            m1b: 8.0,
            s1b: 0.75,
            m1a: 6.0,
            s1a: 2.0,
            phi_mean,
            phi_var,
            sigma_upper: 5.0,
        }
    }

    /// Weakly informative: φ ~ N(0, 2).
    pub fn wip() -> Self {
        Self::base(AtePriorKind::Wip, 0.0, 2.0)
    }

    /// Strongly informative: φ ~ N(-2, 1).
    pub fn sip() -> Self {
        Self::base(AtePriorKind::Sip, -2.0, 1.0)
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        for (name, v) in [
            ("s0", self.s0),
            ("s1b", self.s1b),
            ("s1a", self.s1a),
            ("phi_var", self.phi_var),
            ("sigma_upper", self.sigma_upper),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(InferenceError::Prior(format!("{name} must be positive (got {v})")));
            }
        }
        Ok(())
    }

    /// Prior means and precisions in parameter order (β0b, φ, β1b, β1a).
    fn moments(&self) -> (Vector4<f64>, Vector4<f64>) {
        (
            Vector4::new(self.m0, self.phi_mean, self.m1b, self.m1a),
            Vector4::new(
                1.0 / (self.s0 * self.s0),
                1.0 / self.phi_var,
                1.0 / (self.s1b * self.s1b),
                1.0 / (self.s1a * self.s1a),
            ),
        )
    }
}

/// Sufficient statistics of one side of the window.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SideStats {
    pub n: f64,
    pub sx: f64,
    pub sxx: f64,
    pub sy: f64,
    pub sxy: f64,
    pub syy: f64,
}

impl SideStats {
    pub fn from_points(points: &[RdPoint]) -> Self {
        let mut s = SideStats::default();
        for p in points {
            s.n += 1.0;
            s.sx += p.x;
            s.sxx += p.x * p.x;
            s.sy += p.y;
            s.sxy += p.x * p.y;
            s.syy += p.y * p.y;
        }
        s
    }

    /// Σ (y - b0 - b1 x)²
    fn ssr(&self, b0: f64, b1: f64) -> f64 {
        (self.syy - 2.0 * b0 * self.sy - 2.0 * b1 * self.sxy
            + self.n * b0 * b0
            + 2.0 * b0 * b1 * self.sx
            + b1 * b1 * self.sxx)
            .max(0.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AteData {
    pub below: SideStats,
    pub above: SideStats,
}

impl AteData {
    pub fn from_window(w: &BandwidthWindow) -> Self {
        Self {
            below: SideStats::from_points(&w.below),
            above: SideStats::from_points(&w.above),
        }
    }

    /// No observations: the sampler then draws from the prior.
    pub fn empty() -> Self {
        Self::default()
    }

    fn ssr(&self, theta: &Vector4<f64>) -> f64 {
        self.below.ssr(theta[0], theta[2]) + self.above.ssr(theta[0] + theta[1], theta[3])
    }

    /// XᵀX and Xᵀy for the stacked design with rows (1, 0, x, 0) below and
    /// (1, 1, 0, x) above.
    fn cross_products(&self) -> (Matrix4<f64>, Vector4<f64>) {
        let (b, a) = (&self.below, &self.above);
        let xtx = Matrix4::new(
            b.n + a.n, a.n, b.sx, a.sx, //
            a.n, a.n, 0.0, a.sx, //
            b.sx, 0.0, b.sxx, 0.0, //
            a.sx, a.sx, 0.0, a.sxx,
        );
        let xty = Vector4::new(b.sy + a.sy, a.sy, b.sxy, a.sxy);
        (xtx, xty)
    }
}

/// Metropolis-within-Gibbs sampler for the local-linear jump model:
/// an exact Gaussian block update of (β0b, φ, β1b, β1a) given σ, then a
/// slice-sampling update of σ on (0, σ_upper).
#[derive(Clone, Debug)]
pub struct AteSampler {
    pub prior: AtePrior,
    pub config: McmcConfig,
    /// Hold (β1b, β1a) at these values instead of sampling them.
    pub fixed_slopes: Option<(f64, f64)>,
}

impl AteSampler {
    pub fn new(prior: AtePrior, config: McmcConfig) -> Self {
        Self {
            prior,
            config,
            fixed_slopes: None,
        }
    }

    pub fn with_fixed_slopes(mut self, below: f64, above: f64) -> Self {
        self.fixed_slopes = Some((below, above));
        self
    }

    /// Chain `c` runs on `rng.split(c)`.
    pub fn run(&self, data: &AteData, rng: &RngStream) -> Result<PosteriorDraws, InferenceError> {
        self.prior.validate()?;
        self.config.validate()?;
        let cfg = &self.config;
        let per_chain = cfg.retained_per_chain();
        let total = cfg.chains * per_chain;
        let mut cols: [Vec<f64>; 5] = std::array::from_fn(|_| Vec::with_capacity(total));

        for c in 0..cfg.chains {
            let mut chain_rng = rng.split(c as u64);
            let mut sigma = self.initial_sigma(c);
            for it in 0..cfg.iterations {
                let theta = self.draw_theta(data, sigma, &mut chain_rng)?;
                sigma = slice_sigma(data, &theta, sigma, self.prior.sigma_upper, &mut chain_rng);
                if cfg.keeps(it) {
                    cols[0].push(theta[0]);
                    cols[1].push(theta[1]);
                    cols[2].push(theta[2]);
                    cols[3].push(theta[3]);
                    cols[4].push(sigma);
                }
            }
        }

        let [b0b, phi, b1b, b1a, sigma] = cols;
        let b0a: Vec<f64> = b0b.iter().zip(&phi).map(|(b, p)| b + p).collect();
        let mut warnings = Vec::new();
        let rhat = split_rhat(&phi, cfg.chains);
        if rhat > RHAT_WARNING {
            warnings.push(format!("split R-hat {rhat:.3} on phi exceeds {RHAT_WARNING}"));
        }
        Ok(PosteriorDraws {
            chains: cfg.chains,
            per_chain,
            burn_in: cfg.burn_in,
            thin: cfg.thin,
            seed: rng.seed(),
            stream_id: rng.stream_id(),
            columns: vec![
                (Param::Beta0Below, b0b),
                (Param::Beta0Above, b0a),
                (Param::DeltaBeta, phi.clone()),
                (Param::Phi, phi),
                (Param::Beta1Below, b1b),
                (Param::Beta1Above, b1a),
                (Param::Sigma, sigma),
            ],
            warnings,
        })
    }

    /// θ is drawn first from its full conditional, so only σ needs a start;
    /// chains start at different points of (0, σ_upper).
    fn initial_sigma(&self, chain: usize) -> f64 {
        self.prior.sigma_upper * (chain as f64 + 1.0) / (self.config.chains as f64 + 2.0)
    }

    /// Exact draw from the Gaussian full conditional of θ given σ. Fixed
    /// slopes are conditioned on by moving their contribution into the
    /// linear term and decoupling their rows.
    fn draw_theta(&self, data: &AteData, sigma: f64, rng: &mut RngStream) -> Result<Vector4<f64>, InferenceError> {
        let (xtx, xty) = data.cross_products();
        let (m, prec) = self.prior.moments();
        let inv_s2 = 1.0 / (sigma * sigma);
        let mut q = xtx * inv_s2 + Matrix4::from_diagonal(&prec);
        let mut b = xty * inv_s2 + prec.component_mul(&m);
        let mut xi = Vector4::from_fn(|_, _| std_normal(rng));

        if let Some((s_b, s_a)) = self.fixed_slopes {
            let fixed = [(2usize, s_b), (3usize, s_a)];
            for &(k, v) in &fixed {
                for i in 0..4 {
                    if i != k && !fixed.iter().any(|&(f, _)| f == i) {
                        b[i] -= q[(i, k)] * v;
                    }
                }
            }
            for &(k, v) in &fixed {
                for i in 0..4 {
                    q[(i, k)] = 0.0;
                    q[(k, i)] = 0.0;
                }
                q[(k, k)] = 1.0;
                b[k] = v;
                xi[k] = 0.0;
            }
        }

        let chol = Cholesky::new(q).ok_or(InferenceError::Numerics(
            crate::numerics::NumericsError::NotPositiveDefinite { dim: 4 },
        ))?;
        let mean = chol.solve(&b);
        let l = chol.l();
        let noise = l
            .transpose()
            .solve_upper_triangular(&xi)
            .expect("Cholesky factor has a positive diagonal");
        Ok(mean + noise)
    }
}

pub fn sample_ate(window: &BandwidthWindow, prior: &AtePrior, config: &McmcConfig, rng: &RngStream) -> Result<PosteriorDraws, InferenceError> {
    AteSampler::new(prior.clone(), config.clone()).run(&AteData::from_window(window), rng)
}

fn log_sigma_density(n: f64, ssr: f64, sigma: f64) -> f64 {
    -n * sigma.ln() - ssr / (2.0 * sigma * sigma)
}

/// One slice-sampling update (stepping out, then shrinkage) of σ under
/// `p(σ) ∝ σ^-n exp(-SSR / 2σ²)` on `(0, upper)`.
fn slice_sigma(data: &AteData, theta: &Vector4<f64>, current: f64, upper: f64, rng: &mut RngStream) -> f64 {
    let n = data.below.n + data.above.n;
    let ssr = data.ssr(theta);
    let f = |s: f64| log_sigma_density(n, ssr, s);
    let width = upper / 10.0;
    let level = f(current) + open_unit(rng).ln();

    let mut left = current - width * open_unit(rng);
    let mut right = left + width;
    let max_steps = 50;
    let j = (max_steps as f64 * open_unit(rng)) as usize;
    let mut k = max_steps - 1 - j;
    for _ in 0..j {
        if left <= 0.0 || f(left) <= level {
            break;
        }
        left -= width;
    }
    while k > 0 && right < upper && f(right) > level {
        right += width;
        k -= 1;
    }
    left = left.max(0.0);
    right = right.min(upper);

    loop {
        let cand = left + (right - left) * open_unit(rng);
        if cand > 0.0 && cand < upper && f(cand) > level {
            return cand;
        }
        if cand < current {
            left = cand;
        } else {
            right = cand;
        }
        if right - left < 1e-14 {
            return current;
        }
    }
}
