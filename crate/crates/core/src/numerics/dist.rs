use rand::Rng;
use rand_distr::{Bernoulli, Beta, Binomial, Distribution, Normal, Uniform};

use super::NumericsError;

/// A validated distribution, ready to draw from.
///
/// Normal uses the ziggurat method, Beta the Cheng (1978) BB/BC algorithms,
/// Binomial the BTPE/inversion hybrid, Bernoulli and Uniform compare a
/// uniform 64-bit draw (all as implemented by `rand_distr`).
#[derive(Clone, Copy, Debug)]
pub enum Dist {
    Normal(Normal<f64>),
    Uniform(Uniform<f64>),
    Beta(Beta<f64>),
    Binomial(Binomial),
    Bernoulli(Bernoulli),
}

/// Plain-data description of a distribution, as read from configs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DistSpec {
    Normal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
    Beta { a: f64, b: f64 },
    Binomial { n: u64, p: f64 },
    Bernoulli { p: f64 },
}

fn domain(what: &str, detail: String) -> NumericsError {
    NumericsError::ParameterDomain {
        distribution: what.to_string(),
        detail,
    }
}

impl DistSpec {
    pub fn build(self) -> Result<Dist, NumericsError> {
        match self {
            DistSpec::Normal { mean, sd } => {
                if !(sd > 0.0 && sd.is_finite() && mean.is_finite()) {
                    return Err(domain("normal", format!("mean {mean}, sd {sd}")));
                }
                Ok(Dist::Normal(Normal::new(mean, sd).expect("checked")))
            }
            DistSpec::Uniform { low, high } => {
                if !(low < high && low.is_finite() && high.is_finite()) {
                    return Err(domain("uniform", format!("[{low}, {high})")));
                }
                Ok(Dist::Uniform(Uniform::new(low, high).expect("checked")))
            }
            DistSpec::Beta { a, b } => {
                if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                    return Err(domain("beta", format!("shapes ({a}, {b})")));
                }
                Beta::new(a, b)
                    .map(Dist::Beta)
                    .map_err(|e| domain("beta", e.to_string()))
            }
            DistSpec::Binomial { n, p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(domain("binomial", format!("p {p}")));
                }
                Binomial::new(n, p)
                    .map(Dist::Binomial)
                    .map_err(|e| domain("binomial", e.to_string()))
            }
            DistSpec::Bernoulli { p } => Bernoulli::new(p)
                .map(Dist::Bernoulli)
                .map_err(|_| domain("bernoulli", format!("p {p}"))),
        }
    }
}

impl Dist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Dist::Normal(d) => d.sample(rng),
            Dist::Uniform(d) => d.sample(rng),
            Dist::Beta(d) => d.sample(rng),
            Dist::Binomial(d) => d.sample(rng) as f64,
            Dist::Bernoulli(d) => f64::from(u8::from(d.sample(rng))),
        }
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

/// Validate and draw `n` values in one call.
pub fn draw<R: Rng + ?Sized>(spec: DistSpec, rng: &mut R, n: usize) -> Result<Vec<f64>, NumericsError> {
    Ok(spec.build()?.sample_n(rng, n))
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

pub fn beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> Result<f64, NumericsError> {
    Ok(DistSpec::Beta { a, b }.build()?.sample(rng))
}

/// Uniform on the open interval (0, 1).
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(rand::distr::Open01)
}
