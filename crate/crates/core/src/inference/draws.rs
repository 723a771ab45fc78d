use serde::{Deserialize, Serialize};

use super::InferenceError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Param {
    Beta0Below,
    Beta0Above,
    Phi,
    Beta1Below,
    Beta1Above,
    Sigma,
    PiBelow,
    PiAbove,
    AlphaBelow,
    Nu,
    DeltaBeta,
    DeltaPi,
    Late,
}

impl Param {
    pub fn name(self) -> &'static str {
        match self {
            Param::Beta0Below => "beta0_b",
            Param::Beta0Above => "beta0_a",
            Param::Phi => "phi",
            Param::Beta1Below => "beta1_b",
            Param::Beta1Above => "beta1_a",
            Param::Sigma => "sigma",
            Param::PiBelow => "pi_b",
            Param::PiAbove => "pi_a",
            Param::AlphaBelow => "alpha_b",
            Param::Nu => "nu",
            Param::DeltaBeta => "delta_beta",
            Param::DeltaPi => "delta_pi",
            Param::Late => "late",
        }
    }
}

/// Retained draws of one or more parameters, stored chain after chain and
/// aligned by index across parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    pub chains: usize,
    pub per_chain: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub stream_id: u64,
    pub columns: Vec<(Param, Vec<f64>)>,
    pub warnings: Vec<String>,
}

/// One row of the long-format draws dump.
#[derive(Clone, Debug, Serialize)]
pub struct DrawRow {
    pub iteration: usize,
    pub parameter: &'static str,
    pub value: f64,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.chains * self.per_chain
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, p: Param) -> Option<&[f64]> {
        self.columns.iter().find(|(q, _)| *q == p).map(|(_, v)| v.as_slice())
    }

    pub fn require(&self, p: Param) -> Result<&[f64], InferenceError> {
        self.get(p).ok_or(InferenceError::MissingParameter(p.name()))
    }

    pub fn long_rows(&self) -> Vec<DrawRow> {
        let mut rows = Vec::with_capacity(self.len() * self.columns.len());
        for i in 0..self.len() {
            for (p, v) in &self.columns {
                rows.push(DrawRow {
                    iteration: i,
                    parameter: p.name(),
                    value: v[i],
                });
            }
        }
        rows
    }
}
