//! Two-part simulation: strip existing treatment/threshold effects from LDL,
//! reassign treatment with chosen confounding and instrument strength, distort
//! the outcome, then inject a known treatment effect.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cohort::{self, CohortError, CohortRecord};
use crate::io::{self, DataError};
use crate::numerics::dist::{open_unit, std_normal};
use crate::numerics::glm::logistic_fit;
use crate::numerics::ols::{cholesky, design_from_columns, ols_fit};
use crate::numerics::stats::{expit, mean};
use crate::numerics::{GlmFit, NumericsError, RngStream};

/// sd of the noise `w` added back after stripping.
pub const STRIP_NOISE_SD: f64 = 0.1;
/// sd of the injected per-record perturbations (variance 0.25).
pub const EFFECT_SD: f64 = 0.5;
/// Substream of a replicate used by the simulator; estimators use others.
pub const SIM_SUBSTREAM: u64 = 0;

/// Treatment-model coefficient positions: intercept, age, diabetes, x^c, hdl, z.
pub const HDL_COEF: usize = 4;
pub const Z_COEF: usize = 5;

pub const DATASET_COLUMNS: [&str; 15] = [
    "id", "age", "diabetes", "hdl", "ldl", "risk", "risk_centered", "z", "t", "t_hat", "p_hat", "y_sim1", "y_sim2",
    "y_sim3", "true_tau",
];

#[derive(Debug, thiserror::Error)]
pub enum SimulationError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error("{0}")]
    Input(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IvStrength {
    Strong,
    Weak,
}

impl IvStrength {
    /// Threshold coefficient written over the fitted treatment model.
    pub fn alpha8(self) -> f64 {
        match self {
            IvStrength::Strong => 10.0,
            IvStrength::Weak => 4.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IvStrength::Strong => "strong",
            IvStrength::Weak => "weak",
        }
    }
}

impl fmt::Display for IvStrength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for IvStrength {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "strong" => Ok(IvStrength::Strong),
            "weak" => Ok(IvStrength::Weak),
            other => Err(format!("unknown iv strength `{other}` (expected strong or weak)")),
        }
    }
}

/// One of the four (ldl–hdl correlation, hdl treatment coefficient) settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ConfoundingLevel(u8);

impl ConfoundingLevel {
    pub const ALL: [ConfoundingLevel; 4] = [
        ConfoundingLevel(1),
        ConfoundingLevel(2),
        ConfoundingLevel(3),
        ConfoundingLevel(4),
    ];

    pub fn new(level: u8) -> Result<Self, String> {
        Self::try_from(level)
    }

    pub fn level(self) -> u8 {
        self.0
    }

    pub fn correlation(self) -> f64 {
        match self.0 {
            1 | 3 => 0.18,
            _ => 0.5,
        }
    }

    pub fn alpha7(self) -> f64 {
        match self.0 {
            1 | 2 => 4.0,
            _ => -2.0,
        }
    }
}

impl TryFrom<u8> for ConfoundingLevel {
    type Error = String;
    fn try_from(level: u8) -> Result<Self, String> {
        if (1..=4).contains(&level) {
            Ok(ConfoundingLevel(level))
        } else {
            Err(format!("confounding_level must be 1, 2, 3 or 4 (got {level})"))
        }
    }
}

impl From<ConfoundingLevel> for u8 {
    fn from(c: ConfoundingLevel) -> u8 {
        c.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Effect magnitude; treated outcomes are shifted by `-|tau|`.
    pub tau: f64,
    pub confounding_level: ConfoundingLevel,
    pub iv_strength: IvStrength,
    pub bandwidth: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            tau: 2.0,
            confounding_level: ConfoundingLevel(1),
            iv_strength: IvStrength::Strong,
            bandwidth: 0.05,
            replicates: 1,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !self.tau.is_finite() {
            return Err(format!("tau must be finite (got {})", self.tau));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(format!("bandwidth must be positive (got {})", self.bandwidth));
        }
        if self.replicates == 0 {
            return Err("replicates must be at least 1".into());
        }
        Ok(())
    }

    /// Signed effect added to treated outcomes.
    pub fn true_effect(&self) -> f64 {
        -self.tau.abs()
    }
}

/// One simulated record: the cohort fields plus every simulation stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub id: u64,
    pub age: f64,
    pub diabetes: u8,
    pub hdl: f64,
    pub ldl: f64,
    pub risk: f64,
    pub risk_centered: f64,
    pub z: u8,
    pub t: u8,
    pub t_hat: u8,
    pub p_hat: f64,
    pub y_sim1: f64,
    pub y_sim2: f64,
    pub y_sim3: f64,
    pub true_tau: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedDataset {
    pub records: Vec<SimRecord>,
    pub seed: u64,
    pub replicate: u64,
    pub true_tau: f64,
    /// Records whose final outcome is negative; kept, not clipped.
    pub negative_outcomes: usize,
    /// Treatment-model coefficients after the redraw and overwrite.
    pub treatment_coefficients: Vec<f64>,
}

/// Subtract the fitted `y ~ 1 + t + z` and add back `w ~ N(mean(y), w_sd²)`.
pub fn strip_effects(cohort: &[CohortRecord], w_sd: f64, rng: &mut RngStream) -> Result<Vec<f64>, SimulationError> {
    let fit = strip_fit(cohort)?;
    Ok(add_strip_noise(&fit, w_sd, rng))
}

/// `(y - ŷ, mean(y))` from the strip regression.
fn strip_fit(cohort: &[CohortRecord]) -> Result<(Vec<f64>, f64), SimulationError> {
    let one = vec![1.0; cohort.len()];
    let t: Vec<f64> = cohort.iter().map(|r| f64::from(r.t)).collect();
    let z: Vec<f64> = cohort.iter().map(|r| f64::from(r.z)).collect();
    let y: Vec<f64> = cohort.iter().map(|r| r.ldl).collect();
    let fit = ols_fit(&design_from_columns(&[&one, &t, &z]), &y)?;
    Ok((fit.residuals, mean(&y)))
}

fn add_strip_noise((resid, ybar): &(Vec<f64>, f64), w_sd: f64, rng: &mut RngStream) -> Vec<f64> {
    resid
        .iter()
        .map(|r| {
            let w = if w_sd > 0.0 { ybar + w_sd * std_normal(rng) } else { *ybar };
            r + w
        })
        .collect()
}

/// Columns `[1, age, diabetes, x^c, hdl, z]`.
pub fn treatment_design(cohort: &[CohortRecord]) -> DMatrix<f64> {
    DMatrix::from_fn(cohort.len(), 6, |i, j| {
        let r = &cohort[i];
        match j {
            0 => 1.0,
            1 => r.age,
            2 => f64::from(r.diabetes),
            3 => r.risk_centered,
            4 => r.hdl,
            _ => f64::from(r.z),
        }
    })
}

pub fn fit_treatment_model(cohort: &[CohortRecord]) -> Result<GlmFit, SimulationError> {
    let t: Vec<f64> = cohort.iter().map(|r| f64::from(r.t)).collect();
    Ok(logistic_fit(&treatment_design(cohort), &t)?)
}

/// Draw coefficients from `N(α̂, Σ)` with the full covariance, then overwrite
/// the hdl and threshold coefficients.
pub fn redraw_coefficients(fit: &GlmFit, alpha7: f64, alpha8: f64, rng: &mut RngStream) -> Result<Vec<f64>, SimulationError> {
    let l = cholesky(&fit.covariance)?.unpack();
    let xi = DVector::from_fn(fit.coefficients.len(), |_, _| std_normal(rng));
    let mut coef: Vec<f64> = (DVector::from_column_slice(&fit.coefficients) + l * xi)
        .iter()
        .copied()
        .collect();
    coef[HDL_COEF] = alpha7;
    coef[Z_COEF] = alpha8;
    Ok(coef)
}

pub fn treatment_probabilities(design: &DMatrix<f64>, coefficients: &[f64]) -> Vec<f64> {
    (design * DVector::from_column_slice(coefficients)).iter().map(|&e| expit(e)).collect()
}

pub fn draw_treatment(p: &[f64], rng: &mut RngStream) -> Vec<u8> {
    p.iter().map(|&pi| u8::from(open_unit(rng) < pi)).collect()
}

#[derive(Clone, Debug)]
pub struct TreatmentAssignment {
    pub t_hat: Vec<u8>,
    pub p_hat: Vec<f64>,
    pub coefficients: Vec<f64>,
}

pub fn assign_treatment(cohort: &[CohortRecord], alpha7: f64, alpha8: f64, rng: &mut RngStream) -> Result<TreatmentAssignment, SimulationError> {
    let fit = fit_treatment_model(cohort)?;
    assign_from_fit(&treatment_design(cohort), &fit, alpha7, alpha8, rng)
}

fn assign_from_fit(design: &DMatrix<f64>, fit: &GlmFit, alpha7: f64, alpha8: f64, rng: &mut RngStream) -> Result<TreatmentAssignment, SimulationError> {
    let coefficients = redraw_coefficients(fit, alpha7, alpha8, rng)?;
    let p_hat = treatment_probabilities(design, &coefficients);
    let t_hat = draw_treatment(&p_hat, rng);
    Ok(TreatmentAssignment {
        t_hat,
        p_hat,
        coefficients,
    })
}

/// Residualise `y_sim1` on `t̂`, regress those residuals on (age, diabetes,
/// x^c) and add each fitted value plus its standard error back to `y_sim1`.
pub fn distort_outcome(y_sim1: &[f64], t_hat: &[u8], cohort: &[CohortRecord]) -> Result<Vec<f64>, SimulationError> {
    let n = y_sim1.len();
    if t_hat.len() != n || cohort.len() != n {
        return Err(SimulationError::Input(format!(
            "length mismatch: y_sim1 {n}, t_hat {}, cohort {}",
            t_hat.len(),
            cohort.len()
        )));
    }
    let one = vec![1.0; n];
    let t: Vec<f64> = t_hat.iter().map(|&v| f64::from(v)).collect();
    let first = ols_fit(&design_from_columns(&[&one, &t]), y_sim1)?;
    let age: Vec<f64> = cohort.iter().map(|r| r.age).collect();
    let d: Vec<f64> = cohort.iter().map(|r| f64::from(r.diabetes)).collect();
    let xc: Vec<f64> = cohort.iter().map(|r| r.risk_centered).collect();
    let second = ols_fit(&design_from_columns(&[&one, &age, &d, &xc]), &first.residuals)?;
    Ok((0..n)
        .map(|i| {
            let se = second.prediction_se(&[1.0, age[i], d[i], xc[i]]);
            y_sim1[i] + second.fitted[i] + se
        })
        .collect())
}

/// Add `N(0, 0.5²)` to untreated and `N(-|tau|, 0.5²)` to treated outcomes.
pub fn inject_effect(y_sim2: &[f64], t_hat: &[u8], tau: f64, rng: &mut RngStream) -> Vec<f64> {
    let effect = -tau.abs();
    y_sim2
        .iter()
        .zip(t_hat)
        .map(|(y, &t)| {
            let shift = if t == 1 { effect } else { 0.0 };
            y + shift + EFFECT_SD * std_normal(rng)
        })
        .collect()
}

/// Everything about a confounding level that does not depend on the replicate:
/// the re-correlated cohort, its strip regression and its treatment GLM.
#[derive(Clone, Debug)]
pub struct PreparedCohort {
    pub level: ConfoundingLevel,
    pub cohort: Vec<CohortRecord>,
    strip: (Vec<f64>, f64),
    design: DMatrix<f64>,
    pub glm: GlmFit,
}

impl PreparedCohort {
    pub fn new(base: &[CohortRecord], level: ConfoundingLevel) -> Result<Self, SimulationError> {
        let cohort = cohort::set_ldl_hdl_correlation(base, level.correlation())?;
        let strip = strip_fit(&cohort)?;
        let design = treatment_design(&cohort);
        let glm = fit_treatment_model(&cohort)?;
        Ok(Self {
            level,
            cohort,
            strip,
            design,
            glm,
        })
    }

    pub fn simulate(&self, iv: IvStrength, tau: f64, seed: u64, replicate: u64) -> Result<SimulatedDataset, SimulationError> {
        let mut rng = RngStream::for_replicate(seed, replicate, SIM_SUBSTREAM);
        let y1 = add_strip_noise(&self.strip, STRIP_NOISE_SD, &mut rng);
        let assign = assign_from_fit(&self.design, &self.glm, self.level.alpha7(), iv.alpha8(), &mut rng)?;
        let y2 = distort_outcome(&y1, &assign.t_hat, &self.cohort)?;
        let y3 = inject_effect(&y2, &assign.t_hat, tau, &mut rng);
        let true_tau = -tau.abs();
        let records: Vec<SimRecord> = self
            .cohort
            .iter()
            .enumerate()
            .map(|(i, r)| SimRecord {
                id: r.id,
                age: r.age,
                diabetes: r.diabetes,
                hdl: r.hdl,
                ldl: r.ldl,
                risk: r.risk,
                risk_centered: r.risk_centered,
                z: r.z,
                t: r.t,
                t_hat: assign.t_hat[i],
                p_hat: assign.p_hat[i],
                y_sim1: y1[i],
                y_sim2: y2[i],
                y_sim3: y3[i],
                true_tau,
            })
            .collect();
        let negative_outcomes = records.iter().filter(|r| r.y_sim3 < 0.0).count();
        Ok(SimulatedDataset {
            records,
            seed,
            replicate,
            true_tau,
            negative_outcomes,
            treatment_coefficients: assign.coefficients,
        })
    }
}

/// Full pipeline for one replicate of one scenario.
pub fn simulate_dataset(base: &[CohortRecord], scenario: &ScenarioConfig, replicate: u64) -> Result<SimulatedDataset, SimulationError> {
    scenario.validate().map_err(SimulationError::Input)?;
    PreparedCohort::new(base, scenario.confounding_level)?.simulate(
        scenario.iv_strength,
        scenario.tau,
        scenario.seed,
        replicate,
    )
}

pub fn write_dataset<W: Write>(writer: W, records: &[SimRecord]) -> Result<(), DataError> {
    io::write_csv(writer, records)
}

pub fn read_dataset<R: Read>(reader: R, label: &str) -> Result<Vec<SimRecord>, DataError> {
    let records: Vec<SimRecord> = io::read_csv(reader, &DATASET_COLUMNS, label)?;
    check_dataset(&records, label)?;
    Ok(records)
}

pub fn read_dataset_file(path: &Path) -> Result<Vec<SimRecord>, DataError> {
    let records: Vec<SimRecord> = io::read_csv_file(path, &DATASET_COLUMNS)?;
    check_dataset(&records, &path.display().to_string())?;
    Ok(records)
}

fn check_dataset(records: &[SimRecord], label: &str) -> Result<(), DataError> {
    if records.is_empty() {
        return Err(DataError::Invalid(format!("{label}: dataset has no records")));
    }
    for r in records {
        if r.z != u8::from(r.risk_centered > 0.0) || r.t_hat > 1 {
            return Err(DataError::Invalid(format!("{label}: record {} has inconsistent z/t_hat", r.id)));
        }
    }
    Ok(())
}
