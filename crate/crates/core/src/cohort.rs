//! Synthetic base cohort: age, diabetes, HDL, LDL, a cardiovascular risk score
//! with its 0.2 guideline threshold, and a pre-existing fuzzy treatment.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::{self, DataError};
use crate::numerics::dist::{open_unit, std_normal};
use crate::numerics::stats::{correlation, expit, logit, mean, pop_sd};
use crate::numerics::RngStream;

/// Guideline cut-off on the risk score.
pub const THRESHOLD: f64 = 0.2;

pub const COLUMNS: [&str; 9] = ["id", "age", "diabetes", "hdl", "ldl", "risk", "risk_centered", "z", "t"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortRecord {
    pub id: u64,
    pub age: f64,
    pub diabetes: u8,
    pub hdl: f64,
    pub ldl: f64,
    pub risk: f64,
    pub risk_centered: f64,
    pub z: u8,
    pub t: u8,
}

#[derive(Debug, thiserror::Error)]
pub enum CohortError {
    #[error("invalid cohort parameter `{name}`: {detail}")]
    Parameter { name: &'static str, detail: String },
    #[error("correlation target {0} is infeasible (need |r| < 0.95)")]
    InfeasibleCorrelation(f64),
    #[error("ldl has zero variance; correlation is undefined")]
    DegenerateLdl,
    #[error("hdl is collinear with ldl; cannot re-target the correlation")]
    CollinearHdl,
    #[error("correlation targeting produced {0} non-positive hdl values")]
    NonPositiveHdl(usize),
}

/// Generator settings. Every field has a default, so a config file only needs
/// the keys it overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortParams {
    pub n: usize,
    pub seed: u64,
    pub age_min: f64,
    pub age_max: f64,
    pub diabetes_prevalence: f64,
    pub hdl_mean: f64,
    pub hdl_sd: f64,
    pub hdl_min: f64,
    pub hdl_max: f64,
    /// Risk score median before noise; the logit-scale intercept.
    pub risk_median: f64,
    /// Log-odds per standard deviation of age.
    pub risk_age_coef: f64,
    pub risk_diabetes_coef: f64,
    pub risk_noise_sd: f64,
    pub ldl_intercept: f64,
    /// mmol/l per unit of centred risk.
    pub ldl_slope: f64,
    pub ldl_noise_sd: f64,
    pub ldl_hdl_correlation: f64,
    pub treat_intercept: f64,
    pub treat_hdl_coef: f64,
    pub treat_threshold_coef: f64,
    /// Log-odds per standard deviation of centred risk.
    pub treat_risk_coef: f64,
}

impl Default for CohortParams {
    fn default() -> Self {
        Self {
            n: 5720,
            seed: 1,
            age_min: 50.0,
            age_max: 85.0,
            diabetes_prevalence: 0.15,
            hdl_mean: 1.3,
            hdl_sd: 0.35,
            hdl_min: 0.5,
            hdl_max: 3.0,
            risk_median: 0.18,
            risk_age_coef: 0.3,
            risk_diabetes_coef: 0.5,
            risk_noise_sd: 0.3,
            ldl_intercept: 3.7,
            ldl_slope: 0.5,
            ldl_noise_sd: 0.6,
            ldl_hdl_correlation: 0.18,
            treat_intercept: -8.25,
            treat_hdl_coef: 4.0,
            treat_threshold_coef: 1.5,
            treat_risk_coef: 1.5,
        }
    }
}

impl CohortParams {
    pub fn validate(&self) -> Result<(), CohortError> {
        let bad = |name, detail: String| Err(CohortError::Parameter { name, detail });
        if self.n < 3 {
            return bad("n", format!("{} (need at least 3)", self.n));
        }
        if !(self.age_min >= 50.0 && self.age_max > self.age_min) {
            return bad("age_min", format!("range [{}, {}) must start at 50 or above", self.age_min, self.age_max));
        }
        if !(self.diabetes_prevalence > 0.0 && self.diabetes_prevalence < 1.0) {
            return bad("diabetes_prevalence", format!("{} not in (0, 1)", self.diabetes_prevalence));
        }
        if !(self.risk_median > 0.0 && self.risk_median < 1.0) {
            return bad("risk_median", format!("{} not in (0, 1)", self.risk_median));
        }
        for (name, v) in [("hdl_sd", self.hdl_sd), ("risk_noise_sd", self.risk_noise_sd)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(name, format!("{v} must be positive"));
            }
        }
        if !(self.ldl_noise_sd >= 0.0 && self.ldl_noise_sd.is_finite()) {
            return bad("ldl_noise_sd", format!("{} must be non-negative", self.ldl_noise_sd));
        }
        if !(self.hdl_min > 0.0 && self.hdl_max > self.hdl_min) {
            return bad("hdl_min", format!("truncation range ({}, {}) must be positive and non-empty", self.hdl_min, self.hdl_max));
        }
        if !(self.ldl_intercept > 0.0) {
            return bad("ldl_intercept", format!("{} must be positive", self.ldl_intercept));
        }
        if self.ldl_hdl_correlation.abs() >= 0.95 || !self.ldl_hdl_correlation.is_finite() {
            return Err(CohortError::InfeasibleCorrelation(self.ldl_hdl_correlation));
        }
        Ok(())
    }
}

pub fn generate_cohort(params: &CohortParams, rng: &mut RngStream) -> Result<Vec<CohortRecord>, CohortError> {
    params.validate()?;
    let n = params.n;
    let p = params;

    let age: Vec<f64> = (0..n)
        .map(|_| p.age_min + (p.age_max - p.age_min) * open_unit(rng))
        .collect();
    let diabetes: Vec<u8> = (0..n)
        .map(|_| u8::from(open_unit(rng) < p.diabetes_prevalence))
        .collect();
    let mut hdl: Vec<f64> = (0..n)
        .map(|_| loop {
            let h = p.hdl_mean + p.hdl_sd * std_normal(rng);
            if h > p.hdl_min && h < p.hdl_max {
                break h;
            }
        })
        .collect();

    let (age_mean, age_sd) = (mean(&age), pop_sd(&age));
    let base = logit(p.risk_median);
    let risk: Vec<f64> = (0..n)
        .map(|i| {
            let lin = base
                + p.risk_age_coef * (age[i] - age_mean) / age_sd
                + p.risk_diabetes_coef * (f64::from(diabetes[i]) - p.diabetes_prevalence)
                + p.risk_noise_sd * std_normal(rng);
            expit(lin).clamp(1e-12, 1.0 - 1e-12)
        })
        .collect();
    let centred: Vec<f64> = risk.iter().map(|x| x - THRESHOLD).collect();

    let ldl: Vec<f64> = centred
        .iter()
        .map(|xc| {
            let mean = p.ldl_intercept + p.ldl_slope * xc;
            if p.ldl_noise_sd == 0.0 {
                return mean;
            }
            loop {
                let y = mean + p.ldl_noise_sd * std_normal(rng);
                if y > 0.0 {
                    break y;
                }
            }
        })
        .collect();

    if pop_sd(&ldl) > 0.0 {
        hdl = retarget_hdl(&ldl, &hdl, p.ldl_hdl_correlation)?;
    }

    let (xc_mean, xc_sd) = (mean(&centred), pop_sd(&centred));
    let records = (0..n)
        .map(|i| {
            let z = u8::from(centred[i] > 0.0);
            let xs = if xc_sd > 0.0 { (centred[i] - xc_mean) / xc_sd } else { 0.0 };
            let lin = p.treat_intercept
                + p.treat_hdl_coef * hdl[i]
                + p.treat_threshold_coef * f64::from(z)
                + p.treat_risk_coef * xs;
            let t = u8::from(open_unit(rng) < expit(lin));
            CohortRecord {
                id: i as u64 + 1,
                age: age[i],
                diabetes: diabetes[i],
                hdl: hdl[i],
                ldl: ldl[i],
                risk: risk[i],
                risk_centered: centred[i],
                z,
                t,
            }
        })
        .collect();
    Ok(records)
}

/// Generate with the stream `(params.seed, 0)`.
pub fn generate_default_stream(params: &CohortParams) -> Result<Vec<CohortRecord>, CohortError> {
    generate_cohort(params, &mut RngStream::new(params.seed, 0))
}

/// New hdl with sample correlation `target` against ldl, same sample mean and
/// sd as the old hdl.
///
/// The new standardized hdl is `r·L + sqrt(1 − r²)·R`, where `L` is standardized
/// ldl and `R` the standardized residual of the current hdl on ldl. Both are
/// orthogonal with unit variance, so the correlation is exactly `r`.
fn retarget_hdl(ldl: &[f64], hdl: &[f64], target: f64) -> Result<Vec<f64>, CohortError> {
    if target.abs() >= 0.95 || !target.is_finite() {
        return Err(CohortError::InfeasibleCorrelation(target));
    }
    let (lm, ls) = (mean(ldl), pop_sd(ldl));
    if !(ls > 0.0) {
        return Err(CohortError::DegenerateLdl);
    }
    let (hm, hs) = (mean(hdl), pop_sd(hdl));
    let l: Vec<f64> = ldl.iter().map(|v| (v - lm) / ls).collect();
    let h: Vec<f64> = hdl.iter().map(|v| (v - hm) / hs).collect();
    let rho = l.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() / l.len() as f64;
    let mut resid: Vec<f64> = h.iter().zip(&l).map(|(hv, lv)| hv - rho * lv).collect();
    let rs = pop_sd(&resid);
    if !(rs > 1e-12) {
        return Err(CohortError::CollinearHdl);
    }
    let rm = mean(&resid);
    for r in &mut resid {
        *r = (*r - rm) / rs;
    }
    let k = (1.0 - target * target).sqrt();
    let out: Vec<f64> = l
        .iter()
        .zip(&resid)
        .map(|(lv, rv)| hm + hs * (target * lv + k * rv))
        .collect();
    let bad = out.iter().filter(|&&v| v <= 0.0).count();
    if bad > 0 {
        return Err(CohortError::NonPositiveHdl(bad));
    }
    Ok(out)
}

/// Return a copy of `cohort` whose hdl has sample correlation `target` with ldl.
/// ldl and every other field are untouched. Deterministic.
pub fn set_ldl_hdl_correlation(cohort: &[CohortRecord], target: f64) -> Result<Vec<CohortRecord>, CohortError> {
    let ldl: Vec<f64> = cohort.iter().map(|r| r.ldl).collect();
    let hdl: Vec<f64> = cohort.iter().map(|r| r.hdl).collect();
    let new = retarget_hdl(&ldl, &hdl, target)?;
    Ok(cohort
        .iter()
        .zip(new)
        .map(|(r, h)| CohortRecord { hdl: h, ..r.clone() })
        .collect())
}

pub fn ldl_hdl_correlation(cohort: &[CohortRecord]) -> f64 {
    let ldl: Vec<f64> = cohort.iter().map(|r| r.ldl).collect();
    let hdl: Vec<f64> = cohort.iter().map(|r| r.hdl).collect();
    correlation(&ldl, &hdl)
}

/// Check the record invariants of a cohort read from disk.
pub fn validate_records(cohort: &[CohortRecord]) -> Result<(), DataError> {
    if cohort.is_empty() {
        return Err(DataError::Invalid("cohort has no records".into()));
    }
    for r in cohort {
        let fail = |what: &str| Err(DataError::Invalid(format!("record {}: {what}", r.id)));
        if r.z != u8::from(r.risk_centered > 0.0) {
            return fail("z disagrees with risk_centered");
        }
        if r.t > 1 || r.diabetes > 1 {
            return fail("binary field outside {0,1}");
        }
        if !(r.risk > 0.0 && r.risk < 1.0) || !(r.hdl > 0.0) || !(r.ldl > 0.0) || r.age < 50.0 {
            return fail("value outside its domain");
        }
    }
    Ok(())
}

pub fn write_cohort<W: Write>(writer: W, cohort: &[CohortRecord]) -> Result<(), DataError> {
    io::write_csv(writer, cohort)
}

pub fn read_cohort<R: Read>(reader: R, label: &str) -> Result<Vec<CohortRecord>, DataError> {
    let records: Vec<CohortRecord> = io::read_csv(reader, &COLUMNS, label)?;
    validate_records(&records)?;
    Ok(records)
}

pub fn read_cohort_file(path: &Path) -> Result<Vec<CohortRecord>, DataError> {
    let records: Vec<CohortRecord> = io::read_csv_file(path, &COLUMNS)?;
    validate_records(&records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_cohort() -> Vec<CohortRecord> {
        generate_default_stream(&CohortParams::default()).unwrap()
    }

    #[test]
    fn default_size_and_correlation() {
        let c = default_cohort();
        assert_eq!(c.len(), 5720);
        assert!((ldl_hdl_correlation(&c) - 0.18).abs() <= 0.02);
    }

    #[test]
    fn record_invariants_hold() {
        let c = default_cohort();
        validate_records(&c).unwrap();
        for r in &c {
            assert_eq!(r.z == 1, r.risk > THRESHOLD);
            assert!((r.risk_centered - (r.risk - THRESHOLD)).abs() == 0.0);
        }
        let ldl_mean = c.iter().map(|r| r.ldl).sum::<f64>() / c.len() as f64;
        assert!((2.5..=5.0).contains(&ldl_mean));
    }

    #[test]
    fn window_and_fuzziness() {
        let c = default_cohort();
        let near = c.iter().filter(|r| r.risk_centered.abs() <= 0.05).count();
        assert!(near as f64 >= 0.15 * c.len() as f64);
        assert!(c.iter().any(|r| r.z == 0 && r.t == 1));
        assert!(c.iter().any(|r| r.z == 1 && r.t == 0));
    }

    #[test]
    fn degenerate_ldl() {
        let params = CohortParams {
            n: 50,
            ldl_noise_sd: 0.0,
            ldl_slope: 0.0,
            ..CohortParams::default()
        };
        let c = generate_default_stream(&params).unwrap();
        assert!(c.iter().all(|r| r.ldl == 3.7));
    }

    #[test]
    fn z_fraction_matches_risk_model_oracle() {
        // Direct Monte Carlo of the risk model with population age moments.
        let p = CohortParams::default();
        let mut rng = RngStream::new(999, 1);
        let age_mean = (p.age_min + p.age_max) / 2.0;
        let age_sd = (p.age_max - p.age_min) / 12f64.sqrt();
        let draws = 10_000_000;
        let mut above = 0usize;
        for _ in 0..draws {
            let age = p.age_min + (p.age_max - p.age_min) * open_unit(&mut rng);
            let d = f64::from(u8::from(open_unit(&mut rng) < p.diabetes_prevalence));
            let lin = logit(p.risk_median)
                + p.risk_age_coef * (age - age_mean) / age_sd
                + p.risk_diabetes_coef * (d - p.diabetes_prevalence)
                + p.risk_noise_sd * std_normal(&mut rng);
            above += usize::from(expit(lin) > THRESHOLD);
        }
        let target = above as f64 / draws as f64;
        let c = default_cohort();
        let frac = c.iter().filter(|r| r.z == 1).count() as f64 / c.len() as f64;
        assert!((frac - target).abs() <= 0.05, "{frac} vs {target}");
    }

    #[test]
    fn infeasible_targets_rejected() {
        let params = CohortParams {
            ldl_hdl_correlation: 0.95,
            ..CohortParams::default()
        };
        assert!(matches!(
            generate_default_stream(&params),
            Err(CohortError::InfeasibleCorrelation(_))
        ));
        let c = default_cohort();
        assert!(set_ldl_hdl_correlation(&c, -0.97).is_err());
    }

    #[test]
    fn retargeting() {
        let c = default_cohort();
        let hdl: Vec<f64> = c.iter().map(|r| r.hdl).collect();
        for target in [0.5, 0.0, -0.3] {
            let out = set_ldl_hdl_correlation(&c, target).unwrap();
            assert!((ldl_hdl_correlation(&out) - target).abs() <= 0.02);
            let new: Vec<f64> = out.iter().map(|r| r.hdl).collect();
            assert!((mean(&new) / mean(&hdl) - 1.0).abs() < 0.01);
            assert!((pop_sd(&new) / pop_sd(&hdl) - 1.0).abs() < 0.01);
            assert!(out.iter().zip(&c).all(|(a, b)| a.ldl == b.ldl && a.t == b.t));
        }
        let same = set_ldl_hdl_correlation(&c, ldl_hdl_correlation(&c)).unwrap();
        for (a, b) in same.iter().zip(&c) {
            assert!((a.hdl - b.hdl).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_ldl_rejected_by_retarget() {
        let mut c = default_cohort();
        for r in &mut c {
            r.ldl = 3.0;
        }
        assert!(matches!(set_ldl_hdl_correlation(&c, 0.5), Err(CohortError::DegenerateLdl)));
    }

    #[test]
    fn csv_round_trip() {
        let c = generate_default_stream(&CohortParams { n: 25, ..CohortParams::default() }).unwrap();
        let mut buf = Vec::new();
        write_cohort(&mut buf, &c).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,age,diabetes,hdl,ldl,risk,risk_centered,z,t\n"));
        let back = read_cohort(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn missing_column_named() {
        let text = "id,age,diabetes,hdl,ldl,risk,z,t\n1,60,0,1.2,3.5,0.1,0,0\n";
        match read_cohort(text.as_bytes(), "mem") {
            Err(DataError::MissingColumns { missing, .. }) => assert_eq!(missing, vec!["risk_centered"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]
            #[test]
            fn pure_function_of_seed(seed in any::<u64>(), n in 10usize..200) {
                let params = CohortParams { n, seed, ..CohortParams::default() };
                let a = generate_default_stream(&params).unwrap();
                let b = generate_default_stream(&params).unwrap();
                prop_assert_eq!(&a, &b);
                for r in &a {
                    prop_assert_eq!(r.z == 1, r.risk_centered > 0.0);
                }
            }
        }
    }
}
