//! Plot-ready binned summaries and checks of the testable design assumptions:
//! the threshold moves treatment (A1) and covariates are continuous at it (A4).

use std::str::FromStr;

use serde::Serialize;

use crate::cohort::THRESHOLD;
use crate::inference::window::{window_with_min, RdPoint};
use crate::inference::{local_linear_jump, rd_points, InferenceError, Z_975};
use crate::simulate::SimRecord;

pub const DEFAULT_BIN_WIDTH: f64 = 0.01;
/// A1 strength label switches to "weak" below this treatment-probability jump.
pub const DEFAULT_WEAK_BELOW: f64 = 0.3;

#[derive(Debug, thiserror::Error)]
pub enum DiagnosticsError {
    #[error("bin width must be positive (got {0})")]
    BinWidth(f64),
    #[error("no records to bin")]
    EmptyRange,
    #[error("`{0}` is the assignment variable itself; its jump is degenerate")]
    DegenerateCovariate(String),
    #[error("unknown covariate `{0}` (expected age, hdl or diabetes)")]
    UnknownCovariate(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
    pub mid: f64,
    pub count: usize,
    pub mean_y: Option<f64>,
    pub prop_treated: Option<f64>,
}

/// Equal-width bins over the risk score anchored so the threshold is an edge.
/// Bin `k` covers `(0.2 + k·w, 0.2 + (k+1)·w]`, matching the `z = 0` boundary rule.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BinnedSummary {
    pub width: f64,
    pub bins: Vec<Bin>,
}

/// CSV row of the binned summary; empty bins leave the means blank.
#[derive(Serialize)]
pub struct BinRow {
    pub bin_mid: f64,
    pub mean_y: Option<f64>,
    pub prop_treated: Option<f64>,
    pub count: usize,
}

impl BinnedSummary {
    pub fn rows(&self) -> Vec<BinRow> {
        self.bins
            .iter()
            .map(|b| BinRow {
                bin_mid: b.mid,
                mean_y: b.mean_y,
                prop_treated: b.prop_treated,
                count: b.count,
            })
            .collect()
    }
}

fn bin_index(xc: f64, width: f64) -> i64 {
    let mut k = (xc / width).ceil() as i64 - 1;
    // Make the index agree with edges computed as k·w.
    while xc <= k as f64 * width {
        k -= 1;
    }
    while xc > (k + 1) as f64 * width {
        k += 1;
    }
    k
}

pub fn binned_summary(points: &[RdPoint], width: f64) -> Result<BinnedSummary, DiagnosticsError> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(DiagnosticsError::BinWidth(width));
    }
    if points.is_empty() {
        return Err(DiagnosticsError::EmptyRange);
    }
    let idx: Vec<i64> = points.iter().map(|p| bin_index(p.x, width)).collect();
    let lo = *idx.iter().min().expect("non-empty");
    let hi = *idx.iter().max().expect("non-empty");
    let nbins = (hi - lo + 1) as usize;
    let mut count = vec![0usize; nbins];
    let mut sum_y = vec![0.0; nbins];
    let mut sum_t = vec![0.0; nbins];
    for (p, k) in points.iter().zip(&idx) {
        let b = (k - lo) as usize;
        count[b] += 1;
        sum_y[b] += p.y;
        sum_t[b] += f64::from(u8::from(p.treated));
    }
    let bins = (0..nbins)
        .map(|b| {
            let k = lo + b as i64;
            let lower = THRESHOLD + k as f64 * width;
            let upper = THRESHOLD + (k + 1) as f64 * width;
            let n = count[b];
            Bin {
                lower,
                upper,
                mid: THRESHOLD + (k as f64 + 0.5) * width,
                count: n,
                mean_y: (n > 0).then(|| sum_y[b] / n as f64),
                prop_treated: (n > 0).then(|| sum_t[b] / n as f64),
            }
        })
        .collect();
    Ok(BinnedSummary { width, bins })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct A1Report {
    pub bandwidth: f64,
    pub n_b: u64,
    pub s_b: u64,
    pub n_a: u64,
    pub s_a: u64,
    pub difference: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    pub label: String,
}

/// Difference in treated proportions across the threshold within `h`, from
/// the same window the estimators use. The standard error adds 0.5 to the
/// treated counts (and 1 to the totals) when a side is all or none treated.
pub fn check_a1(points: &[RdPoint], h: f64, weak_below: f64) -> Result<A1Report, DiagnosticsError> {
    let w = window_with_min(points, h, 0)?;
    let c = w.counts();
    let p = |s: u64, n: u64| s as f64 / n as f64;
    let difference = p(c.s_a, c.n_a) - p(c.s_b, c.n_b);
    let var = |s: u64, n: u64| {
        let q = if s == 0 || s == n { (s as f64 + 0.5) / (n as f64 + 1.0) } else { p(s, n) };
        q * (1.0 - q) / n as f64
    };
    let se = (var(c.s_a, c.n_a) + var(c.s_b, c.n_b)).sqrt();
    Ok(A1Report {
        bandwidth: h,
        n_b: c.n_b,
        s_b: c.s_b,
        n_a: c.n_a,
        s_a: c.s_a,
        difference,
        se,
        lower: difference - Z_975 * se,
        upper: difference + Z_975 * se,
        label: if difference < weak_below { "weak" } else { "strong" }.to_string(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Covariate {
    Age,
    Hdl,
    Diabetes,
}

impl Covariate {
    pub const ALL: [Covariate; 3] = [Covariate::Age, Covariate::Hdl, Covariate::Diabetes];

    fn value(self, r: &SimRecord) -> f64 {
        match self {
            Covariate::Age => r.age,
            Covariate::Hdl => r.hdl,
            Covariate::Diabetes => f64::from(r.diabetes),
        }
    }
}

impl FromStr for Covariate {
    type Err = DiagnosticsError;
    fn from_str(s: &str) -> Result<Self, DiagnosticsError> {
        match s {
            "age" => Ok(Covariate::Age),
            "hdl" => Ok(Covariate::Hdl),
            "diabetes" => Ok(Covariate::Diabetes),
            "risk" | "risk_centered" | "x" | "xc" => Err(DiagnosticsError::DegenerateCovariate(s.to_string())),
            other => Err(DiagnosticsError::UnknownCovariate(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct A4Report {
    pub covariate: Covariate,
    pub bandwidth: f64,
    pub jump: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    /// `|jump| > 2·SE`: a suspected discontinuity in the covariate.
    pub flagged: bool,
}

/// Local-linear jump of a baseline covariate at the threshold.
pub fn covariate_continuity(records: &[SimRecord], covariate: Covariate, h: f64) -> Result<A4Report, DiagnosticsError> {
    let points: Vec<RdPoint> = records
        .iter()
        .map(|r| RdPoint {
            x: r.risk_centered,
            y: covariate.value(r),
            treated: r.t_hat == 1,
        })
        .collect();
    let w = window_with_min(&points, h, 0)?;
    let j = local_linear_jump(&w)?;
    Ok(A4Report {
        covariate,
        bandwidth: h,
        jump: j.jump,
        se: j.se,
        lower: j.lower,
        upper: j.upper,
        flagged: j.jump.abs() > 2.0 * j.se,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagnosticsReport {
    pub bin_width: f64,
    pub a1: A1Report,
    pub a4: Vec<A4Report>,
}

/// Binned summary plus the A1 and A4 checks for one dataset.
pub fn diagnose(records: &[SimRecord], h: f64, bin_width: f64) -> Result<(BinnedSummary, DiagnosticsReport), DiagnosticsError> {
    let points = rd_points(records);
    let binned = binned_summary(&points, bin_width)?;
    let a1 = check_a1(&points, h, DEFAULT_WEAK_BELOW)?;
    let a4 = Covariate::ALL
        .iter()
        .map(|&c| covariate_continuity(records, c, h))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((binned, DiagnosticsReport { bin_width, a1, a4 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_default_stream, CohortParams};
    use crate::numerics::dist::{open_unit, std_normal};
    use crate::numerics::RngStream;
    use crate::simulate::{simulate_dataset, ConfoundingLevel, IvStrength, ScenarioConfig};

    fn dataset(iv: IvStrength, level: u8) -> Vec<SimRecord> {
        let base = generate_default_stream(&CohortParams::default()).unwrap();
        let s = ScenarioConfig {
            iv_strength: iv,
            confounding_level: ConfoundingLevel::new(level).unwrap(),
            ..ScenarioConfig::default()
        };
        simulate_dataset(&base, &s, 0).unwrap().records
    }

    #[test]
    fn single_bin_is_global_mean() {
        let pts: Vec<RdPoint> = (0..50)
            .map(|i| RdPoint { x: -0.1 + i as f64 * 0.001, y: i as f64, treated: i % 2 == 0 })
            .collect();
        let b = binned_summary(&pts, 1.0).unwrap();
        assert_eq!(b.bins.len(), 1);
        assert!((b.bins[0].mean_y.unwrap() - 24.5).abs() < 1e-12);
    }

    #[test]
    fn counts_match_linear_scan_and_threshold_is_edge() {
        let recs = dataset(IvStrength::Strong, 1);
        let pts = rd_points(&recs);
        let b = binned_summary(&pts, DEFAULT_BIN_WIDTH).unwrap();
        for bin in &b.bins {
            let lo = bin.lower - THRESHOLD;
            let hi = bin.upper - THRESHOLD;
            assert!(!(lo < 0.0 && hi > 0.0), "bin straddles threshold");
            let brute = recs
                .iter()
                .filter(|r| r.risk_centered > lo && r.risk_centered <= hi)
                .count();
            assert_eq!(bin.count, brute);
        }
        assert_eq!(b.bins.iter().map(|b| b.count).sum::<usize>(), recs.len());
        assert!(b.bins.iter().any(|bin| (bin.upper - THRESHOLD).abs() < 1e-12));
    }

    #[test]
    fn strong_design_jumps_in_treatment() {
        let recs = dataset(IvStrength::Strong, 1);
        let b = binned_summary(&rd_points(&recs), DEFAULT_BIN_WIDTH).unwrap();
        let k = b.bins.iter().position(|bin| bin.lower >= THRESHOLD - 1e-12).unwrap();
        let jump = b.bins[k].prop_treated.unwrap() - b.bins[k - 1].prop_treated.unwrap();
        assert!(jump > 0.5, "{jump}");
    }

    #[test]
    fn a1_sharp_null_and_weak() {
        let mut rng = RngStream::new(90, 0);
        let sharp: Vec<RdPoint> = (0..400)
            .map(|_| {
                let x = 0.1 * (open_unit(&mut rng) - 0.5);
                RdPoint { x, y: 0.0, treated: x > 0.0 }
            })
            .collect();
        let r = check_a1(&sharp, 0.05, DEFAULT_WEAK_BELOW).unwrap();
        assert_eq!(r.difference, 1.0);
        assert!(r.se > 0.0);
        assert_eq!(r.label, "strong");
        let null: Vec<RdPoint> = sharp.iter().map(|p| RdPoint { treated: open_unit(&mut rng) < 0.4, ..*p }).collect();
        let r = check_a1(&null, 0.05, DEFAULT_WEAK_BELOW).unwrap();
        assert!(r.difference.abs() < 3.0 * r.se);
        let weak = check_a1(&rd_points(&dataset(IvStrength::Weak, 3)), 0.05, DEFAULT_WEAK_BELOW).unwrap();
        assert_eq!(weak.label, "weak");
        let c = crate::inference::window(&null, 0.05).unwrap().counts();
        assert_eq!(
            check_a1(&null, 0.05, 0.3).unwrap().difference,
            c.s_a as f64 / c.n_a as f64 - c.s_b as f64 / c.n_b as f64
        );
    }

    #[test]
    fn covariate_parsing() {
        assert!(matches!("risk_centered".parse::<Covariate>(), Err(DiagnosticsError::DegenerateCovariate(_))));
        assert!(matches!("ldl2".parse::<Covariate>(), Err(DiagnosticsError::UnknownCovariate(_))));
        assert_eq!("hdl".parse::<Covariate>().unwrap(), Covariate::Hdl);
    }

    #[test]
    fn planted_hdl_jump_is_found() {
        let mut recs = dataset(IvStrength::Strong, 1);
        let mut rng = RngStream::new(91, 0);
        for r in &mut recs {
            r.hdl = 1.3 + 0.3 * std_normal(&mut rng) + if r.z == 1 { 1.0 } else { 0.0 };
        }
        let rep = covariate_continuity(&recs, Covariate::Hdl, 0.05).unwrap();
        assert!(rep.flagged);
        assert!((rep.jump - 1.0).abs() <= 0.2, "{}", rep.jump);
    }

    #[test]
    fn age_rarely_flagged_across_cohorts() {
        let flagged = (0..40)
            .filter(|&seed| {
                let base = generate_default_stream(&CohortParams { seed: 1000 + seed, ..CohortParams::default() }).unwrap();
                let recs = simulate_dataset(&base, &ScenarioConfig::default(), 0).unwrap().records;
                covariate_continuity(&recs, Covariate::Age, 0.05).unwrap().flagged
            })
            .count();
        assert!(flagged <= 4, "{flagged} of 40");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn order_invariant_and_refinement_preserves_counts(
                xs in prop::collection::vec(-0.2f64..0.3, 1..300),
                factor in 1usize..6,
                rot in 0usize..300,
            ) {
                let pts: Vec<RdPoint> = xs.iter().map(|&x| RdPoint { x, y: x * 3.0, treated: x > 0.05 }).collect();
                let mut rotated = pts.clone();
                rotated.rotate_left(rot % pts.len());
                let a = binned_summary(&pts, 0.02).unwrap();
                let b = binned_summary(&rotated, 0.02).unwrap();
                prop_assert_eq!(a.bins.iter().map(|b| b.count).collect::<Vec<_>>(), b.bins.iter().map(|b| b.count).collect::<Vec<_>>());
                let fine = binned_summary(&pts, 0.02 / factor as f64).unwrap();
                prop_assert_eq!(fine.bins.iter().map(|b| b.count).sum::<usize>(), pts.len());
            }
        }
    }
}
