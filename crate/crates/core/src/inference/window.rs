use serde::Serialize;

use super::InferenceError;
use crate::simulate::SimRecord;

/// Small-sample warning below this many records on either side.
pub const DEFAULT_MIN_SIDE: usize = 30;

/// One observation as the estimators see it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdPoint {
    /// Centred assignment variable `x - 0.2`.
    pub x: f64,
    pub y: f64,
    pub treated: bool,
}

/// Estimation view of a simulated dataset: final outcome and simulated treatment.
pub fn rd_points(records: &[SimRecord]) -> Vec<RdPoint> {
    records
        .iter()
        .map(|r| RdPoint {
            x: r.risk_centered,
            y: r.y_sim3,
            treated: r.t_hat == 1,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TreatmentCounts {
    pub n_b: u64,
    pub s_b: u64,
    pub n_a: u64,
    pub s_a: u64,
}

#[derive(Clone, Debug)]
pub struct BandwidthWindow {
    pub h: f64,
    /// `-h <= x <= 0`
    pub below: Vec<RdPoint>,
    /// `0 < x <= h`
    pub above: Vec<RdPoint>,
    pub warnings: Vec<String>,
}

impl BandwidthWindow {
    pub fn counts(&self) -> TreatmentCounts {
        let treated = |side: &[RdPoint]| side.iter().filter(|p| p.treated).count() as u64;
        TreatmentCounts {
            n_b: self.below.len() as u64,
            s_b: treated(&self.below),
            n_a: self.above.len() as u64,
            s_a: treated(&self.above),
        }
    }
}

pub fn window(points: &[RdPoint], h: f64) -> Result<BandwidthWindow, InferenceError> {
    window_with_min(points, h, DEFAULT_MIN_SIDE)
}

pub fn window_with_min(points: &[RdPoint], h: f64, min_side: usize) -> Result<BandwidthWindow, InferenceError> {
    if !(h > 0.0) || h.is_nan() {
        return Err(InferenceError::Bandwidth(h));
    }
    let mut below = Vec::new();
    let mut above = Vec::new();
    for p in points {
        if p.x > 0.0 && p.x <= h {
            above.push(*p);
        } else if p.x <= 0.0 && p.x >= -h {
            below.push(*p);
        }
    }
    for (side, v) in [("below", &below), ("above", &above)] {
        if v.is_empty() {
            return Err(InferenceError::EmptySide { side, h });
        }
    }
    let mut warnings = Vec::new();
    for (side, v) in [("below", &below), ("above", &above)] {
        if v.len() < min_side {
            warnings.push(format!("only {} records {side} the threshold within h={h}", v.len()));
        }
    }
    Ok(BandwidthWindow {
        h,
        below,
        above,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64) -> RdPoint {
        RdPoint { x, y: 0.0, treated: false }
    }

    #[test]
    fn boundary_goes_below() {
        let w = window(&[pt(-0.05), pt(0.0), pt(0.01)], 0.05).unwrap();
        assert_eq!(w.below.iter().map(|p| p.x).collect::<Vec<_>>(), vec![-0.05, 0.0]);
        assert_eq!(w.above.iter().map(|p| p.x).collect::<Vec<_>>(), vec![0.01]);
        assert_eq!(w.warnings.len(), 2);
    }

    #[test]
    fn wide_window_keeps_everything() {
        let pts: Vec<RdPoint> = (-10..10).map(|i| pt(i as f64 / 50.0)).collect();
        let w = window(&pts, 10.0).unwrap();
        assert_eq!(w.below.len() + w.above.len(), pts.len());
    }

    #[test]
    fn errors_name_the_side() {
        match window(&[pt(-0.01)], 0.05) {
            Err(InferenceError::EmptySide { side: "above", .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(window(&[pt(0.0)], 0.0), Err(InferenceError::Bandwidth(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn partition_matches_linear_scan(
                xs in prop::collection::vec(-0.3f64..0.3, 1..200),
                h in 0.01f64..0.4,
            ) {
                let mut pts: Vec<RdPoint> = xs.iter().map(|&x| pt(x)).collect();
                pts.push(pt(-h / 2.0));
                pts.push(pt(h / 2.0));
                let w = window(&pts, h).unwrap();
                let inside = pts.iter().filter(|p| p.x.abs() <= h).count();
                prop_assert_eq!(w.below.len() + w.above.len(), inside);
                prop_assert!(w.below.iter().all(|p| p.x <= 0.0));
                prop_assert!(w.above.iter().all(|p| p.x > 0.0));
            }
        }
    }
}
