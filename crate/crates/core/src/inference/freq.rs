use super::window::{BandwidthWindow, RdPoint};
use super::{EstimateSummary, InferenceError, Z_975};
use crate::numerics::ols::{design_from_columns, ols_fit};
use crate::numerics::LinearFit;

/// Intercept gap between separate local-linear fits on each side.
#[derive(Clone, Debug)]
pub struct JumpEstimate {
    pub jump: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    pub below: LinearFit,
    pub above: LinearFit,
}

fn side_fit(side: &[RdPoint], name: &'static str) -> Result<LinearFit, InferenceError> {
    if side.len() < 3 {
        return Err(InferenceError::TooFewPoints {
            side: name,
            n: side.len(),
            needed: 3,
        });
    }
    let one = vec![1.0; side.len()];
    let x: Vec<f64> = side.iter().map(|p| p.x).collect();
    let y: Vec<f64> = side.iter().map(|p| p.y).collect();
    ols_fit(&design_from_columns(&[&one, &x]), &y).map_err(|source| InferenceError::SideFit { side: name, source })
}

pub fn local_linear_jump(window: &BandwidthWindow) -> Result<JumpEstimate, InferenceError> {
    let below = side_fit(&window.below, "below")?;
    let above = side_fit(&window.above, "above")?;
    let jump = above.coefficients[0] - below.coefficients[0];
    let se = (above.standard_errors[0].powi(2) + below.standard_errors[0].powi(2)).sqrt();
    Ok(JumpEstimate {
        jump,
        se,
        lower: jump - Z_975 * se,
        upper: jump + Z_975 * se,
        below,
        above,
    })
}

pub fn freq_ate(window: &BandwidthWindow) -> Result<EstimateSummary, InferenceError> {
    let j = local_linear_jump(window)?;
    Ok(EstimateSummary::new("freq", j.jump, j.lower, j.upper, None, window.warnings.clone()))
}
