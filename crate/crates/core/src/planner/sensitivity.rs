//! Sensitivity of the terminal control to the last interpolation weight.

use serde::{Deserialize, Serialize};

use super::SteeringPlan;
use crate::dynamics::{deconvolve, transition_matrix};
use crate::error::Result;
use crate::moments::MomentVector;

/// Half-width of the central difference in the weight.
pub const SENSITIVITY_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    /// Weight `w_{K-1}` at which the derivative is taken.
    pub weight: f64,
    pub finite_difference: Vec<f64>,
    /// `-A(U(K-1)) e(k0)`.
    pub approximation: Vec<f64>,
    /// `|fd - approx| / max(|fd|, |approx|)`, zero where both vanish.
    pub relative_error: Vec<f64>,
    /// Undefined (None) when either vector is zero.
    pub cosine_similarity: Option<f64>,
}

/// Compares the exact derivative of `U(K-1) = deconvolve(X(k0) + w e, target, a)`
/// with respect to `w` against the first-order approximation `-A(U) e`.
pub fn terminal_sensitivity(
    start: &MomentVector,
    error: &MomentVector,
    target: &MomentVector,
    a: f64,
    weight: f64,
) -> Result<SensitivityReport> {
    let control_at = |w: f64| deconvolve(&start.axpy(w, error)?, target, a);
    let plus = control_at(weight + SENSITIVITY_STEP)?;
    let minus = control_at(weight - SENSITIVITY_STEP)?;
    let finite_difference: Vec<f64> = plus
        .as_slice()
        .iter()
        .zip(minus.as_slice())
        .map(|(p, m)| (p - m) / (2.0 * SENSITIVITY_STEP))
        .collect();

    let u = control_at(weight)?;
    let applied = transition_matrix(a, &u)?.apply(error)?;
    let approximation: Vec<f64> = applied.as_slice().iter().map(|v| -v).collect();

    let relative_error = finite_difference
        .iter()
        .zip(&approximation)
        .map(|(f, g)| {
            let scale = f.abs().max(g.abs());
            if scale == 0.0 {
                0.0
            } else {
                (f - g).abs() / scale
            }
        })
        .collect();

    let dot: f64 = finite_difference.iter().zip(&approximation).map(|(f, g)| f * g).sum();
    let nf = finite_difference.iter().map(|f| f * f).sum::<f64>().sqrt();
    let ng = approximation.iter().map(|g| g * g).sum::<f64>().sqrt();
    let cosine_similarity = if nf > 0.0 && ng > 0.0 {
        Some(dot / (nf * ng))
    } else {
        None
    };

    Ok(SensitivityReport {
        weight,
        finite_difference,
        approximation,
        relative_error,
        cosine_similarity,
    })
}

/// Sensitivity report for the last control of a plan.
pub fn last_control_sensitivity(plan: &SteeringPlan) -> Result<SensitivityReport> {
    let k0 = plan.k0;
    let last = plan.horizon - 1;
    // the anchor weight w_k0 does not move X(k0)
    let weight = if last > k0 { plan.omega[last - k0] } else { 0.0 };
    terminal_sensitivity(
        &plan.states[k0],
        &plan.error,
        &plan.target,
        plan.coefficients[last],
        weight,
    )
}
