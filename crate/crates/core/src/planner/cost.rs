//! Cost functions over the interpolation weights.

use serde::{Deserialize, Serialize};

use crate::dynamics::deconvolve;
use crate::error::{Result, SteerError};
use crate::moments::{hankel_embed, is_realizable, MomentVector};

/// Slack allowed when checking the monotone box `0 <= w_k0 <= ... <= w_{K-1} <= 1`.
const BOX_SLACK: f64 = 1e-12;

/// Step used by the central finite-difference gradients.
pub const FD_STEP: f64 = 1e-6;

/// Per-step weights of the general quadratic cost, indexed by absolute time
/// step `0..K`. Steps before the waiting time are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GeneralWeights {
    /// on `E[x^2(k)]`
    pub alpha: Vec<f64>,
    /// on `E[u^2(k)]`
    pub beta: Vec<f64>,
    /// on `E[x(k)] E[u(k)]`
    pub gamma: Vec<f64>,
    /// on `E[x(k)]`
    pub epsilon: Vec<f64>,
    /// on `E[u(k)]`
    pub zeta: Vec<f64>,
    /// constant offset
    pub psi: Vec<f64>,
}

impl GeneralWeights {
    /// All-zero weights for a horizon of `k` steps.
    pub fn zeros(horizon: usize) -> Self {
        let z = vec![0.0; horizon];
        Self {
            alpha: z.clone(),
            beta: z.clone(),
            gamma: z.clone(),
            epsilon: z.clone(),
            zeta: z.clone(),
            psi: z,
        }
    }

    fn fields(&self) -> [(&'static str, &Vec<f64>); 6] {
        [
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("gamma", &self.gamma),
            ("epsilon", &self.epsilon),
            ("zeta", &self.zeta),
            ("psi", &self.psi),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSpec {
    /// Squared increments of the weights, anchored at 0 and 1.
    Smoothness,
    /// Total control energy `sum E[u^2(k)]`.
    Energy,
    /// Control energy plus `state_weight * sum E[x^2(k)]`.
    EnergyPlusState { state_weight: f64 },
    /// Per-step weighted quadratic cost in the first two moments.
    General(GeneralWeights),
}

impl CostSpec {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        match self {
            CostSpec::Smoothness | CostSpec::Energy => Ok(()),
            CostSpec::EnergyPlusState { state_weight } => {
                if state_weight.is_finite() && *state_weight >= 0.0 {
                    Ok(())
                } else {
                    Err(SteerError::InvalidCost(format!(
                        "state_weight must be >= 0, got {state_weight}"
                    )))
                }
            }
            CostSpec::General(w) => {
                for (name, v) in w.fields() {
                    if v.len() != horizon {
                        return Err(SteerError::InvalidCost(format!(
                            "{name} has {} entries, horizon is {horizon}",
                            v.len()
                        )));
                    }
                    if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                        return Err(SteerError::InvalidCost(format!("{name} has a negative entry")));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CostSpec::Smoothness => "smoothness",
            CostSpec::Energy => "energy",
            CostSpec::EnergyPlusState { .. } => "energy_plus_state",
            CostSpec::General(_) => "general",
        }
    }
}

/// Everything the weight optimization needs once the waiting time is fixed.
///
/// The planned states are `X(k0)` (the decayed initial state),
/// `X(k) = X(k0) + w_k e(k0)` for `k0 < k < K`, and `X(K) = target`. The first
/// weight `w_k0` enters only the smoothness cost as its anchor term.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanContext {
    pub k0: usize,
    pub horizon: usize,
    pub start: MomentVector,
    pub target: MomentVector,
    pub error: MomentVector,
    /// `a(k0), ..., a(K-1)`.
    pub coefficients: Vec<f64>,
}

impl PlanContext {
    pub fn new(k0: usize, start: MomentVector, target: MomentVector, coefficients: Vec<f64>) -> Result<Self> {
        let error = target.sub(&start)?;
        Ok(Self {
            k0,
            horizon: k0 + coefficients.len(),
            start,
            target,
            error,
            coefficients,
        })
    }

    pub fn num_weights(&self) -> usize {
        self.coefficients.len()
    }

    /// Planned states `X(k0), ..., X(K)`.
    pub fn states(&self, omega: &[f64]) -> Result<Vec<MomentVector>> {
        let m = self.num_weights();
        let mut out = Vec::with_capacity(m + 1);
        out.push(self.start.clone());
        for w in &omega[1..m] {
            out.push(self.start.axpy(*w, &self.error)?);
        }
        out.push(self.target.clone());
        Ok(out)
    }

    /// Control moments `U(k0), ..., U(K-1)` realizing the planned states.
    pub fn controls_for(&self, states: &[MomentVector]) -> Result<Vec<MomentVector>> {
        states
            .windows(2)
            .zip(&self.coefficients)
            .map(|(pair, &a)| deconvolve(&pair[0], &pair[1], a))
            .collect()
    }

    pub fn controls(&self, omega: &[f64]) -> Result<Vec<MomentVector>> {
        self.controls_for(&self.states(omega)?)
    }

    /// Smallest Hankel eigenvalue over all planned controls, and whether every
    /// control is realizable.
    pub fn feasibility(&self, omega: &[f64]) -> (bool, f64) {
        self.feasibility_with_margin(omega, 0.0)
    }

    /// As [`Self::feasibility`], additionally requiring every control's
    /// normalized Hankel eigenvalue to reach `margin`.
    pub fn feasibility_with_margin(&self, omega: &[f64], margin: f64) -> (bool, f64) {
        let controls = match self.controls(omega) {
            Ok(c) => c,
            Err(_) => return (false, f64::NEG_INFINITY),
        };
        controls.iter().fold((true, f64::INFINITY), |(ok, min), u| {
            let p = is_realizable(u);
            let inside = margin <= 0.0 || hankel_embed(u).normalized_min_eigenvalue() >= margin;
            (ok && p.member && inside, min.min(p.min_eigenvalue))
        })
    }

    pub(crate) fn check_weights(&self, omega: &[f64]) -> Result<()> {
        if omega.len() != self.num_weights() {
            return Err(SteerError::WeightLength {
                expected: self.num_weights(),
                found: omega.len(),
            });
        }
        for (i, &w) in omega.iter().enumerate() {
            let below = if i == 0 { 0.0 } else { omega[i - 1] };
            if !w.is_finite() || w < below - BOX_SLACK || !(-BOX_SLACK..=1.0 + BOX_SLACK).contains(&w) {
                return Err(SteerError::WeightsOutOfBox { index: i });
            }
        }
        Ok(())
    }
}

/// `sum_{i=k0}^{K-1} (w_{i+1} - w_i)^2 + w_k0^2` with `w_K = 1`.
pub fn smoothness_value(omega: &[f64]) -> f64 {
    let mut prev = 0.0;
    let mut f = 0.0;
    for &w in omega.iter().chain(std::iter::once(&1.0)) {
        f += (w - prev) * (w - prev);
        prev = w;
    }
    f
}

pub fn smoothness_gradient(omega: &[f64]) -> Vec<f64> {
    let m = omega.len();
    (0..m)
        .map(|i| {
            let left = if i == 0 { 0.0 } else { omega[i - 1] };
            let right = if i + 1 == m { 1.0 } else { omega[i + 1] };
            2.0 * (omega[i] - left) - 2.0 * (right - omega[i])
        })
        .collect()
}

/// Product with the constant Hessian of the smoothness cost: tridiagonal with
/// 4 on the diagonal and -2 off it.
pub fn smoothness_hessian_vec(v: &[f64]) -> Vec<f64> {
    let m = v.len();
    (0..m)
        .map(|i| {
            let mut out = 4.0 * v[i];
            if i > 0 {
                out -= 2.0 * v[i - 1];
            }
            if i + 1 < m {
                out -= 2.0 * v[i + 1];
            }
            out
        })
        .collect()
}

/// Evaluation without the box check; used inside finite differences.
pub(crate) fn evaluate(spec: &CostSpec, omega: &[f64], ctx: &PlanContext) -> Result<f64> {
    if let CostSpec::Smoothness = spec {
        return Ok(smoothness_value(omega));
    }
    let states = ctx.states(omega)?;
    let controls = ctx.controls_for(&states)?;
    let steps = states[..controls.len()].iter().zip(&controls).enumerate();
    let value = match spec {
        CostSpec::Smoothness => unreachable!(),
        CostSpec::Energy => controls.iter().map(|u| u.moment(2)).sum(),
        CostSpec::EnergyPlusState { state_weight } => states
            .iter()
            .zip(&controls)
            .map(|(x, u)| u.moment(2) + state_weight * x.moment(2))
            .sum(),
        CostSpec::General(w) => steps
            .map(|(i, (x, u))| {
                let k = ctx.k0 + i;
                w.alpha[k] * x.moment(2)
                    + w.beta[k] * u.moment(2)
                    + w.gamma[k] * x.moment(1) * u.moment(1)
                    + w.epsilon[k] * x.moment(1)
                    + w.zeta[k] * u.moment(1)
                    + w.psi[k]
            })
            .sum(),
    };
    Ok(value)
}

pub(crate) fn gradient_unchecked(spec: &CostSpec, omega: &[f64], ctx: &PlanContext) -> Result<Vec<f64>> {
    if let CostSpec::Smoothness = spec {
        return Ok(smoothness_gradient(omega));
    }
    let mut probe = omega.to_vec();
    let mut grad = Vec::with_capacity(omega.len());
    for i in 0..omega.len() {
        let hi = (omega[i] + FD_STEP).min(1.0);
        let lo = (omega[i] - FD_STEP).max(0.0);
        probe[i] = hi;
        let f_hi = evaluate(spec, &probe, ctx)?;
        probe[i] = lo;
        let f_lo = evaluate(spec, &probe, ctx)?;
        probe[i] = omega[i];
        grad.push((f_hi - f_lo) / (hi - lo));
    }
    Ok(grad)
}

/// Cost of a weight vector inside the monotone box.
pub fn cost_value(spec: &CostSpec, omega: &[f64], ctx: &PlanContext) -> Result<f64> {
    ctx.check_weights(omega)?;
    evaluate(spec, omega, ctx)
}

/// Gradient of [`cost_value`]: analytic for smoothness, central finite
/// differences of the exact evaluation otherwise.
pub fn cost_gradient(spec: &CostSpec, omega: &[f64], ctx: &PlanContext) -> Result<Vec<f64>> {
    ctx.check_weights(omega)?;
    gradient_unchecked(spec, omega, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bimodal_ctx(k0: usize) -> PlanContext {
        let start = MomentVector::new(vec![0.0, 1.0, 0.0, 3.0]).unwrap();
        let target = MomentVector::new(vec![-0.5, 8.5, -12.5, 150.5]).unwrap();
        PlanContext::new(k0, start, target, vec![0.4, 0.35, 0.45, 0.32][k0..].to_vec()).unwrap()
    }

    #[test]
    fn smoothness_examples() {
        let w = [1.0 / 3.0, 2.0 / 3.0];
        assert_abs_diff_eq!(smoothness_value(&w), 1.0 / 3.0, epsilon = 1e-15);
        for g in smoothness_gradient(&w) {
            assert_abs_diff_eq!(g, 0.0, epsilon = 1e-15);
        }
        assert_eq!(smoothness_value(&[0.5]), 0.5);
        assert_eq!(smoothness_hessian_vec(&[1.0, 0.0, 0.0]), vec![4.0, -2.0, 0.0]);
    }

    #[test]
    fn general_specializes_to_energy() {
        let ctx = bimodal_ctx(0);
        let mut w = GeneralWeights::zeros(4);
        w.beta = vec![1.0; 4];
        let general = CostSpec::General(w);
        general.validate(4).unwrap();
        let omega = [0.1, 0.3, 0.5, 0.7];
        let a = cost_value(&general, &omega, &ctx).unwrap();
        let b = cost_value(&CostSpec::Energy, &omega, &ctx).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn energy_plus_state_adds_second_moments() {
        let ctx = bimodal_ctx(0);
        let omega = [0.2, 0.4, 0.6, 0.8];
        let e = cost_value(&CostSpec::Energy, &omega, &ctx).unwrap();
        let es = cost_value(&CostSpec::EnergyPlusState { state_weight: 0.5 }, &omega, &ctx).unwrap();
        // X(0..4) second moments: 1, 1 + 0.4*7.5, 1 + 0.6*7.5, 1 + 0.8*7.5
        let states = 1.0 + 4.0 + 5.5 + 7.0;
        assert_abs_diff_eq!(es - e, 0.5 * states, epsilon = 1e-12);
    }

    #[test]
    fn rejects_weights_outside_box() {
        let ctx = bimodal_ctx(0);
        let spec = CostSpec::Smoothness;
        assert!(matches!(
            cost_value(&spec, &[0.2, 0.1, 0.5, 0.6], &ctx),
            Err(SteerError::WeightsOutOfBox { index: 1 })
        ));
        assert!(cost_value(&spec, &[-0.1, 0.1, 0.5, 0.6], &ctx).is_err());
        assert!(cost_value(&spec, &[0.1, 0.1, 0.5, 1.2], &ctx).is_err());
        assert!(matches!(
            cost_value(&spec, &[0.1, 0.2], &ctx),
            Err(SteerError::WeightLength { .. })
        ));
    }

    #[test]
    fn rejects_bad_general_weights() {
        let mut w = GeneralWeights::zeros(4);
        w.alpha[2] = -1.0;
        assert!(CostSpec::General(w).validate(4).is_err());
        assert!(CostSpec::General(GeneralWeights::zeros(3)).validate(4).is_err());
        assert!(CostSpec::EnergyPlusState { state_weight: -1.0 }.validate(4).is_err());
    }

    #[test]
    fn fd_gradient_of_quadratic_energy_is_accurate() {
        let ctx = bimodal_ctx(1);
        let omega = [0.2, 0.5, 0.6];
        let g = cost_gradient(&CostSpec::Energy, &omega, &ctx).unwrap();
        // anchor weight has no physical effect
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-9);
        let h = 1e-3;
        for i in 1..3 {
            let mut p = omega;
            p[i] += h;
            let mut q = omega;
            q[i] -= h;
            let fd = (evaluate(&CostSpec::Energy, &p, &ctx).unwrap() - evaluate(&CostSpec::Energy, &q, &ctx).unwrap())
                / (2.0 * h);
            assert_abs_diff_eq!(g[i], fd, epsilon = 1e-6);
        }
    }
}
