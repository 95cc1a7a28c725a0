//! Wait-then-steer planning in the moment system.
//!
//! The system first runs uncontrolled until the moment error
//! `e(k0) = target - X(k0)` has a positive definite Hankel embedding. The
//! remaining states are then placed on the segment `X(k0) + w e(k0)` with
//! nondecreasing weights chosen by minimizing a convex cost, and each control
//! is recovered from consecutive states by deconvolution.

mod cost;
mod optimize;
mod sensitivity;

pub use cost::{
    cost_gradient, cost_value, smoothness_gradient, smoothness_hessian_vec, smoothness_value, CostSpec, GeneralWeights,
    PlanContext, FD_STEP,
};
pub use optimize::{
    equispaced, optimize_weights, project_monotone_box, OptimizerOptions, WeightSolution, DEFAULT_CONTROL_MARGIN,
};
pub use sensitivity::{last_control_sensitivity, terminal_sensitivity, SensitivityReport, SENSITIVITY_STEP};

use serde::{Deserialize, Serialize};

use crate::dynamics::{decay, deconvolve, SystemSchedule};
use crate::error::{Result, SteerError};
use crate::moments::{in_vpp, is_realizable, DistributionSpec, MomentVector};

/// Resolution of the terminal-weight bisection.
pub const BISECTION_TOL: f64 = 1e-6;

/// Entrywise `target - state`.
pub fn error_vector(target: &MomentVector, state: &MomentVector) -> Result<MomentVector> {
    target.sub(state)
}

/// Smallest `k <= k_max` at which the error between the target and the
/// uncontrolled state is realizable.
pub fn find_waiting_time(
    initial: &MomentVector,
    target: &MomentVector,
    schedule: &SystemSchedule,
    k_max: usize,
) -> Result<usize> {
    initial.ensure_same_order(target)?;
    (0..=k_max)
        .find(|&k| {
            let state = decay(initial, &schedule.prefix(k));
            target.sub(&state).map(|e| is_realizable(&e).member).unwrap_or(false)
        })
        .ok_or(SteerError::NoFeasibleWaitingTime { k_max })
}

/// Largest `w` in `(0, 1)` (to within [`BISECTION_TOL`]) for which the last
/// control `deconvolve(target - (1 - w) e, target, a)` has a positive
/// semidefinite Hankel embedding.
pub fn max_feasible_terminal_omega(target: &MomentVector, error: &MomentVector, a: f64) -> Result<f64> {
    let feasible = |w: f64| -> Result<bool> {
        let before = target.axpy(-(1.0 - w), error)?;
        let u = deconvolve(&before, target, a)?;
        Ok(in_vpp(&u, 0.0).min_eigenvalue >= 0.0)
    };
    if !feasible(1e-12)? {
        return Err(SteerError::InfeasibleAtZero);
    }
    let mut hi = 1.0 - BISECTION_TOL;
    if feasible(hi)? {
        return Ok(hi);
    }
    let mut lo = 0.0;
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// A complete moment-space steering plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringPlan {
    pub k0: usize,
    pub horizon: usize,
    pub cost: CostSpec,
    /// `w_k0, ..., w_{K-1}`; `w_K = 1` is implicit.
    pub omega: Vec<f64>,
    /// `X(0), ..., X(K)`.
    pub states: Vec<MomentVector>,
    /// `U(k0), ..., U(K-1)`; earlier steps are uncontrolled.
    pub controls: Vec<MomentVector>,
    /// `a(0), ..., a(K-1)`.
    pub coefficients: Vec<f64>,
    pub target: MomentVector,
    /// `e(k0)`.
    pub error: MomentVector,
    pub state_certificates: Vec<f64>,
    pub control_certificates: Vec<f64>,
    /// `sum_k E[u^2(k)]`.
    pub total_energy: f64,
    pub cost_value: f64,
    pub optimizer_iterations: usize,
    pub optimizer_converged: bool,
    /// Diagnostic bound on `w_{K-1}` from the terminal-step bisection.
    pub terminal_omega_bound: Option<f64>,
}

impl SteeringPlan {
    /// Control moments at step `k`, a point mass at zero before `k0`.
    pub fn control_at(&self, k: usize) -> MomentVector {
        if k < self.k0 {
            MomentVector::zeros(self.target.order())
        } else {
            self.controls[k - self.k0].clone()
        }
    }

    /// Anchor weight `w_k0`, which shapes the smoothness cost but not `X(k0)`.
    pub fn anchor_weight(&self) -> Option<f64> {
        self.omega.first().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanOptions {
    pub optimizer: OptimizerOptions,
}

/// Full planning pipeline starting from distribution specs.
pub fn plan(
    initial: &DistributionSpec,
    terminal: &DistributionSpec,
    schedule: &SystemSchedule,
    cost: &CostSpec,
    opts: &PlanOptions,
) -> Result<SteeringPlan> {
    let n = schedule.order();
    plan_moments(&initial.moments(n)?, &terminal.moments(n)?, schedule, cost, opts)
}

/// Planning pipeline on moment vectors.
pub fn plan_moments(
    initial: &MomentVector,
    target: &MomentVector,
    schedule: &SystemSchedule,
    cost: &CostSpec,
    opts: &PlanOptions,
) -> Result<SteeringPlan> {
    let n = schedule.order();
    for (what, m) in [("initial", initial), ("terminal", target)] {
        if m.order() != n {
            return Err(SteerError::OrderMismatch {
                expected: 2 * n,
                found: m.len(),
            });
        }
        let p = is_realizable(m);
        if !p.member {
            return Err(SteerError::NotRealizable {
                what,
                min_eigenvalue: p.min_eigenvalue,
            });
        }
    }
    let horizon = schedule.horizon();
    cost.validate(horizon)?;

    for k in 0..horizon {
        let state = decay(initial, &schedule.prefix(k));
        let error = error_vector(target, &state)?;
        if !is_realizable(&error).member {
            continue;
        }
        let ctx = PlanContext::new(k, state, target.clone(), schedule.coefficients()[k..].to_vec())?;
        match optimize_weights(cost, &ctx, &opts.optimizer) {
            Ok(sol) => return assemble(initial, schedule, cost, &ctx, sol),
            // keep waiting
            Err(SteerError::NoFeasibleStart { .. }) => continue,
            Err(e) => return Err(e),
        }
    }

    // the target may be exactly the uncontrolled terminal state
    let uncontrolled = decay(initial, schedule.coefficients());
    let scale = 1.0 + target.max_abs();
    let reached = uncontrolled
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .all(|(x, t)| (x - t).abs() <= 1e-12 * scale);
    if reached {
        return Ok(null_plan(initial, target, schedule, cost));
    }
    Err(SteerError::NoFeasibleWaitingTime { k_max: horizon - 1 })
}

fn uncontrolled_states(initial: &MomentVector, schedule: &SystemSchedule, upto: usize) -> Vec<MomentVector> {
    (0..=upto).map(|k| decay(initial, &schedule.prefix(k))).collect()
}

fn null_plan(
    initial: &MomentVector,
    target: &MomentVector,
    schedule: &SystemSchedule,
    cost: &CostSpec,
) -> SteeringPlan {
    let horizon = schedule.horizon();
    let mut states = uncontrolled_states(initial, schedule, horizon - 1);
    states.push(target.clone());
    let state_certificates = states.iter().map(|x| is_realizable(x).min_eigenvalue).collect();
    SteeringPlan {
        k0: horizon,
        horizon,
        cost: cost.clone(),
        omega: vec![],
        states,
        controls: vec![],
        coefficients: schedule.coefficients().to_vec(),
        target: target.clone(),
        error: MomentVector::zeros(target.order()),
        state_certificates,
        control_certificates: vec![],
        total_energy: 0.0,
        cost_value: 0.0,
        optimizer_iterations: 0,
        optimizer_converged: true,
        terminal_omega_bound: None,
    }
}

fn assemble(
    initial: &MomentVector,
    schedule: &SystemSchedule,
    cost: &CostSpec,
    ctx: &PlanContext,
    sol: WeightSolution,
) -> Result<SteeringPlan> {
    let k0 = ctx.k0;
    let mut states = uncontrolled_states(initial, schedule, k0);
    states.pop();
    let planned = ctx.states(&sol.omega)?;
    let controls = ctx.controls_for(&planned)?;
    states.extend(planned);

    let state_certificates = states.iter().map(|x| is_realizable(x).min_eigenvalue).collect();
    let control_certificates = controls.iter().map(|u| is_realizable(u).min_eigenvalue).collect();
    let total_energy = controls.iter().map(|u| u.moment(2)).sum();
    let last = *ctx.coefficients.last().expect("nonempty horizon");
    let terminal_omega_bound = max_feasible_terminal_omega(&ctx.target, &ctx.error, last).ok();

    Ok(SteeringPlan {
        k0,
        horizon: ctx.horizon,
        cost: cost.clone(),
        omega: sol.omega,
        states,
        controls,
        coefficients: schedule.coefficients().to_vec(),
        target: ctx.target.clone(),
        error: ctx.error.clone(),
        state_certificates,
        control_certificates,
        total_energy,
        cost_value: sol.cost,
        optimizer_iterations: sol.iterations,
        optimizer_converged: sol.converged,
        terminal_omega_bound,
    })
}
