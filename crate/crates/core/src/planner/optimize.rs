//! Projected gradient descent over the monotone weight box, with the
//! realizability of every planned control enforced by backtracking.

use serde::{Deserialize, Serialize};

use super::cost::{evaluate, gradient_unchecked, CostSpec, PlanContext};
use crate::error::{Result, SteerError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    /// Stop once the projected-gradient norm falls below this.
    pub tol: f64,
    pub max_iterations: usize,
    /// Lower bound on the normalized Hankel eigenvalue of every control.
    /// Controls on the boundary of the moment cone are nearly atomic and
    /// cannot be realized as smooth densities.
    pub control_margin: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iterations: 10_000,
            control_margin: DEFAULT_CONTROL_MARGIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSolution {
    pub omega: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub projected_gradient_norm: f64,
    /// False when the run ended on the iteration cap or stalled against the
    /// realizability boundary.
    pub converged: bool,
}

pub const DEFAULT_CONTROL_MARGIN: f64 = 1e-3;

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-14;
const MAX_STEP: f64 = 1e6;

/// Euclidean projection onto `{0 <= w_1 <= ... <= w_m <= 1}`: isotonic
/// regression by pool-adjacent-violators, then clamping.
pub fn project_monotone_box(v: &[f64]) -> Vec<f64> {
    // blocks of (mean, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(v.len());
    for &x in v {
        blocks.push((x, 1));
        while blocks.len() > 1 {
            let (m2, c2) = blocks[blocks.len() - 1];
            let (m1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let c = c1 + c2;
            *blocks.last_mut().unwrap() = ((m1 * c1 as f64 + m2 * c2 as f64) / c as f64, c);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, c)| std::iter::repeat_n(m.clamp(0.0, 1.0), c))
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn projected_gradient_norm(omega: &[f64], grad: &[f64]) -> f64 {
    let moved: Vec<f64> = omega.iter().zip(grad).map(|(w, g)| w - g).collect();
    let p = project_monotone_box(&moved);
    norm(&omega.iter().zip(&p).map(|(a, b)| a - b).collect::<Vec<_>>())
}

/// Equispaced weights `(i + 1) / (m + 1)`: the unconstrained smoothness
/// minimizer.
pub fn equispaced(m: usize) -> Vec<f64> {
    (0..m).map(|i| (i + 1) as f64 / (m + 1) as f64).collect()
}

/// Feasible starting points: the equispaced and the all-zero weights, or if
/// neither is feasible the first feasible contraction of the equispaced one.
fn starting_points(ctx: &PlanContext, margin: f64) -> Vec<Vec<f64>> {
    let m = ctx.num_weights();
    let equi = equispaced(m);
    let mut starts: Vec<Vec<f64>> = [equi.clone(), vec![0.0; m]]
        .into_iter()
        .filter(|w| ctx.feasibility_with_margin(w, margin).0)
        .collect();
    if starts.is_empty() {
        let mut t = 0.5;
        while t > 1e-9 {
            let w: Vec<f64> = equi.iter().map(|x| x * t).collect();
            if ctx.feasibility_with_margin(&w, margin).0 {
                starts.push(w);
                break;
            }
            t *= 0.5;
        }
    }
    starts
}

fn descend(spec: &CostSpec, ctx: &PlanContext, start: Vec<f64>, opts: &OptimizerOptions) -> Result<WeightSolution> {
    let mut omega = start;
    let mut f = evaluate(spec, &omega, ctx)?;
    let mut step = 1.0;
    let mut pg_norm = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        let grad = gradient_unchecked(spec, &omega, ctx)?;
        pg_norm = projected_gradient_norm(&omega, &grad);
        if pg_norm < opts.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut accepted = false;
        while step >= MIN_STEP {
            let trial: Vec<f64> = omega.iter().zip(&grad).map(|(w, g)| w - step * g).collect();
            let candidate = project_monotone_box(&trial);
            let decrease: f64 = grad
                .iter()
                .zip(candidate.iter().zip(&omega))
                .map(|(g, (c, w))| g * (c - w))
                .sum();
            if ctx.feasibility_with_margin(&candidate, opts.control_margin).0 {
                let fc = evaluate(spec, &candidate, ctx)?;
                if fc <= f + ARMIJO * decrease {
                    omega = candidate;
                    f = fc;
                    step = (step * 2.0).min(MAX_STEP);
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            // blocked by the realizability boundary
            break;
        }
    }
    Ok(WeightSolution {
        omega,
        cost: f,
        iterations,
        projected_gradient_norm: pg_norm,
        converged,
    })
}

/// Minimizes the cost over the feasible weights. Descent runs from every
/// feasible starting point and the lowest-cost result is returned.
pub fn optimize_weights(spec: &CostSpec, ctx: &PlanContext, opts: &OptimizerOptions) -> Result<WeightSolution> {
    spec.validate(ctx.horizon)?;
    let starts = starting_points(ctx, opts.control_margin);
    if starts.is_empty() {
        return Err(SteerError::NoFeasibleStart { k0: ctx.k0 });
    }
    let mut best: Option<WeightSolution> = None;
    for start in starts {
        let sol = descend(spec, ctx, start, opts)?;
        if best.as_ref().is_none_or(|b| sol.cost < b.cost) {
            best = Some(sol);
        }
    }
    Ok(best.expect("at least one start"))
}
