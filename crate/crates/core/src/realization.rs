//! Realizing a moment vector as a density `r / (1 + P)^2` by minimizing the
//! squared-Hellinger dual objective over the Hankel generators of `Lambda`.
//!
//! With `G(u) = (1, u, ..., u^n)` and `Lambda[i][j] = l_{i+j}` the quadratic
//! form is `P(u) = G' Lambda G = sum_k nu_k l_k u^k`, where `nu_k` counts the
//! index pairs with `i + j = k`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SteerError};
use crate::moments::{hankel_embed, MomentVector};
use crate::quadrature::Quadrature;

pub const DEFAULT_PANELS: usize = 16;
pub const DEFAULT_NODES_PER_PANEL: usize = 64;
/// Half-width of the Gaussian-reference domain in standard deviations.
pub const GAUSSIAN_HALF_WIDTH: f64 = 12.0;
pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const MAX_NEWTON_ITERATIONS: usize = 200;
/// No node's `1 + P` may shrink below this fraction of its value in one step.
const BOUNDARY_FRACTION: f64 = 0.05;
/// Variance inflation of the default reference.
pub const REFERENCE_INFLATION: f64 = 3.0;

/// Anything with a pointwise density.
pub trait Density {
    fn pdf(&self, u: f64) -> f64;
}

impl<F: Fn(f64) -> f64> Density for F {
    fn pdf(&self, u: f64) -> f64 {
        self(u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceDensity {
    Gaussian { mean: f64, variance: f64 },
    Cauchy { location: f64, scale: f64 },
}

impl ReferenceDensity {
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        let r = ReferenceDensity::Gaussian { mean, variance };
        r.validate()?;
        Ok(r)
    }

    pub fn cauchy(location: f64, scale: f64) -> Result<Self> {
        let r = ReferenceDensity::Cauchy { location, scale };
        r.validate()?;
        Ok(r)
    }

    /// Mean-matched Gaussian with inflated variance.
    pub fn default_for(u: &MomentVector) -> Self {
        let mean = u.moment(1);
        let var = (u.moment(2) - mean * mean).max(1e-6);
        ReferenceDensity::Gaussian {
            mean,
            variance: var * REFERENCE_INFLATION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (loc, spread) = match *self {
            ReferenceDensity::Gaussian { mean, variance } => (mean, variance),
            ReferenceDensity::Cauchy { location, scale } => (location, scale),
        };
        if !loc.is_finite() || !spread.is_finite() || spread <= 0.0 {
            return Err(SteerError::InvalidReference(format!("{self:?}")));
        }
        Ok(())
    }

    /// The integration domain; the whole line for a Cauchy reference.
    pub fn domain(&self) -> (f64, f64) {
        self.domain_with(GAUSSIAN_HALF_WIDTH)
    }

    /// Domain of `half_width` standard deviations either side of the mean.
    pub fn domain_with(&self, half_width: f64) -> (f64, f64) {
        match *self {
            ReferenceDensity::Gaussian { mean, variance } => {
                let w = half_width * variance.sqrt();
                (mean - w, mean + w)
            }
            ReferenceDensity::Cauchy { .. } => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    fn center(&self) -> f64 {
        match *self {
            ReferenceDensity::Gaussian { mean, .. } => mean,
            ReferenceDensity::Cauchy { location, .. } => location,
        }
    }
}

impl Density for ReferenceDensity {
    fn pdf(&self, u: f64) -> f64 {
        match *self {
            ReferenceDensity::Gaussian { mean, variance } => {
                let d = u - mean;
                (-0.5 * d * d / variance).exp() / (2.0 * PI * variance).sqrt()
            }
            ReferenceDensity::Cauchy { location, scale } => {
                let d = (u - location) / scale;
                1.0 / (PI * scale * (1.0 + d * d))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureRule {
    CompositeGaussLegendre,
    TangentGaussLegendre,
}

/// Quadrature nodes with the reference density evaluated on them.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub rule: QuadratureRule,
    pub domain: (f64, f64),
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub reference_values: Vec<f64>,
    pub reference: ReferenceDensity,
    /// Gaussian truncation in reference standard deviations.
    pub half_width: f64,
}

impl QuadratureGrid {
    pub fn new(reference: ReferenceDensity, panels: usize, nodes_per_panel: usize) -> Result<Self> {
        Self::truncated(reference, GAUSSIAN_HALF_WIDTH, panels, nodes_per_panel)
    }

    /// As [`Self::new`] with a Gaussian domain of `half_width` standard
    /// deviations.
    pub fn truncated(
        reference: ReferenceDensity,
        half_width: f64,
        panels: usize,
        nodes_per_panel: usize,
    ) -> Result<Self> {
        reference.validate()?;
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(SteerError::InvalidReference(format!(
                "truncation half-width {half_width}"
            )));
        }
        let domain = reference.domain_with(half_width);
        let (rule, q) = match reference {
            ReferenceDensity::Gaussian { .. } => {
                let (lo, hi) = domain;
                (
                    QuadratureRule::CompositeGaussLegendre,
                    Quadrature::composite(lo, hi, panels, nodes_per_panel),
                )
            }
            ReferenceDensity::Cauchy { location, scale } => (
                QuadratureRule::TangentGaussLegendre,
                Quadrature::tangent(location, scale, panels, nodes_per_panel),
            ),
        };
        let reference_values = q.nodes.iter().map(|u| reference.pdf(*u)).collect();
        Ok(Self {
            rule,
            domain,
            nodes: q.nodes,
            weights: q.weights,
            reference_values,
            reference,
            half_width,
        })
    }

    pub fn standard(reference: ReferenceDensity) -> Result<Self> {
        Self::new(reference, DEFAULT_PANELS, DEFAULT_NODES_PER_PANEL)
    }

    /// Same rule with twice as many panels.
    pub fn refined(&self) -> Result<Self> {
        let panels = 2 * self.len() / DEFAULT_NODES_PER_PANEL;
        Self::truncated(self.reference, self.half_width, panels, DEFAULT_NODES_PER_PANEL)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(u, w)| w * f(*u)).sum()
    }
}

/// `nu_k` for `k = 0..=2n`.
pub fn multiplicities(order: usize) -> Vec<f64> {
    (0..=2 * order).map(|k| (k.min(2 * order - k) + 1) as f64).collect()
}

/// Hankel generators `l_0, ..., l_2n` of `Lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaParam {
    generator: Vec<f64>,
}

impl LambdaParam {
    pub fn new(generator: Vec<f64>) -> Result<Self> {
        if generator.is_empty() || generator.len().is_multiple_of(2) {
            return Err(SteerError::InvalidLength(generator.len()));
        }
        if let Some(i) = generator.iter().position(|v| !v.is_finite()) {
            return Err(SteerError::NonFinite(i));
        }
        Ok(Self { generator })
    }

    pub fn zeros(order: usize) -> Self {
        Self {
            generator: vec![0.0; 2 * order + 1],
        }
    }

    pub fn order(&self) -> usize {
        self.generator.len() / 2
    }

    pub fn generator(&self) -> &[f64] {
        &self.generator
    }

    /// Coefficients `nu_k l_k` of `P(u)`.
    pub fn polynomial(&self) -> Vec<f64> {
        multiplicities(self.order())
            .iter()
            .zip(&self.generator)
            .map(|(n, l)| n * l)
            .collect()
    }

    fn from_polynomial(c: &[f64]) -> Self {
        let nu = multiplicities(c.len() / 2);
        Self {
            generator: c.iter().zip(&nu).map(|(c, n)| c / n).collect(),
        }
    }

    /// The `(n+1) x (n+1)` Hankel matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.order() + 1;
        DMatrix::from_fn(d, d, |i, j| self.generator[i + j])
    }

    pub fn max_abs(&self) -> f64 {
        self.generator.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `1 + P(u)`.
    pub fn denominator(&self, u: f64) -> f64 {
        1.0 + horner(&self.polynomial(), u)
    }
}

fn horner(c: &[f64], u: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * u + v)
}

/// `1 + P` at every node, or the first node where it is not positive.
fn denominators(poly: &[f64], grid: &QuadratureGrid) -> Result<Vec<f64>> {
    grid.nodes
        .iter()
        .map(|u| {
            let d = 1.0 + horner(poly, *u);
            if d > 0.0 && d.is_finite() {
                Ok(d)
            } else {
                Err(SteerError::InfeasibleLambda { node: *u, value: d })
            }
        })
        .collect()
}

/// Hankel moment matrix of a control moment vector.
pub fn sigma_matrix(u: &MomentVector) -> DMatrix<f64> {
    hankel_embed(u).matrix().clone()
}

fn check_order(lambda: &LambdaParam, sigma: &MomentVector) -> Result<()> {
    if lambda.order() != sigma.order() {
        return Err(SteerError::OrderMismatch {
            expected: 2 * sigma.order(),
            found: 2 * lambda.order(),
        });
    }
    Ok(())
}

/// `J(Lambda) = tr(Lambda Sigma) + int r / (1 + P)`.
pub fn objective(lambda: &LambdaParam, sigma: &MomentVector, grid: &QuadratureGrid) -> Result<f64> {
    check_order(lambda, sigma)?;
    let poly = lambda.polynomial();
    let den = denominators(&poly, grid)?;
    Ok(trace_term(&poly, sigma) + integral(grid, &den, 1))
}

fn trace_term(poly: &[f64], sigma: &MomentVector) -> f64 {
    poly.iter().enumerate().map(|(k, c)| c * sigma.moment(k)).sum()
}

fn integral(grid: &QuadratureGrid, den: &[f64], power: i32) -> f64 {
    grid.weights
        .iter()
        .zip(&grid.reference_values)
        .zip(den)
        .map(|((w, r), d)| w * r / d.powi(power))
        .sum()
}

/// `int u^k r / (1 + P)^power` for `k = 0..=max_k`.
fn weighted_power_sums(grid: &QuadratureGrid, den: &[f64], power: i32, max_k: usize) -> Vec<f64> {
    let mut out = vec![0.0; max_k + 1];
    for ((u, w), (r, d)) in grid
        .nodes
        .iter()
        .zip(&grid.weights)
        .zip(grid.reference_values.iter().zip(den))
    {
        let mut t = w * r / d.powi(power);
        for o in out.iter_mut() {
            *o += t;
            t *= u;
        }
    }
    out
}

/// Gradient of `J` in generator coordinates:
/// `g_k = nu_k (m_k - int u^k r / (1 + P)^2)`.
pub fn gradient(lambda: &LambdaParam, sigma: &MomentVector, grid: &QuadratureGrid) -> Result<Vec<f64>> {
    check_order(lambda, sigma)?;
    let den = denominators(&lambda.polynomial(), grid)?;
    let nu = multiplicities(sigma.order());
    let s = weighted_power_sums(grid, &den, 2, 2 * sigma.order());
    Ok((0..s.len()).map(|k| nu[k] * (sigma.moment(k) - s[k])).collect())
}

/// Diagnostics of a realization solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub objective: f64,
    /// `min 1 + P` over the grid; the condition the solver enforces.
    pub min_denominator: f64,
    /// Smallest eigenvalue of `Lambda`, recorded for comparison with the
    /// stricter positivity condition `G' Lambda G > 0`.
    pub lambda_min_eigenvalue: f64,
}

/// Damped Newton from `Lambda = 0` with backtracking that keeps `1 + P > 0`
/// at every node. When the direct solve stalls the targets are approached
/// along the segment from the moments of the reference.
pub fn solve_lambda(sigma: &MomentVector, grid: &QuadratureGrid, tol: f64) -> Result<(LambdaParam, SolveReport)> {
    match solve_lambda_from(sigma, grid, tol, &LambdaParam::zeros(sigma.order())) {
        Err(SteerError::MaxIterations { .. }) => solve_by_continuation(sigma, grid, tol),
        other => other,
    }
}

/// As [`solve_lambda`] without the continuation fallback, warm-started from
/// a feasible `start`.
pub fn solve_lambda_from(
    sigma: &MomentVector,
    grid: &QuadratureGrid,
    tol: f64,
    start: &LambdaParam,
) -> Result<(LambdaParam, SolveReport)> {
    check_order(start, sigma)?;
    let m: Vec<f64> = (0..=2 * sigma.order()).map(|k| sigma.moment(k)).collect();
    let (c, report) = newton(&m, grid, tol, start.polynomial(), MAX_NEWTON_ITERATIONS)?;
    Ok((LambdaParam::from_polynomial(&c), report))
}

const CONTINUATION_TOL: f64 = 1e-6;
const CONTINUATION_ITERATIONS: usize = 50;
const MIN_CONTINUATION_STEP: f64 = 1e-6;

fn solve_by_continuation(sigma: &MomentVector, grid: &QuadratureGrid, tol: f64) -> Result<(LambdaParam, SolveReport)> {
    let dim = 2 * sigma.order() + 1;
    let base = weighted_power_sums(grid, &vec![1.0; grid.len()], 0, dim - 1);
    let goal: Vec<f64> = (0..dim).map(|k| sigma.moment(k)).collect();
    let at = |t: f64| -> Vec<f64> { base.iter().zip(&goal).map(|(b, g)| (1.0 - t) * b + t * g).collect() };

    let mut c = vec![0.0; dim];
    let mut t: f64 = 0.0;
    let mut dt: f64 = 0.125;
    let mut total = 0;
    while t < 1.0 {
        let next = (t + dt).min(1.0);
        let last = next >= 1.0;
        let (goal_tol, cap) = if last {
            (tol, MAX_NEWTON_ITERATIONS)
        } else {
            (CONTINUATION_TOL, CONTINUATION_ITERATIONS)
        };
        match newton(&at(next), grid, goal_tol, c.clone(), cap) {
            Ok((cn, report)) => {
                total += report.iterations;
                if last {
                    let report = SolveReport {
                        iterations: total,
                        ..report
                    };
                    return Ok((LambdaParam::from_polynomial(&cn), report));
                }
                c = cn;
                t = next;
                if report.iterations < 10 {
                    dt *= 2.0;
                }
            }
            Err(SteerError::MaxIterations {
                iterations,
                gradient_norm,
            }) => {
                total += iterations;
                dt *= 0.5;
                if dt < MIN_CONTINUATION_STEP {
                    return Err(SteerError::MaxIterations {
                        iterations: total,
                        gradient_norm,
                    });
                }
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!("the loop returns on reaching t = 1")
}

/// Newton iteration in the polynomial coefficients `c_k = nu_k l_k` for the
/// raw targets `m_0, ..., m_2n`.
fn newton(
    m: &[f64],
    grid: &QuadratureGrid,
    tol: f64,
    mut c: Vec<f64>,
    max_iterations: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    let dim = m.len();
    let n = dim / 2;
    let nu = multiplicities(n);
    let trace = |c: &[f64]| c.iter().zip(m).map(|(c, m)| c * m).sum::<f64>();
    let grad_norm = |den: &[f64]| {
        let s = weighted_power_sums(grid, den, 2, 2 * n);
        (0..dim).map(|k| (nu[k] * (m[k] - s[k])).powi(2)).sum::<f64>().sqrt()
    };

    let mut den = denominators(&c, grid)?;
    let mut f = trace(&c) + integral(grid, &den, 1);
    let mut gnorm = f64::INFINITY;

    for it in 0..=max_iterations {
        let s2 = weighted_power_sums(grid, &den, 2, 2 * n);
        let gc: Vec<f64> = (0..dim).map(|k| m[k] - s2[k]).collect();
        gnorm = gc.iter().zip(&nu).map(|(g, v)| (g * v).powi(2)).sum::<f64>().sqrt();
        if gnorm <= tol {
            let lambda = LambdaParam::from_polynomial(&c);
            let report = SolveReport {
                iterations: it,
                gradient_norm: gnorm,
                objective: f,
                min_denominator: den.iter().cloned().fold(f64::INFINITY, f64::min),
                lambda_min_eigenvalue: lambda.matrix().symmetric_eigenvalues().min(),
            };
            return Ok((c, report));
        }
        if it == max_iterations {
            break;
        }

        let s3 = weighted_power_sums(grid, &den, 3, 4 * n);
        let h = DMatrix::from_fn(dim, dim, |i, j| 2.0 * s3[i + j]);
        let step = newton_direction(&h, &gc);
        let slope: f64 = step.iter().zip(&gc).map(|(s, g)| s * g).sum();

        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-16 {
            let trial: Vec<f64> = c.iter().zip(&step).map(|(c, s)| c + t * s).collect();
            let kept = |d: &Vec<f64>| d.iter().zip(&den).all(|(new, old)| *new >= BOUNDARY_FRACTION * old);
            if let Some(d) = denominators(&trial, grid).ok().filter(kept) {
                let ft = trace(&trial) + integral(grid, &d, 1);
                // near the optimum the decrease drops below the rounding of J,
                // so a smaller gradient is accepted as progress too
                let flat = ft <= f + 1e-12 * f.abs().max(1.0) && grad_norm(&d) < gnorm;
                if ft <= f + 1e-4 * t * slope || flat {
                    c = trial;
                    den = d;
                    f = ft;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Err(SteerError::MaxIterations {
        iterations: max_iterations,
        gradient_norm: gnorm,
    })
}

/// Solves `H d = -g` after symmetric diagonal equilibration.
fn newton_direction(h: &DMatrix<f64>, g: &[f64]) -> Vec<f64> {
    let dim = g.len();
    let scale: Vec<f64> = (0..dim).map(|i| 1.0 / h[(i, i)].abs().sqrt().max(1e-300)).collect();
    let hs = DMatrix::from_fn(dim, dim, |i, j| h[(i, j)] * scale[i] * scale[j]);
    let gs = DVector::from_iterator(dim, g.iter().zip(&scale).map(|(g, s)| -g * s));
    let y = match hs.clone().cholesky() {
        Some(ch) => ch.solve(&gs),
        None => {
            // fall back to a regularized eigen-solve
            let eig = hs.symmetric_eigen();
            let floor = 1e-14 * eig.eigenvalues.amax();
            let mut y = DVector::zeros(dim);
            for (k, lam) in eig.eigenvalues.iter().enumerate() {
                let v = eig.eigenvectors.column(k);
                y += v * (v.dot(&gs) / lam.max(floor));
            }
            y
        }
    };
    y.iter().zip(&scale).map(|(y, s)| y * s).collect()
}

/// A realized density `r / (1 + P)^2`, zero outside the reference domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub lambda: LambdaParam,
    pub reference: ReferenceDensity,
    /// Half-width of the domain around the reference center; infinite for a
    /// Cauchy reference.
    pub truncation: f64,
}

/// Wraps a feasible `lambda` as a density on the default domain.
pub fn density(lambda: &LambdaParam, reference: ReferenceDensity) -> DensityEstimate {
    let (lo, hi) = reference.domain();
    DensityEstimate {
        lambda: lambda.clone(),
        reference,
        truncation: 0.5 * (hi - lo),
    }
}

/// Wraps a feasible `lambda` as a density on the domain of `grid`.
pub fn density_on(lambda: &LambdaParam, grid: &QuadratureGrid) -> DensityEstimate {
    let (lo, hi) = grid.domain;
    DensityEstimate {
        lambda: lambda.clone(),
        reference: grid.reference,
        truncation: 0.5 * (hi - lo),
    }
}

impl DensityEstimate {
    pub fn domain(&self) -> (f64, f64) {
        let c = self.reference.center();
        (c - self.truncation, c + self.truncation)
    }

    pub fn contains(&self, u: f64) -> bool {
        let (lo, hi) = self.domain();
        u >= lo && u <= hi
    }

    /// `count` probe points: equispaced on a bounded domain, equal-angle
    /// under the tangent map otherwise.
    pub fn probe_nodes(&self, count: usize) -> Vec<f64> {
        match self.reference {
            ReferenceDensity::Gaussian { .. } => {
                let (lo, hi) = self.domain();
                let h = (hi - lo) / (count - 1) as f64;
                (0..count).map(|i| lo + h * i as f64).collect()
            }
            ReferenceDensity::Cauchy { location, scale } => (1..=count)
                .map(|i| location + scale * (PI * (i as f64 / (count + 1) as f64 - 0.5)).tan())
                .collect(),
        }
    }

    /// Smallest `1 + P` over the probe points, with its location.
    pub fn min_denominator(&self, count: usize) -> (f64, f64) {
        self.probe_nodes(count)
            .into_iter()
            .map(|u| (u, self.lambda.denominator(u)))
            .fold(
                (f64::NAN, f64::INFINITY),
                |a, b| if b.1 < a.1 || b.1.is_nan() { b } else { a },
            )
    }
}

impl Density for DensityEstimate {
    fn pdf(&self, u: f64) -> f64 {
        if !self.contains(u) {
            return 0.0;
        }
        let d = self.lambda.denominator(u);
        self.reference.pdf(u) / (d * d)
    }
}

/// `int (sqrt p - sqrt q)^2` on the grid.
pub fn hellinger2(p: &impl Density, q: &impl Density, grid: &QuadratureGrid) -> Result<f64> {
    let mut total = 0.0;
    for (u, w) in grid.nodes.iter().zip(&grid.weights) {
        let (a, b) = (p.pdf(*u), q.pdf(*u));
        for v in [a, b] {
            if !(v >= 0.0) {
                return Err(SteerError::NegativeDensity { node: *u, value: v });
            }
        }
        total += w * (a.sqrt() - b.sqrt()).powi(2);
    }
    Ok(total)
}

/// Quadrature moments of the estimate minus the targets, orders `0..=2n`.
pub fn verify_moments(est: &DensityEstimate, sigma: &MomentVector, grid: &QuadratureGrid) -> Vec<f64> {
    let dim = 2 * sigma.order() + 1;
    let mut out: Vec<f64> = (0..dim).map(|k| -sigma.moment(k)).collect();
    for (u, w) in grid.nodes.iter().zip(&grid.weights) {
        let mut t = w * est.pdf(*u);
        for o in out.iter_mut() {
            *o += t;
            t *= u;
        }
    }
    out
}

/// A converged realization of one moment vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub estimate: DensityEstimate,
    pub report: SolveReport,
    pub residuals: Vec<f64>,
    /// Smallest `1 + P` between the quadrature nodes, on the probe grid.
    pub probe_min_denominator: f64,
}

/// Probe points used to check `1 + P` between quadrature nodes.
pub const PROBE_POINTS: usize = 4096;

impl Realization {
    /// Mass collapsed onto the domain edge, or a denominator that dips
    /// below zero between quadrature nodes.
    pub fn is_degenerate(&self) -> bool {
        self.report.min_denominator < DEGENERATE_DENOMINATOR || !(self.probe_min_denominator > DEGENERATE_DENOMINATOR)
    }
}

/// Panel counts tried for each reference by [`realize`].
pub const FALLBACK_PANELS: [usize; 2] = [DEFAULT_PANELS, 4 * DEFAULT_PANELS];
/// Variance inflations tried in turn by [`realize`].
pub const FALLBACK_INFLATIONS: [f64; 4] = [5.0, 8.0, 12.0, 20.0];
/// Below this `1 + P` the estimate is treated as having collapsed onto the
/// edge of the domain.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-8;

/// Reference family used by [`realize_with_options`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceFamily {
    #[default]
    Gaussian,
    Cauchy,
}

/// How control moments are turned into densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealizationOptions {
    pub family: ReferenceFamily,
    /// Reference variance (Gaussian) or squared scale (Cauchy) as a multiple
    /// of the target variance.
    pub inflation: f64,
    /// Gaussian truncation in reference standard deviations.
    pub half_width: f64,
    /// Gradient-norm tolerance of the solve.
    pub tol: f64,
}

impl Default for RealizationOptions {
    fn default() -> Self {
        Self {
            family: ReferenceFamily::Gaussian,
            inflation: REFERENCE_INFLATION,
            half_width: GAUSSIAN_HALF_WIDTH,
            tol: DEFAULT_TOLERANCE,
        }
    }
}

impl RealizationOptions {
    /// Mean-matched reference for `u`, its spread inflated by `factor`.
    pub fn reference_for(&self, u: &MomentVector, factor: f64) -> Result<ReferenceDensity> {
        let mean = u.moment(1);
        let var = (u.moment(2) - mean * mean).max(1e-6);
        match self.family {
            ReferenceFamily::Gaussian => ReferenceDensity::gaussian(mean, var * factor),
            ReferenceFamily::Cauchy => ReferenceDensity::cauchy(mean, (var * factor).sqrt()),
        }
    }
}

/// Realization with the default reference. If the solution degenerates
/// (mass escapes to the domain edge, or `1 + P` dips below zero between
/// quadrature nodes) a finer grid and then wider references are tried.
pub fn realize(u: &MomentVector, tol: f64) -> Result<Realization> {
    realize_with_options(
        u,
        &RealizationOptions {
            tol,
            ..RealizationOptions::default()
        },
    )
}

/// As [`realize`] with configurable reference and truncation. Wider fallback
/// references are only tried for a Gaussian family.
pub fn realize_with_options(u: &MomentVector, opts: &RealizationOptions) -> Result<Realization> {
    let mut factors = vec![opts.inflation];
    if opts.family == ReferenceFamily::Gaussian {
        factors.extend(FALLBACK_INFLATIONS.iter().filter(|f| **f > opts.inflation));
    }
    let mut outcome = None;
    for factor in factors {
        let reference = opts.reference_for(u, factor)?;
        for panels in FALLBACK_PANELS {
            let attempt = QuadratureGrid::truncated(reference, opts.half_width, panels, DEFAULT_NODES_PER_PANEL)
                .and_then(|grid| realize_on(u, &grid, opts.tol));
            match attempt {
                Ok(r) if !r.is_degenerate() => return Ok(r),
                other => {
                    if !matches!(outcome, Some(Ok(_))) {
                        outcome = Some(other);
                    }
                }
            }
        }
    }
    outcome.expect("at least one attempt")
}

pub fn realize_with(u: &MomentVector, reference: ReferenceDensity, tol: f64) -> Result<Realization> {
    realize_on(u, &QuadratureGrid::standard(reference)?, tol)
}

pub fn realize_on(u: &MomentVector, grid: &QuadratureGrid, tol: f64) -> Result<Realization> {
    let (lambda, report) = solve_lambda(u, grid, tol)?;
    let estimate = density_on(&lambda, grid);
    let residuals = verify_moments(&estimate, u, grid);
    let probe_min_denominator = estimate.min_denominator(PROBE_POINTS).1;
    Ok(Realization {
        estimate,
        report,
        residuals,
        probe_min_denominator,
    })
}

/// Two-column CSV of the density at the quadrature nodes.
pub fn density_grid_csv(est: &DensityEstimate, grid: &QuadratureGrid) -> String {
    let mut s = String::from("u,density\n");
    for u in &grid.nodes {
        let _ = writeln!(s, "{:.16e},{:.16e}", u, est.pdf(*u));
    }
    s
}
