//! Agent ensembles steered by sampling the realized control densities.
//!
//! Every random draw comes from its own ChaCha8 stream seeded by a hash of
//! `(seed, agent, step, purpose)`, so trajectories do not depend on how the
//! agents are scheduled across threads.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SteerError};
use crate::moments::DistributionSpec;
use crate::planner::SteeringPlan;
use crate::realization::{realize, DensityEstimate, ReferenceDensity, DEFAULT_TOLERANCE};

/// Safety factor on the grid maximum of the acceptance ratio.
pub const ENVELOPE_FACTOR: f64 = 1.2;
pub const ENVELOPE_GRID: usize = 4096;
const MAX_PROPOSALS: usize = 1_000_000;

/// Purpose tags keeping initial draws and control draws on disjoint streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamTag {
    Initial = 1,
    Control = 2,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for one agent at one step.
pub fn substream(seed: u64, agent: usize, step: usize, tag: StreamTag) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for word in [agent as u64, step as u64, tag as u64] {
        h = splitmix(h ^ word);
    }
    ChaCha8Rng::seed_from_u64(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleState {
    pub positions: Vec<f64>,
    pub step: usize,
    pub seed: u64,
}

impl EnsembleState {
    pub fn new(positions: Vec<f64>, seed: u64) -> Result<Self> {
        if positions.is_empty() {
            return Err(SteerError::EmptyEnsemble);
        }
        if let Some(i) = positions.iter().position(|x| !x.is_finite()) {
            return Err(SteerError::NonFinite(i));
        }
        Ok(Self {
            positions,
            step: 0,
            seed,
        })
    }

    /// `count` agents drawn from `spec`.
    pub fn sample(spec: &DistributionSpec, order: usize, count: usize, seed: u64) -> Result<Self> {
        Self::new(sample_initial(spec, order, count, seed)?, seed)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

fn draw_from(spec: &DistributionSpec, rng: &mut ChaCha8Rng) -> f64 {
    match spec {
        DistributionSpec::Gaussian { mean, variance } => {
            let z: f64 = StandardNormal.sample(rng);
            mean + variance.sqrt() * z
        }
        DistributionSpec::Laplace { location, scale } => {
            let e: f64 = Exp1.sample(rng);
            if rng.random::<bool>() {
                location + scale * e
            } else {
                location - scale * e
            }
        }
        DistributionSpec::Mixture { components } => {
            let mut t: f64 = rng.random();
            for c in components {
                if t < c.weight {
                    return draw_from(&c.spec, rng);
                }
                t -= c.weight;
            }
            draw_from(&components.last().expect("validated").spec, rng)
        }
        DistributionSpec::Empirical { samples } => samples[rng.random_range(0..samples.len())],
        DistributionSpec::RawMoments { .. } => unreachable!("realized before sampling"),
    }
}

/// Initial positions; a raw moment vector is first realized as a density.
pub fn sample_initial(spec: &DistributionSpec, order: usize, count: usize, seed: u64) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(SteerError::EmptyEnsemble);
    }
    spec.validate()?;
    if let DistributionSpec::RawMoments { .. } = spec {
        let est = realize(&spec.moments(order)?, DEFAULT_TOLERANCE)?.estimate;
        return RejectionSampler::new(&est)?.sample(count, seed, 0, StreamTag::Initial);
    }
    Ok((0..count)
        .into_par_iter()
        .map(|i| draw_from(spec, &mut substream(seed, i, 0, StreamTag::Initial)))
        .collect())
}

/// Acceptance-rejection sampler with the reference density as proposal.
#[derive(Debug, Clone)]
pub struct RejectionSampler {
    estimate: DensityEstimate,
    envelope: f64,
}

/// Draws together with the number of proposals consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub samples: Vec<f64>,
    pub proposals: usize,
}

impl RejectionSampler {
    pub fn new(estimate: &DensityEstimate) -> Result<Self> {
        let nodes = estimate.probe_nodes(ENVELOPE_GRID);
        let mut max_ratio: f64 = 0.0;
        for u in nodes {
            let d = estimate.lambda.denominator(u);
            if !(d > 0.0) {
                return Err(SteerError::InfeasibleLambda { node: u, value: d });
            }
            max_ratio = max_ratio.max(1.0 / (d * d));
        }
        Ok(Self {
            estimate: estimate.clone(),
            envelope: ENVELOPE_FACTOR * max_ratio,
        })
    }

    pub fn envelope(&self) -> f64 {
        self.envelope
    }

    fn propose(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.estimate.reference {
            ReferenceDensity::Gaussian { mean, variance } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + variance.sqrt() * z
            }
            ReferenceDensity::Cauchy { location, scale } => {
                let t: f64 = rng.random();
                location + scale * (PI * (t - 0.5)).tan()
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<(f64, usize)> {
        for attempt in 1..=MAX_PROPOSALS {
            let z = self.propose(rng);
            let t: f64 = rng.random();
            if !self.estimate.contains(z) {
                continue;
            }
            let d = self.estimate.lambda.denominator(z);
            let ratio = 1.0 / (d * d);
            if !(d > 0.0) || ratio > self.envelope {
                return Err(SteerError::EnvelopeViolation {
                    node: z,
                    ratio,
                    envelope: self.envelope,
                });
            }
            if t * self.envelope < ratio {
                return Ok((z, attempt));
            }
        }
        Err(SteerError::MaxIterations {
            iterations: MAX_PROPOSALS,
            gradient_norm: f64::NAN,
        })
    }

    /// `count` independent draws, agent `i` using its own substream.
    pub fn sample_batch(&self, count: usize, seed: u64, step: usize, tag: StreamTag) -> Result<SampleBatch> {
        let draws: Vec<(f64, usize)> = (0..count)
            .into_par_iter()
            .map(|i| self.draw(&mut substream(seed, i, step, tag)))
            .collect::<Result<_>>()?;
        let proposals = draws.iter().map(|d| d.1).sum();
        Ok(SampleBatch {
            samples: draws.into_iter().map(|d| d.0).collect(),
            proposals,
        })
    }

    pub fn sample(&self, count: usize, seed: u64, step: usize, tag: StreamTag) -> Result<Vec<f64>> {
        Ok(self.sample_batch(count, seed, step, tag)?.samples)
    }
}

/// `count` draws from `est` at step 0.
pub fn rejection_sample(est: &DensityEstimate, count: usize, seed: u64) -> Result<Vec<f64>> {
    RejectionSampler::new(est)?.sample(count, seed, 0, StreamTag::Control)
}

/// `x_i(k+1) = a x_i(k) + u_i`.
pub fn step_ensemble(state: &EnsembleState, a: f64, controls: &[f64]) -> Result<EnsembleState> {
    if controls.len() != state.len() {
        return Err(SteerError::LengthMismatch {
            expected: state.len(),
            found: controls.len(),
        });
    }
    Ok(EnsembleState {
        positions: state.positions.iter().zip(controls).map(|(x, u)| a * x + u).collect(),
        step: state.step + 1,
        seed: state.seed,
    })
}

/// Positions at every step `0..=K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleTrajectory {
    pub seed: u64,
    pub positions: Vec<Vec<f64>>,
}

impl EnsembleTrajectory {
    pub fn terminal(&self) -> &[f64] {
        self.positions.last().expect("at least the initial state")
    }

    /// Rows `step,agent,position`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,agent,position\n");
        for (k, row) in self.positions.iter().enumerate() {
            for (i, x) in row.iter().enumerate() {
                let _ = writeln!(s, "{k},{i},{x:.16e}");
            }
        }
        s
    }
}

/// Runs the plan on an ensemble: no control before `k0`, then fresh draws
/// from `densities[k - k0]` at every controlled step.
pub fn run_discrete(
    plan: &SteeringPlan,
    densities: &[DensityEstimate],
    initial: EnsembleState,
) -> Result<EnsembleTrajectory> {
    let controlled = plan.horizon - plan.k0;
    if densities.len() != controlled {
        return Err(SteerError::DensityCount {
            expected: controlled,
            found: densities.len(),
        });
    }
    let seed = initial.seed;
    let mut positions = vec![initial.positions.clone()];
    let mut state = initial;
    for k in 0..plan.horizon {
        let controls = if k < plan.k0 {
            vec![0.0; state.len()]
        } else {
            RejectionSampler::new(&densities[k - plan.k0])?.sample(state.len(), seed, k, StreamTag::Control)?
        };
        state = step_ensemble(&state, plan.coefficients[k], &controls)?;
        positions.push(state.positions.clone());
    }
    Ok(EnsembleTrajectory { seed, positions })
}

/// Normal-reference bandwidth `0.9 min(sd, iqr / 1.34) n^(-1/5)`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((n - 1.0) * p).round() as usize];
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// The `count` highest local maxima of a Gaussian kernel density estimate,
/// sorted by location.
pub fn kde_modes(samples: &[f64], bandwidth: f64, count: usize) -> Vec<f64> {
    if samples.is_empty() || !(bandwidth > 0.0) {
        return vec![];
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * bandwidth;
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * bandwidth;
    let points = 2001;
    let h = (hi - lo) / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|i| lo + h * i as f64).collect();
    let dens: Vec<f64> = grid
        .par_iter()
        .map(|g| {
            samples
                .iter()
                .map(|x| (-0.5 * ((g - x) / bandwidth).powi(2)).exp())
                .sum()
        })
        .collect();
    let mut peaks: Vec<usize> = (1..points - 1)
        .filter(|&i| dens[i] > dens[i - 1] && dens[i] >= dens[i + 1])
        .collect();
    peaks.sort_by(|a, b| dens[*b].total_cmp(&dens[*a]));
    let mut modes: Vec<f64> = peaks.into_iter().take(count).map(|i| grid[i]).collect();
    modes.sort_by(f64::total_cmp);
    modes
}
