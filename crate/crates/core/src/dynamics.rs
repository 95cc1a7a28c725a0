//! Exact moment propagation through `x(k+1) = a(k) x(k) + u(k)` with the
//! control drawn independently of the state.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binomial::binomial;
use crate::error::{Result, SteerError};
use crate::moments::{MomentVector, MAX_HALF_ORDER};

/// Horizon, moment order and the stable coefficients `a(0..K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSchedule {
    order: usize,
    coefficients: Vec<f64>,
}

fn check_coefficient(step: usize, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(SteerError::InvalidCoefficient { step, value })
    }
}

impl SystemSchedule {
    pub fn new(order: usize, coefficients: Vec<f64>) -> Result<Self> {
        if order == 0 || coefficients.is_empty() {
            return Err(SteerError::InvalidLength(2 * order));
        }
        if order > MAX_HALF_ORDER {
            return Err(SteerError::OrderTooLarge {
                order: 2 * order,
                max: 2 * MAX_HALF_ORDER,
            });
        }
        for (k, &a) in coefficients.iter().enumerate() {
            check_coefficient(k, a)?;
        }
        Ok(Self { order, coefficients })
    }

    /// Draws `a(k)` i.i.d. uniform on `[lo, hi]` from a ChaCha8 stream seeded
    /// with `seed`.
    pub fn from_seed(order: usize, horizon: usize, seed: u64, lo: f64, hi: f64) -> Result<Self> {
        check_coefficient(0, lo)?;
        check_coefficient(0, hi)?;
        if lo > hi {
            return Err(SteerError::InvalidCoefficient { step: 0, value: lo });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coefficients = (0..horizon)
            .map(|_| if lo < hi { rng.random_range(lo..hi) } else { lo })
            .collect();
        Self::new(order, coefficients)
    }

    pub fn horizon(&self) -> usize {
        self.coefficients.len()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// `a(k)`. Past the horizon the last scheduled coefficient is held, which
    /// lets waiting-time searches look beyond `K`.
    pub fn coefficient(&self, k: usize) -> f64 {
        let last = self.coefficients.len() - 1;
        self.coefficients[k.min(last)]
    }

    /// `a(0), ..., a(k-1)`.
    pub fn prefix(&self, k: usize) -> Vec<f64> {
        (0..k).map(|i| self.coefficient(i)).collect()
    }
}

/// The lower-triangular `2n x 2n` matrix of the moment system.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    matrix: DMatrix<f64>,
}

impl TransitionMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Entry `(l, j)` with 1-based moment indices.
    pub fn entry(&self, l: usize, j: usize) -> f64 {
        self.matrix[(l - 1, j - 1)]
    }

    pub fn apply(&self, x: &MomentVector) -> Result<MomentVector> {
        if x.len() != self.matrix.ncols() {
            return Err(SteerError::OrderMismatch {
                expected: self.matrix.ncols(),
                found: x.len(),
            });
        }
        let v = &self.matrix * DVector::from_column_slice(x.as_slice());
        MomentVector::new(v.iter().copied().collect())
    }
}

/// Entry `(l, j) = C(l, j) a^j m_{l-j}(u)` for `j <= l`, zero above.
pub fn transition_matrix(a: f64, u: &MomentVector) -> Result<TransitionMatrix> {
    check_coefficient(0, a)?;
    let dim = u.len();
    let matrix = DMatrix::from_fn(dim, dim, |r, c| {
        let (l, j) = (r + 1, c + 1);
        if j > l {
            0.0
        } else {
            binomial(l, j) * a.powi(j as i32) * u.moment(l - j)
        }
    });
    Ok(TransitionMatrix { matrix })
}

/// Moments of `a x + u` for independent `x` and `u`:
/// `m_l(x') = sum_j C(l, j) a^j m_j(x) m_{l-j}(u)`.
pub fn propagate(x: &MomentVector, u: &MomentVector, a: f64) -> Result<MomentVector> {
    x.ensure_same_order(u)?;
    check_coefficient(0, a)?;
    let values = (1..=x.len())
        .map(|l| {
            (0..=l)
                .map(|j| binomial(l, j) * a.powi(j as i32) * x.moment(j) * u.moment(l - j))
                .sum()
        })
        .collect();
    MomentVector::new(values)
}

/// The control moments `U` with `propagate(x, U, a) = x_next`, solved order by
/// order. The result is not checked for realizability.
pub fn deconvolve(x: &MomentVector, x_next: &MomentVector, a: f64) -> Result<MomentVector> {
    x.ensure_same_order(x_next)?;
    check_coefficient(0, a)?;
    let len = x.len();
    // u[0] = 1 is the unit mass of the control
    let mut u = vec![0.0; len + 1];
    u[0] = 1.0;
    for l in 1..=len {
        let coupled: f64 = (1..=l)
            .map(|j| binomial(l, j) * a.powi(j as i32) * x.moment(j) * u[l - j])
            .sum();
        u[l] = x_next.moment(l) - coupled;
    }
    u.remove(0);
    MomentVector::new(u)
}

/// Uncontrolled evolution: `m_l` scaled by `(prod_k a(k))^l`.
pub fn decay(x: &MomentVector, coefficients: &[f64]) -> MomentVector {
    let c: f64 = coefficients.iter().product();
    let mut scale = 1.0;
    let values = x
        .as_slice()
        .iter()
        .map(|m| {
            scale *= c;
            m * scale
        })
        .collect();
    MomentVector::new(values).expect("decay preserves finiteness")
}
