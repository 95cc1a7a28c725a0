//! Truncated power-moment vectors, their Hankel embeddings and the
//! realizability tests built on them.
//!
//! A [`MomentVector`] of order `n` stores the raw moments `m_1, ..., m_2n` of a
//! scalar random variable. The zeroth moment is never stored; it is fixed to 1
//! whenever the vector is embedded in a Hankel matrix, so every vector
//! (including differences of moment vectors) is read as the moments of a
//! unit-mass measure.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::binomial::binomial;
use crate::error::{Result, SteerError};

/// Largest supported half-order `n` (so vectors hold at most 12 moments).
pub const MAX_HALF_ORDER: usize = 6;

/// Raw power moments `m_1, ..., m_2n` of a scalar random variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MomentVector {
    values: Vec<f64>,
}

impl MomentVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || !values.len().is_multiple_of(2) {
            return Err(SteerError::InvalidLength(values.len()));
        }
        if values.len() > 2 * MAX_HALF_ORDER {
            return Err(SteerError::OrderTooLarge {
                order: values.len(),
                max: 2 * MAX_HALF_ORDER,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SteerError::NonFinite(i + 1));
        }
        Ok(Self { values })
    }

    /// Moments of a point mass at zero, i.e. the "no control" input.
    pub fn zeros(order: usize) -> Self {
        Self {
            values: vec![0.0; 2 * order],
        }
    }

    /// Half-order `n`; the vector holds `2n` moments.
    pub fn order(&self) -> usize {
        self.values.len() / 2
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// `m_l` with the convention `m_0 = 1`.
    pub fn moment(&self, l: usize) -> f64 {
        if l == 0 {
            1.0
        } else {
            self.values[l - 1]
        }
    }

    /// `(1, m_1, ..., m_2n)`.
    pub fn with_unit_mass(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len() + 1);
        out.push(1.0);
        out.extend_from_slice(&self.values);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub(crate) fn ensure_same_order(&self, other: &MomentVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(SteerError::OrderMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        Ok(())
    }

    /// Entrywise `self - other`.
    pub fn sub(&self, other: &MomentVector) -> Result<MomentVector> {
        self.ensure_same_order(other)?;
        Ok(MomentVector {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    /// `self + weight * direction`, the interpolation used along `e(k0)`.
    pub fn axpy(&self, weight: f64, direction: &MomentVector) -> Result<MomentVector> {
        self.ensure_same_order(direction)?;
        MomentVector::new(
            self.values
                .iter()
                .zip(&direction.values)
                .map(|(x, e)| x + weight * e)
                .collect(),
        )
    }

    /// Linear combination `alpha * self + beta * other` on the stored entries.
    pub fn combine(&self, alpha: f64, other: &MomentVector, beta: f64) -> Result<MomentVector> {
        self.ensure_same_order(other)?;
        MomentVector::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        )
    }
}

impl TryFrom<Vec<f64>> for MomentVector {
    type Error = SteerError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        MomentVector::new(values)
    }
}

impl From<MomentVector> for Vec<f64> {
    fn from(m: MomentVector) -> Self {
        m.values
    }
}

/// `(n+1) x (n+1)` Hankel matrix `H[i][j] = m_{i+j}` with `m_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelEmbedding {
    matrix: DMatrix<f64>,
}

impl HankelEmbedding {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix.clone())
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |acc, &v| acc.min(v))
    }

    /// Smallest eigenvalue after scaling to unit diagonal, a scale-free
    /// measure of distance from the boundary of the moment cone.
    pub fn normalized_min_eigenvalue(&self) -> f64 {
        let d: Vec<f64> = (0..self.dim())
            .map(|i| self.matrix[(i, i)].abs().sqrt().recip())
            .collect();
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |i, j| self.matrix[(i, j)] * d[i] * d[j]);
        SymmetricEigen::new(scaled)
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |acc, &v| acc.min(v))
    }

    pub fn determinant(&self) -> f64 {
        self.matrix.determinant()
    }
}

pub fn hankel_embed(m: &MomentVector) -> HankelEmbedding {
    let dim = m.order() + 1;
    let matrix = DMatrix::from_fn(dim, dim, |i, j| m.moment(i + j));
    HankelEmbedding { matrix }
}

/// Scale-aware default for [`in_vpp`]: `1e-10 * (1 + max |m_l|)`.
pub fn default_tolerance(m: &MomentVector) -> f64 {
    1e-10 * (1.0 + m.max_abs())
}

/// Result of a positivity test on the Hankel embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Positivity {
    pub member: bool,
    pub min_eigenvalue: f64,
}

/// Membership in the open cone of vectors with positive definite Hankel
/// embedding: the smallest eigenvalue must exceed `tol`.
pub fn in_vpp(m: &MomentVector, tol: f64) -> Positivity {
    let min_eigenvalue = hankel_embed(m).min_eigenvalue();
    Positivity {
        member: min_eigenvalue > tol,
        min_eigenvalue,
    }
}

/// [`in_vpp`] with [`default_tolerance`].
pub fn is_realizable(m: &MomentVector) -> Positivity {
    in_vpp(m, default_tolerance(m))
}

/// Lyapunov's inequality `m_s^(1/s) <= m_t^(1/t)` over all even orders
/// `s < t <= 2n`. Odd orders are skipped since only raw moments are stored.
pub fn lyapunov_consistent(m: &MomentVector) -> Result<bool> {
    let even: Vec<(usize, f64)> = (2..=m.len()).step_by(2).map(|l| (l, m.moment(l))).collect();
    for &(order, value) in &even {
        if value < 0.0 {
            return Err(SteerError::NegativeEvenMoment { order, value });
        }
    }
    let norms: Vec<f64> = even.iter().map(|&(l, v)| v.powf(1.0 / l as f64)).collect();
    Ok(norms.windows(2).all(|w| w[0] <= w[1] * (1.0 + 1e-12)))
}

/// Supported families of scalar distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    Gaussian { mean: f64, variance: f64 },
    Laplace { location: f64, scale: f64 },
    Mixture { components: Vec<MixtureComponent> },
    Empirical { samples: Vec<f64> },
    RawMoments { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub spec: DistributionSpec,
}

impl DistributionSpec {
    pub fn gaussian(mean: f64, variance: f64) -> Self {
        DistributionSpec::Gaussian { mean, variance }
    }

    pub fn laplace(location: f64, scale: f64) -> Self {
        DistributionSpec::Laplace { location, scale }
    }

    pub fn mixture(parts: Vec<(f64, DistributionSpec)>) -> Self {
        DistributionSpec::Mixture {
            components: parts
                .into_iter()
                .map(|(weight, spec)| MixtureComponent { weight, spec })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DistributionSpec::Gaussian { mean, variance } => {
                if !mean.is_finite() || !(variance.is_finite() && *variance > 0.0) {
                    return Err(SteerError::InvalidDistribution(format!(
                        "gaussian needs finite mean and variance > 0, got ({mean}, {variance})"
                    )));
                }
            }
            DistributionSpec::Laplace { location, scale } => {
                if !location.is_finite() || !(scale.is_finite() && *scale > 0.0) {
                    return Err(SteerError::InvalidDistribution(format!(
                        "laplace needs finite location and scale > 0, got ({location}, {scale})"
                    )));
                }
            }
            DistributionSpec::Mixture { components } => {
                if components.is_empty() {
                    return Err(SteerError::InvalidDistribution("mixture has no components".into()));
                }
                if components.iter().any(|c| !(c.weight > 0.0)) {
                    return Err(SteerError::InvalidDistribution(
                        "mixture weights must be positive".into(),
                    ));
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(SteerError::InvalidDistribution(format!(
                        "mixture weights sum to {total}, expected 1"
                    )));
                }
                for c in components {
                    c.spec.validate()?;
                }
            }
            DistributionSpec::Empirical { samples } => {
                if samples.is_empty() {
                    return Err(SteerError::EmptySamples);
                }
                if samples.iter().any(|s| !s.is_finite()) {
                    return Err(SteerError::InvalidDistribution(
                        "empirical samples must be finite".into(),
                    ));
                }
            }
            DistributionSpec::RawMoments { values } => {
                MomentVector::new(values.clone())?;
            }
        }
        Ok(())
    }

    /// Moments of any supported spec: closed form, empirical or given directly.
    pub fn moments(&self, order: usize) -> Result<MomentVector> {
        match self {
            DistributionSpec::Empirical { samples } => empirical_moments(samples, order),
            DistributionSpec::RawMoments { values } => {
                let m = MomentVector::new(values.clone())?;
                if m.order() != order {
                    return Err(SteerError::OrderMismatch {
                        expected: 2 * order,
                        found: m.len(),
                    });
                }
                Ok(m)
            }
            _ => closed_form_moments(self, order),
        }
    }
}

/// Central moments `E[(x - mu)^k]`, `k = 0..=len`, of the gaussian and laplace
/// families; odd orders vanish.
fn central_moments(spec: &DistributionSpec, len: usize) -> Vec<f64> {
    let mut c = vec![0.0; len + 1];
    c[0] = 1.0;
    match *spec {
        DistributionSpec::Gaussian { variance, .. } => {
            // (k-1)!! * variance^(k/2)
            for k in (2..=len).step_by(2) {
                c[k] = c[k - 2] * (k - 1) as f64 * variance;
            }
        }
        DistributionSpec::Laplace { scale, .. } => {
            // k! * scale^k
            for k in (2..=len).step_by(2) {
                c[k] = c[k - 2] * (k * (k - 1)) as f64 * scale * scale;
            }
        }
        _ => unreachable!("central moments only for location-scale families"),
    }
    c
}

/// Raw moments of gaussian, laplace and mixtures of those families.
pub fn closed_form_moments(spec: &DistributionSpec, order: usize) -> Result<MomentVector> {
    spec.validate()?;
    let len = 2 * order;
    let values = match spec {
        DistributionSpec::Gaussian { mean: mu, .. } | DistributionSpec::Laplace { location: mu, .. } => {
            let c = central_moments(spec, len);
            (1..=len)
                .map(|l| (0..=l).map(|j| binomial(l, j) * mu.powi((l - j) as i32) * c[j]).sum())
                .collect()
        }
        DistributionSpec::Mixture { components } => {
            let mut acc = vec![0.0; len];
            for comp in components {
                let m = closed_form_moments(&comp.spec, order)?;
                for (a, v) in acc.iter_mut().zip(m.as_slice()) {
                    *a += comp.weight * v;
                }
            }
            acc
        }
        DistributionSpec::Empirical { .. } => return Err(SteerError::UnsupportedFamily("empirical")),
        DistributionSpec::RawMoments { .. } => return Err(SteerError::UnsupportedFamily("raw_moments")),
    };
    MomentVector::new(values)
}

/// Power sums `m_l = (1/N) sum x_i^l` of an occupation measure.
pub fn empirical_moments(samples: &[f64], order: usize) -> Result<MomentVector> {
    if samples.is_empty() {
        return Err(SteerError::EmptySamples);
    }
    let len = 2 * order;
    let mut sums = vec![0.0; len];
    for &x in samples {
        let mut p = 1.0;
        for s in sums.iter_mut() {
            p *= x;
            *s += p;
        }
    }
    let n = samples.len() as f64;
    MomentVector::new(sums.into_iter().map(|s| s / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mv(v: &[f64]) -> MomentVector {
        MomentVector::new(v.to_vec()).unwrap()
    }

    fn det3(h: &HankelEmbedding) -> f64 {
        let g = |i, j| h.get(i, j);
        g(0, 0) * (g(1, 1) * g(2, 2) - g(1, 2) * g(2, 1)) - g(0, 1) * (g(1, 0) * g(2, 2) - g(1, 2) * g(2, 0))
            + g(0, 2) * (g(1, 0) * g(2, 1) - g(1, 1) * g(2, 0))
    }

    #[test]
    fn rejects_malformed_vectors() {
        assert!(matches!(MomentVector::new(vec![]), Err(SteerError::InvalidLength(0))));
        assert!(matches!(
            MomentVector::new(vec![1.0, 2.0, 3.0]),
            Err(SteerError::InvalidLength(3))
        ));
        assert!(matches!(
            MomentVector::new(vec![0.0, f64::NAN]),
            Err(SteerError::NonFinite(2))
        ));
        assert!(MomentVector::new(vec![0.0; 14]).is_err());
    }

    #[test]
    fn embedding_examples() {
        let h = hankel_embed(&mv(&[0.0, 1.0]));
        assert_eq!(h.matrix(), &DMatrix::identity(2, 2));

        let h = hankel_embed(&mv(&[0.0, 1.0, 0.0, 3.0]));
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 3.0]);
        assert_eq!(h.matrix(), &expected);

        let h = hankel_embed(&mv(&[2.0, 6.0]));
        assert_eq!(h.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 6.0]));
    }

    #[test]
    fn embedding_is_hankel() {
        let h = hankel_embed(&mv(&[0.3, 1.7, -2.0, 9.0, 4.0, 60.0]));
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(h.get(i, j), h.get(j, i));
                if i > 0 && j < 3 {
                    assert_eq!(h.get(i, j), h.get(i - 1, j + 1));
                }
            }
        }
    }

    #[test]
    fn positivity_examples() {
        let m = mv(&[0.0, 1.0, 0.0, 3.0]);
        let p = in_vpp(&m, default_tolerance(&m));
        assert!(p.member);
        assert_abs_diff_eq!(p.min_eigenvalue, 2.0 - 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(det3(&hankel_embed(&m)), 2.0, epsilon = 1e-12);

        let p = in_vpp(&mv(&[0.0; 4]), 1e-10);
        assert!(!p.member);
        assert_abs_diff_eq!(p.min_eigenvalue, 0.0, epsilon = 1e-15);

        let e = mv(&[-0.5, 7.5, -12.5, 147.5]);
        let h = hankel_embed(&e);
        assert_abs_diff_eq!(det3(&h), 585.0, epsilon = 1e-9);
        assert_abs_diff_eq!(h.get(0, 0) * h.get(1, 1) - h.get(0, 1) * h.get(1, 0), 7.25);
        assert!(is_realizable(&e).member);
    }

    #[test]
    fn lyapunov_examples() {
        assert!(lyapunov_consistent(&mv(&[0.0, 1.0, 0.0, 3.0])).unwrap());
        assert!(!lyapunov_consistent(&mv(&[0.0, 2.0, 0.0, 1.0])).unwrap());
        // two-point mass at +-1 sits exactly on the boundary
        let two_point = empirical_moments(&[1.0, -1.0], 2).unwrap();
        assert_eq!(two_point.as_slice(), &[0.0, 1.0, 0.0, 1.0]);
        assert!(lyapunov_consistent(&two_point).unwrap());
        assert!(matches!(
            lyapunov_consistent(&mv(&[0.0, -1.0, 0.0, 1.0])),
            Err(SteerError::NegativeEvenMoment { order: 2, .. })
        ));
    }

    #[test]
    fn closed_form_examples() {
        let g = closed_form_moments(&DistributionSpec::gaussian(0.0, 1.0), 2).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 1.0, 0.0, 3.0]);

        let l = closed_form_moments(&DistributionSpec::laplace(2.0, 1.0), 2).unwrap();
        assert_eq!(l.as_slice(), &[2.0, 6.0, 20.0, 88.0]);

        let l = closed_form_moments(&DistributionSpec::laplace(-3.0, 1.0), 2).unwrap();
        assert_eq!(l.as_slice(), &[-3.0, 11.0, -45.0, 213.0]);

        let mix = DistributionSpec::mixture(vec![
            (0.5, DistributionSpec::laplace(2.0, 1.0)),
            (0.5, DistributionSpec::laplace(-3.0, 1.0)),
        ]);
        let m = closed_form_moments(&mix, 2).unwrap();
        assert_eq!(m.as_slice(), &[-0.5, 8.5, -12.5, 150.5]);

        // gaussian(3, 1): (3, 10, 36, 138); symmetric pair averages odd orders away
        let g3 = closed_form_moments(&DistributionSpec::gaussian(3.0, 1.0), 2).unwrap();
        assert_eq!(g3.as_slice(), &[3.0, 10.0, 36.0, 138.0]);
    }

    #[test]
    fn closed_form_rejects_other_families() {
        let e = DistributionSpec::Empirical { samples: vec![1.0] };
        assert!(matches!(
            closed_form_moments(&e, 1),
            Err(SteerError::UnsupportedFamily(_))
        ));
        let bad = DistributionSpec::mixture(vec![(0.5, DistributionSpec::gaussian(0.0, 1.0))]);
        assert!(closed_form_moments(&bad, 1).is_err());
        assert!(closed_form_moments(&DistributionSpec::laplace(0.0, 0.0), 1).is_err());
    }

    #[test]
    fn empirical_examples() {
        assert_eq!(empirical_moments(&[1.0, -1.0], 1).unwrap().as_slice(), &[0.0, 1.0]);
        assert_eq!(empirical_moments(&[2.0], 2).unwrap().as_slice(), &[2.0, 4.0, 8.0, 16.0]);
        assert!(matches!(empirical_moments(&[], 1), Err(SteerError::EmptySamples)));
    }

    #[test]
    fn raw_moment_spec_checks_order() {
        let spec = DistributionSpec::RawMoments { values: vec![0.0, 1.0] };
        assert!(spec.moments(1).is_ok());
        assert!(matches!(spec.moments(2), Err(SteerError::OrderMismatch { .. })));
    }
}
