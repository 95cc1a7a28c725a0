//! Moment-based steering of the state distribution of a scalar
//! discrete-time linear stochastic system
//! `x(k+1) = a(k) x(k) + u(k)` with the control independent of the state.
//!
//! Planning happens on truncated power-moment vectors; each planned control
//! moment vector is then realized as a density and sampled to drive an
//! ensemble of agents.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binomial;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod moments;
pub mod planner;
pub mod quadrature;
pub mod realization;

pub use error::{Result, SteerError};
pub use moments::{DistributionSpec, MomentVector};
