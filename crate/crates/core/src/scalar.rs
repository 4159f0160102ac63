//! Numeric traits the rest of the crate is generic over.
//!
//! Times, throughputs and real-valued costs use [`Scalar`] (any IEEE float
//! from `num-traits`). Planner objective values only need to be ordered and
//! additive, so [`Value`] also admits integers and exact rationals.

use std::fmt::Debug;
use std::ops::Add;

use num_traits::{Float, FromPrimitive, ToPrimitive, Zero};

/// Floating-point scalar used for times, rates and resource costs.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static
{
    fn from_u64_lossy(v: u64) -> Self {
        Self::from_u64(v).unwrap_or_else(Self::infinity)
    }

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static
{
}

/// Per-layer objective value (resource cost `r_l`).
///
/// Only ordering and addition are required; the planner never subtracts or
/// divides values, so exact types stay exact.
pub trait Value: Copy + PartialOrd + Add<Output = Self> + Zero + Debug + Send + Sync {}

impl<T> Value for T where T: Copy + PartialOrd + Add<Output = T> + Zero + Debug + Send + Sync {}

/// Sum of a slice of values, left to right.
pub fn total<V: Value>(values: &[V]) -> V {
    values.iter().fold(V::zero(), |acc, &v| acc + v)
}
