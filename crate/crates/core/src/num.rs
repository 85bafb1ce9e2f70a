//! Scalar abstractions shared by the ranking and scoring code.
//!
//! [`Real`] covers the floating-point math in BM25 and METEOR. [`Weight`] is
//! the looser bound needed by the assignment solver. The solver never divides,
//! so it also runs over integers and exact rationals.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Num, Signed};

/// Floating-point scalar used for BM25 and METEOR scores.
pub trait Real: Float + FromPrimitive + Weight + Debug + Default + Send + Sync + 'static {
    /// Converts a count (document length, token count, ...) into a scalar.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable as float")
    }

    /// Converts an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable as float")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Entry type of an assignment matrix.
pub trait Weight: Copy + PartialOrd + Num + Signed + Debug {
    /// `false` for NaN or infinite floats; always `true` for exact types.
    fn is_finite_weight(&self) -> bool;

    /// Slack allowed when comparing two objective values that should be equal.
    ///
    /// `scale` is the largest absolute entry and `n` the matrix dimension.
    /// Exact types return zero.
    fn tie_tolerance(scale: Self, n: usize) -> Self;
}

macro_rules! float_weight {
    ($t:ty) => {
        impl Weight for $t {
            fn is_finite_weight(&self) -> bool {
                self.is_finite()
            }

            fn tie_tolerance(scale: Self, n: usize) -> Self {
                let n = n.max(1) as $t;
                (scale.max(1.0)) * n * 64.0 * <$t>::EPSILON
            }
        }
    };
}

float_weight!(f32);
float_weight!(f64);

macro_rules! exact_weight {
    ($t:ty) => {
        impl Weight for $t {
            fn is_finite_weight(&self) -> bool {
                true
            }

            fn tie_tolerance(_scale: Self, _n: usize) -> Self {
                <$t as num_traits::Zero>::zero()
            }
        }
    };
}

exact_weight!(i32);
exact_weight!(i64);
exact_weight!(Ratio<i64>);
exact_weight!(Ratio<i128>);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_tolerance_scales_with_input() {
        assert!(f64::tie_tolerance(1.0, 4) < 1e-12);
        assert!(f64::tie_tolerance(1e6, 4) > f64::tie_tolerance(1.0, 4));
        assert_eq!(i64::tie_tolerance(100, 10), 0);
        assert!(!f64::NAN.is_finite_weight());
        assert!(Ratio::new(1i64, 3).is_finite_weight());
    }

    #[test]
    fn count_conversion() {
        assert_eq!(f32::from_count(7), 7.0);
        assert_eq!(f64::lit(0.25), 0.25);
    }
}
