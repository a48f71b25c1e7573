//! Scalar abstraction shared by the numerical modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type the samplers, priors and estimators are generic over.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + std::str::FromStr
    + 'static
{
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite real")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Logistic function.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Inverse of [`sigmoid`].
#[inline]
pub fn logit<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// `logit` from a probability and its complement computed independently,
/// exact to rounding even when `p` is within an ulp of 1.
#[inline]
pub fn logit_pair<T: Real>(p: T, complement: T) -> T {
    p.ln() - complement.ln()
}

/// `log(sigmoid(x))`, finite for every finite `x`.
#[inline]
pub fn log_sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Stable `log(sum(exp(xs)))`. Returns `-inf` for an empty slice.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let sum: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Stable `log(mean(exp(xs)))`.
pub fn log_mean_exp<T: Real>(xs: &[T]) -> T {
    log_sum_exp(xs) - T::from_count(xs.len()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_matches_closed_form() {
        assert!((sigmoid(2.0f64) - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
        assert!((sigmoid(2.0f64) - 0.880_797_077_977_882_3).abs() < 1e-15);
        assert_eq!(sigmoid(0.0f64), 0.5);
    }

    #[test]
    fn logit_inverts_sigmoid() {
        for i in -200..=200 {
            let x = i as f64 * 0.1;
            assert!(
                (logit_pair(sigmoid(x), sigmoid(-x)) - x).abs() < 1e-10,
                "x = {x}"
            );
        }
        for i in -50..=50 {
            let x = i as f64 * 0.1;
            assert!((logit(sigmoid(x)) - x).abs() < 1e-10, "x = {x}");
        }
    }

    #[test]
    fn log_sigmoid_saturates_gracefully() {
        assert!(log_sigmoid(-800.0f64).is_finite());
        assert!((log_sigmoid(-800.0f64) + 800.0).abs() < 1e-12);
        assert_eq!(log_sigmoid(800.0f64), 0.0);
        assert!((log_sigmoid(1.5f64) - sigmoid(1.5f64).ln()).abs() < 1e-15);
        assert!((log_sigmoid(1.5f32) - sigmoid(1.5f32).ln()).abs() < 1e-6);
    }

    #[test]
    fn log_sum_exp_shift_invariant() {
        let xs = [1000.0, 1001.0, 999.5];
        let shifted: Vec<f64> = xs.iter().map(|x| x - 1000.0).collect();
        assert!((log_sum_exp(&xs) - 1000.0 - log_sum_exp(&shifted)).abs() < 1e-12);
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
    }
}
