//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All geometry, losses and solvers are written against [`Real`] so the same
//! code runs on `f64` (the default precision), `f32`, and the reverse-mode
//! [`Var`](crate::autodiff::Var) used for training.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};

pub trait Real: Float + FromPrimitive + Debug + 'static {
    /// Lifts an `f64` literal into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Plain value, dropping any derivative information.
    #[inline]
    fn value(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `bias + Σ weights[i] * inputs[i]` with constant inputs.
    ///
    /// Dense layers spend most of their time here; tape scalars override it
    /// to record a single node instead of one per product.
    fn affine(weights: &[Self], inputs: &[f64], bias: Self) -> Self {
        weights
            .iter()
            .zip(inputs)
            .fold(bias, |acc, (&w, &x)| acc + w * Self::lit(x))
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Euclidean dot product.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm_sq<T: Real>(a: &[T]) -> T {
    dot(a, a)
}

/// Norm with a floor so its derivative stays finite at the origin.
#[inline]
pub fn safe_norm<T: Real>(a: &[T]) -> T {
    norm_sq(a).max(T::lit(MIN_NORM * MIN_NORM)).sqrt()
}

/// Smallest norm treated as nonzero by direction computations.
pub const MIN_NORM: f64 = 1e-15;

pub fn lift<T: Real>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::lit(x)).collect()
}

pub fn values<T: Real>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|x| x.value()).collect()
}

/// Numerically stable `ln Σ exp(x_i)`.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs
        .iter()
        .map(|x| x.value())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return T::lit(max);
    }
    let shift = T::lit(max);
    let sum = xs.iter().fold(T::zero(), |acc, &x| acc + (x - shift).exp());
    shift + sum.ln()
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&l| (l - lse).exp()).collect()
}

pub fn log_softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&l| l - lse).collect()
}

/// `−(1 − p)^γ · ln p` from `ln p`; the power is skipped when `γ = 0`.
pub fn focal_term<T: Real>(log_p: T, gamma: f64) -> T {
    if gamma == 0.0 {
        return -log_p;
    }
    let one_minus = T::one() - log_p.exp();
    -one_minus.max(T::zero()).powf(T::lit(gamma)) * log_p
}

/// `⌈x⌉` that ignores representation noise just above an integer.
pub fn ceil_tolerant(x: f64) -> f64 {
    (x - 1e-9 * x.abs().max(1.0)).ceil()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0f64, 2.0, -3.0, 1000.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[3] > 0.999);
    }

    #[test]
    fn tolerant_ceiling() {
        assert_eq!(ceil_tolerant(0.05 / 5.0 * 1000.0), 10.0);
        assert_eq!(ceil_tolerant(0.05 * 1000.0), 50.0);
        assert_eq!(ceil_tolerant(4.85), 5.0);
        assert_eq!(ceil_tolerant(0.0), 0.0);
    }

    #[test]
    fn affine_matches_fold() {
        let w = [0.5f32, -1.0, 2.0];
        assert_eq!(f32::affine(&w, &[1.0, 2.0, 3.0], 0.25), 0.25 + 0.5 - 2.0 + 6.0);
    }
}
