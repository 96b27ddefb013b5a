//! Poincaré-ball geometry.
//!
//! The ball of curvature `κ < 0` is the open set `{x : |κ|·‖x‖² < 1}`. Raw
//! slice-level operations live on [`PoincareBall`]; [`BallPoint`] is the
//! checked, curvature-tagged point type used at module boundaries.

mod ball;
mod mlr;

pub use ball::PoincareBall;
pub use mlr::{mlr_logits, mlr_probabilities, MlrHyperplane};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// Distance kept between returned points and the ball boundary, in units of
/// `|κ|·‖x‖²`.
pub const BALL_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("curvature must be strictly negative and finite, got {0}")]
    InvalidCurvature(f64),
    #[error("point lies on or outside the ball boundary (|κ|·‖x‖² = {0})")]
    DegeneratePoint(f64),
    #[error("non-finite coordinate in point")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("curvature mismatch: {0} vs {1}")]
    CurvatureMismatch(f64, f64),
    #[error("{points} points but {weights} weights")]
    LengthMismatch { points: usize, weights: usize },
    #[error("gyromidpoint needs at least one point")]
    Empty,
    #[error("weights must be non-negative and not all zero")]
    ZeroWeights,
    #[error("hyperplane normal for class {0} is zero")]
    ZeroNormal(usize),
    #[error("classifier needs at least two classes, got {0}")]
    TooFewClasses(usize),
}

/// Sectional curvature `κ`, always strictly negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(kappa: f64) -> Result<Self, GeometryError> {
        if kappa.is_finite() && kappa < 0.0 {
            Ok(Curvature(kappa))
        } else {
            Err(GeometryError::InvalidCurvature(kappa))
        }
    }

    pub fn kappa(self) -> f64 {
        self.0
    }

    /// `|κ|`, the form that appears in every formula.
    pub fn c(self) -> f64 {
        -self.0
    }
}

impl Default for Curvature {
    fn default() -> Self {
        Curvature(-1.0)
    }
}

impl TryFrom<f64> for Curvature {
    type Error = GeometryError;
    fn try_from(k: f64) -> Result<Self, Self::Error> {
        Curvature::new(k)
    }
}

impl From<Curvature> for f64 {
    fn from(c: Curvature) -> f64 {
        c.0
    }
}

/// A point strictly inside the ball, re-projected to the guard band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallPoint<T = f64> {
    coords: Vec<T>,
    curvature: Curvature,
}

impl<T: Real> BallPoint<T> {
    /// Validates `coords` and pulls them inside the guard band if needed.
    /// Points on or beyond the boundary are rejected.
    pub fn new(coords: Vec<T>, curvature: Curvature) -> Result<Self, GeometryError> {
        let ball = PoincareBall::<T>::new(curvature);
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        ball.check_inside(&coords)?;
        let mut coords = coords;
        ball.project(&mut coords);
        Ok(BallPoint { coords, curvature })
    }

    pub fn origin(dim: usize, curvature: Curvature) -> Self {
        BallPoint {
            coords: vec![T::zero(); dim],
            curvature,
        }
    }

    /// Wraps coordinates already produced by a guarded [`PoincareBall`] op.
    pub(crate) fn from_guarded(coords: Vec<T>, curvature: Curvature) -> Self {
        BallPoint { coords, curvature }
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<T> {
        self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn ball(&self) -> PoincareBall<T> {
        PoincareBall::new(self.curvature)
    }

    fn compatible(&self, other: &Self) -> Result<(), GeometryError> {
        if self.curvature != other.curvature {
            return Err(GeometryError::CurvatureMismatch(
                self.curvature.kappa(),
                other.curvature.kappa(),
            ));
        }
        if self.dim() != other.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }

    pub fn conformal_factor(&self) -> Result<T, GeometryError> {
        self.ball().conformal_factor(&self.coords)
    }

    pub fn mobius_add(&self, other: &Self) -> Result<Self, GeometryError> {
        self.compatible(other)?;
        let c = self.ball().mobius_add(&self.coords, &other.coords);
        Ok(Self::from_guarded(c, self.curvature))
    }

    pub fn mobius_neg(&self) -> Self {
        Self::from_guarded(self.coords.iter().map(|&x| -x).collect(), self.curvature)
    }

    pub fn mobius_scalar_mul(&self, r: T) -> Self {
        let c = self.ball().mobius_scalar_mul(r, &self.coords);
        Self::from_guarded(c, self.curvature)
    }

    /// Exponential map of tangent vector `v` at `self`.
    pub fn exp_map(&self, v: &[T]) -> Result<Self, GeometryError> {
        if v.len() != self.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim(),
                found: v.len(),
            });
        }
        Ok(Self::from_guarded(
            self.ball().exp_map(v, &self.coords),
            self.curvature,
        ))
    }

    /// Logarithmic map of `y` at `self`.
    pub fn log_map(&self, y: &Self) -> Result<Vec<T>, GeometryError> {
        self.compatible(y)?;
        self.ball().log_map(&y.coords, &self.coords)
    }

    pub fn distance(&self, other: &Self) -> Result<T, GeometryError> {
        self.compatible(other)?;
        Ok(self.ball().distance(&self.coords, &other.coords))
    }

    pub fn hyperbolic_radius(&self) -> T {
        self.ball().hyperbolic_radius(&self.coords)
    }
}

/// Weighted Möbius gyromidpoint of curvature-tagged points.
pub fn gyromidpoint<T: Real>(
    points: &[BallPoint<T>],
    weights: &[T],
) -> Result<BallPoint<T>, GeometryError> {
    let first = points.first().ok_or(GeometryError::Empty)?;
    for p in &points[1..] {
        first.compatible(p)?;
    }
    let refs: Vec<&[T]> = points.iter().map(|p| p.coords()).collect();
    let m = first.ball().gyromidpoint(&refs, weights)?;
    Ok(BallPoint::from_guarded(m, first.curvature))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(c: &[f64]) -> BallPoint {
        BallPoint::new(c.to_vec(), Curvature::default()).unwrap()
    }

    #[test]
    fn curvature_must_be_negative() {
        assert!(Curvature::new(0.0).is_err());
        assert!(Curvature::new(0.5).is_err());
        assert!(Curvature::new(f64::NAN).is_err());
        assert_eq!(Curvature::default().kappa(), -1.0);
        let json = serde_json::to_string(&Curvature::default()).unwrap();
        assert_eq!(json, "-1.0");
        assert!(serde_json::from_str::<Curvature>("1.0").is_err());
    }

    #[test]
    fn construction_rejects_boundary_and_projects_near_it() {
        assert!(matches!(
            BallPoint::new(vec![1.0, 0.0], Curvature::default()),
            Err(GeometryError::DegeneratePoint(_))
        ));
        assert!(BallPoint::new(vec![f64::NAN, 0.0], Curvature::default()).is_err());
        let p = pt(&[1.0 - 1e-7, 0.0]);
        assert!(p.coords()[0].powi(2) <= 1.0 - BALL_EPS);
    }

    #[test]
    fn mismatches_are_reported() {
        let a = pt(&[0.1, 0.2]);
        let b = pt(&[0.1, 0.2, 0.0]);
        assert!(matches!(
            a.mobius_add(&b),
            Err(GeometryError::DimensionMismatch { .. })
        ));
        let c = BallPoint::new(vec![0.1, 0.2], Curvature::new(-2.0).unwrap()).unwrap();
        assert!(matches!(
            a.distance(&c),
            Err(GeometryError::CurvatureMismatch(..))
        ));
        assert!(matches!(
            gyromidpoint(&[a, c], &[1.0, 1.0]),
            Err(GeometryError::CurvatureMismatch(..))
        ));
    }

    #[test]
    fn additive_identity_and_inverse() {
        let x = pt(&[0.3, -0.4]);
        let o = BallPoint::origin(2, Curvature::default());
        assert_eq!(o.mobius_add(&x).unwrap(), x);
        let z = x.mobius_add(&x.mobius_neg()).unwrap();
        assert!(z.coords().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn point_level_gyromidpoint_errors() {
        let a = pt(&[0.1, 0.0]);
        assert_eq!(gyromidpoint::<f64>(&[], &[]), Err(GeometryError::Empty));
        assert!(matches!(
            gyromidpoint(std::slice::from_ref(&a), &[1.0, 2.0]),
            Err(GeometryError::LengthMismatch { .. })
        ));
        assert_eq!(
            gyromidpoint(&[a.clone(), a], &[0.0, 0.0]),
            Err(GeometryError::ZeroWeights)
        );
    }
}
