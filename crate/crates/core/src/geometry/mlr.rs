use serde::{Deserialize, Serialize};

use super::{GeometryError, PoincareBall};
use crate::scalar::{dot, norm_sq, safe_norm, softmax, Real};

/// One class of a hyperbolic multinomial logistic regression head: the
/// gyroplane through `offset` (`p_c`) with normal `normal` (`a_c`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlrHyperplane<T = f64> {
    pub offset: Vec<T>,
    pub normal: Vec<T>,
}

impl<T: Real> MlrHyperplane<T> {
    pub fn new(offset: Vec<T>, normal: Vec<T>) -> Self {
        MlrHyperplane { offset, normal }
    }
}

/// Signed, conformally scaled distances from `x` to each class gyroplane:
///
/// `λ_p ‖a‖/√c · asinh(2√c ⟨−p ⊕ x, a⟩ / ((1 − c‖−p ⊕ x‖²)‖a‖))`.
pub fn mlr_logits<T: Real>(
    ball: &PoincareBall<T>,
    x: &[T],
    hyperplanes: &[MlrHyperplane<T>],
) -> Result<Vec<T>, GeometryError> {
    if hyperplanes.len() < 2 {
        return Err(GeometryError::TooFewClasses(hyperplanes.len()));
    }
    ball.check_inside(x)?;
    let c = T::lit(ball.curvature().c());
    let sc = c.sqrt();
    let two = T::lit(2.0);
    hyperplanes
        .iter()
        .enumerate()
        .map(|(k, h)| {
            for v in [&h.offset, &h.normal] {
                if v.len() != x.len() {
                    return Err(GeometryError::DimensionMismatch {
                        expected: x.len(),
                        found: v.len(),
                    });
                }
            }
            if norm_sq(&h.normal).value() == 0.0 {
                return Err(GeometryError::ZeroNormal(k));
            }
            ball.check_inside(&h.offset)?;
            let z = ball.mobius_add_raw(&ball.mobius_neg(&h.offset), x);
            let a_norm = safe_norm(&h.normal);
            let lam_p = two / (T::one() - c * norm_sq(&h.offset));
            let arg = two * sc * dot(&z, &h.normal) / ((T::one() - c * norm_sq(&z)) * a_norm);
            Ok(lam_p * a_norm / sc * arg.asinh())
        })
        .collect()
}

/// Softmax of [`mlr_logits`].
pub fn mlr_probabilities<T: Real>(
    ball: &PoincareBall<T>,
    x: &[T],
    hyperplanes: &[MlrHyperplane<T>],
) -> Result<Vec<T>, GeometryError> {
    Ok(softmax(&mlr_logits(ball, x, hyperplanes)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Curvature;

    #[test]
    fn identical_classes_give_uniform_probabilities() {
        let ball = PoincareBall::<f64>::new(Curvature::default());
        let h = MlrHyperplane::new(vec![0.0, 0.0], vec![0.3, -0.8]);
        let planes = vec![h.clone(), h.clone(), h];
        for x in [[0.0, 0.0], [0.4, 0.1], [-0.7, 0.6]] {
            let p = mlr_probabilities(&ball, &x, &planes).unwrap();
            assert!(p.iter().all(|&pi| (pi - 1.0 / 3.0).abs() < 1e-12));
        }
    }

    #[test]
    fn logit_vanishes_on_own_offset() {
        let ball = PoincareBall::<f64>::new(Curvature::default());
        let planes = vec![
            MlrHyperplane::new(vec![0.2, -0.1], vec![1.0, 0.5]),
            MlrHyperplane::new(vec![-0.3, 0.4], vec![-0.2, 0.9]),
        ];
        let l = mlr_logits(&ball, &[0.2, -0.1], &planes).unwrap();
        assert!(l[0].abs() < 1e-15);
        assert!(l[1].abs() > 1e-3);
    }

    #[test]
    fn euclidean_limit_is_a_linear_logit() {
        // As c → 0 the logit tends to 4⟨x − p, a⟩ (λ_p → 2, asinh(s) ≈ s).
        let ball = PoincareBall::<f64>::new(Curvature::new(-1e-10).unwrap());
        let planes = vec![
            MlrHyperplane::new(vec![0.1, 0.2], vec![1.0, -2.0]),
            MlrHyperplane::new(vec![0.0, 0.0], vec![0.5, 0.5]),
        ];
        let x = [0.3, -0.4];
        let l = mlr_logits(&ball, &x, &planes).unwrap();
        let lin = 4.0 * ((0.3 - 0.1) * 1.0 + (-0.4 - 0.2) * -2.0);
        assert!((l[0] - lin).abs() < 1e-6);
    }

    #[test]
    fn errors() {
        let ball = PoincareBall::<f64>::new(Curvature::default());
        let ok = MlrHyperplane::new(vec![0.0, 0.0], vec![1.0, 0.0]);
        let zero = MlrHyperplane::new(vec![0.0, 0.0], vec![0.0, 0.0]);
        assert_eq!(
            mlr_logits(&ball, &[0.1, 0.1], std::slice::from_ref(&ok)),
            Err(GeometryError::TooFewClasses(1))
        );
        assert_eq!(
            mlr_logits(&ball, &[0.1, 0.1], &[ok.clone(), zero]),
            Err(GeometryError::ZeroNormal(1))
        );
        let short = MlrHyperplane::new(vec![0.0], vec![1.0]);
        assert!(matches!(
            mlr_logits(&ball, &[0.1, 0.1], &[ok, short]),
            Err(GeometryError::DimensionMismatch { .. })
        ));
    }
}
