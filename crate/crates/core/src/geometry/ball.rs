use std::marker::PhantomData;

use super::{Curvature, GeometryError, BALL_EPS};
use crate::scalar::{dot, norm_sq, safe_norm, Real};

/// Largest argument passed to `artanh`.
const ATANH_CLAMP: f64 = 1.0 - 1e-15;

/// Slice-level Möbius gyrovector operations on the ball of curvature `κ`.
///
/// Every method that returns a point re-projects it so that
/// `|κ|·‖x‖² ≤ 1 − eps`. Tangent vectors are plain slices.
#[derive(Debug, Clone, Copy)]
pub struct PoincareBall<T> {
    curvature: Curvature,
    eps: f64,
    _scalar: PhantomData<T>,
}

impl<T: Real> PoincareBall<T> {
    pub fn new(curvature: Curvature) -> Self {
        Self::with_eps(curvature, BALL_EPS)
    }

    /// Ball with a custom boundary guard. Only the self-test fault hooks use
    /// anything other than [`BALL_EPS`].
    pub fn with_eps(curvature: Curvature, eps: f64) -> Self {
        PoincareBall {
            curvature,
            eps,
            _scalar: PhantomData,
        }
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    #[inline]
    fn c(&self) -> T {
        T::lit(self.curvature.c())
    }

    #[inline]
    fn sqrt_c(&self) -> T {
        T::lit(self.curvature.c().sqrt())
    }

    /// `|κ|·‖x‖²` as a plain value.
    pub fn scaled_norm_sq(&self, x: &[T]) -> f64 {
        self.curvature.c() * norm_sq(x).value()
    }

    pub fn check_inside(&self, x: &[T]) -> Result<(), GeometryError> {
        let s = self.scaled_norm_sq(x);
        if s.is_nan() {
            return Err(GeometryError::NonFinite);
        }
        if s >= 1.0 {
            return Err(GeometryError::DegeneratePoint(s));
        }
        Ok(())
    }

    /// Pulls `x` radially back inside the guard band if it crossed it.
    pub fn project(&self, x: &mut [T]) {
        let limit = 1.0 - self.eps;
        if self.scaled_norm_sq(x) > limit {
            // Aim slightly inside the limit so rounding cannot push us back out.
            let target = T::lit((limit / self.curvature.c()).sqrt() * (1.0 - 1e-12));
            let scale = target / safe_norm(x);
            for xi in x.iter_mut() {
                *xi = *xi * scale;
            }
        }
    }

    fn projected(&self, mut x: Vec<T>) -> Vec<T> {
        self.project(&mut x);
        x
    }

    /// `λ_x = 2 / (1 − |κ|‖x‖²)`.
    pub fn conformal_factor(&self, x: &[T]) -> Result<T, GeometryError> {
        self.check_inside(x)?;
        Ok(self.lambda(x))
    }

    #[inline]
    fn lambda(&self, x: &[T]) -> T {
        T::lit(2.0) / (T::one() - self.c() * norm_sq(x))
    }

    /// Möbius addition without the boundary projection.
    pub(crate) fn mobius_add_raw(&self, x: &[T], y: &[T]) -> Vec<T> {
        let c = self.c();
        let two = T::lit(2.0);
        let xy = dot(x, y);
        let x2 = norm_sq(x);
        let y2 = norm_sq(y);
        let a = T::one() + two * c * xy + c * y2;
        let b = T::one() - c * x2;
        let den = T::one() + two * c * xy + c * c * x2 * y2;
        x.iter()
            .zip(y)
            .map(|(&xi, &yi)| (a * xi + b * yi) / den)
            .collect()
    }

    pub fn mobius_add(&self, x: &[T], y: &[T]) -> Vec<T> {
        self.projected(self.mobius_add_raw(x, y))
    }

    pub fn mobius_neg(&self, x: &[T]) -> Vec<T> {
        x.iter().map(|&v| -v).collect()
    }

    /// `r ⊗ x = tanh(r·artanh(√c‖x‖)) · x / (√c‖x‖)`.
    pub fn mobius_scalar_mul(&self, r: T, x: &[T]) -> Vec<T> {
        let sc = self.sqrt_c();
        let n = safe_norm(x) * sc;
        let s = (r * atanh_clamped(n)).tanh() / n;
        self.projected(x.iter().map(|&v| v * s).collect())
    }

    /// Exponential map at the origin.
    pub fn exp_map0(&self, v: &[T]) -> Vec<T> {
        let sc = self.sqrt_c();
        let n = safe_norm(v) * sc;
        let s = n.tanh() / n;
        self.projected(v.iter().map(|&vi| vi * s).collect())
    }

    /// Logarithmic map at the origin.
    pub fn log_map0(&self, y: &[T]) -> Vec<T> {
        let sc = self.sqrt_c();
        let n = safe_norm(y) * sc;
        let s = atanh_clamped(n) / n;
        y.iter().map(|&yi| yi * s).collect()
    }

    /// `exp_x(v) = x ⊕ tanh(√c λ_x ‖v‖ / 2) v / (√c‖v‖)`.
    pub fn exp_map(&self, v: &[T], base: &[T]) -> Vec<T> {
        let sc = self.sqrt_c();
        let lam = self.lambda(base);
        let n = safe_norm(v) * sc;
        let s = (lam * n / T::lit(2.0)).tanh() / n;
        let step: Vec<T> = v.iter().map(|&vi| vi * s).collect();
        self.projected(self.mobius_add_raw(base, &step))
    }

    /// `log_x(y) = 2/(√c λ_x) · artanh(√c‖−x ⊕ y‖) · (−x ⊕ y)/‖−x ⊕ y‖`.
    pub fn log_map(&self, y: &[T], base: &[T]) -> Result<Vec<T>, GeometryError> {
        self.check_inside(y)?;
        self.check_inside(base)?;
        let sc = self.sqrt_c();
        let u = self.mobius_add_raw(&self.mobius_neg(base), y);
        let n = safe_norm(&u) * sc;
        let s = T::lit(2.0) / self.lambda(base) * atanh_clamped(n) / n;
        Ok(u.iter().map(|&ui| ui * s).collect())
    }

    /// Parallel transport of a tangent vector from the origin to `x`.
    pub fn transport_from_origin(&self, v: &[T], x: &[T]) -> Vec<T> {
        let s = T::one() - self.c() * norm_sq(x);
        v.iter().map(|&vi| vi * s).collect()
    }

    /// Geodesic distance, `(2/√c)·asinh(√c‖x−y‖ / √((1−c‖x‖²)(1−c‖y‖²)))`.
    ///
    /// This form is symmetric bit-for-bit and stays accurate for nearby points.
    pub fn distance(&self, x: &[T], y: &[T]) -> T {
        let diff2 = x
            .iter()
            .zip(y)
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
        if diff2.value() == 0.0 {
            return T::zero();
        }
        let c = self.c();
        let sc = self.sqrt_c();
        let den = ((T::one() - c * norm_sq(x)) * (T::one() - c * norm_sq(y))).sqrt();
        T::lit(2.0) / sc * (sc * diff2.sqrt() / den).asinh()
    }

    /// Distance from the origin, `(2/√c)·artanh(√c‖x‖)`.
    pub fn hyperbolic_radius(&self, x: &[T]) -> T {
        let n2 = norm_sq(x);
        if n2.value() == 0.0 {
            return T::zero();
        }
        let sc = self.sqrt_c();
        T::lit(2.0) / sc * atanh_clamped(sc * n2.sqrt())
    }

    /// Weighted Möbius gyromidpoint
    /// `½ ⊗ ( Σ_i α_i λ_i x_i / Σ_j α_j (λ_j − 1) )`.
    pub fn gyromidpoint(&self, points: &[&[T]], weights: &[T]) -> Result<Vec<T>, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::Empty);
        }
        if points.len() != weights.len() {
            return Err(GeometryError::LengthMismatch {
                points: points.len(),
                weights: weights.len(),
            });
        }
        if weights.iter().any(|w| !(w.value() >= 0.0) || !w.is_finite())
            || weights.iter().all(|w| w.value() == 0.0)
        {
            return Err(GeometryError::ZeroWeights);
        }
        let dim = points[0].len();
        let mut num = vec![T::zero(); dim];
        let mut den = T::zero();
        for (&p, &w) in points.iter().zip(weights) {
            if p.len() != dim {
                return Err(GeometryError::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            self.check_inside(p)?;
            if w.value() == 0.0 {
                continue;
            }
            let lam = self.lambda(p);
            den = den + w * (lam - T::one());
            let coef = w * lam;
            for (n, &pi) in num.iter_mut().zip(p) {
                *n = *n + coef * pi;
            }
        }
        let u: Vec<T> = num.into_iter().map(|n| n / den).collect();
        Ok(self.mobius_scalar_mul(T::lit(0.5), &u))
    }
}

#[inline]
fn atanh_clamped<T: Real>(z: T) -> T {
    z.min(T::lit(ATANH_CLAMP)).atanh()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradient, Tape, Var};

    fn unit() -> PoincareBall<f64> {
        PoincareBall::new(Curvature::default())
    }

    #[test]
    fn conformal_factor_values() {
        let b = unit();
        assert_eq!(b.conformal_factor(&[0.0, 0.0]).unwrap(), 2.0);
        let v = b.conformal_factor(&[0.5, 0.0]).unwrap();
        assert!((v - 2.0 / 0.75).abs() < 1e-15);
        assert!(matches!(
            b.conformal_factor(&[1.0, 0.0]),
            Err(GeometryError::DegeneratePoint(_))
        ));
        assert!(b.conformal_factor(&[0.6, 0.8]).is_err());
    }

    #[test]
    fn collinear_mobius_addition() {
        let r = unit().mobius_add(&[0.3, 0.0], &[0.4, 0.0]);
        assert!((r[0] - 0.625).abs() < 1e-15);
        assert_eq!(r[1], 0.0);
    }

    #[test]
    fn scalar_multiplication_cases() {
        let b = unit();
        let x = [0.6, 0.0];
        assert!((b.mobius_scalar_mul(1.0, &x)[0] - 0.6).abs() < 1e-15);
        assert_eq!(b.mobius_scalar_mul(0.0, &x), vec![0.0, 0.0]);
        assert_eq!(b.mobius_scalar_mul(3.0, &[0.0, 0.0]), vec![0.0, 0.0]);
        let h = b.mobius_scalar_mul(0.5, &x)[0];
        assert!((h - (0.5 * 0.6f64.atanh()).tanh()).abs() < 1e-15);
        // Closed form: tanh(½·artanh 0.6) = 1/3.
        assert!((h - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn exp_log_trivial_cases() {
        let b = unit();
        let base = [0.1, 0.3];
        assert_eq!(b.exp_map(&[0.0, 0.0], &base), base.to_vec());
        let l = b.log_map(&base, &base).unwrap();
        assert!(l.iter().all(|v| v.abs() < 1e-14));
        assert!(b.log_map(&[1.0, 0.0], &base).is_err());
    }

    #[test]
    fn exp_log_roundtrip_example() {
        let b = unit();
        let v = [0.2, -0.1];
        let base = [0.1, 0.3];
        let back = b.log_map(&b.exp_map(&v, &base), &base).unwrap();
        assert!((back[0] - v[0]).abs() < 1e-9 && (back[1] - v[1]).abs() < 1e-9);
    }

    #[test]
    fn origin_maps_agree_with_general_maps() {
        let b = unit();
        let v = [0.7, -0.2, 0.1];
        let o = [0.0; 3];
        let a = b.exp_map0(&v);
        let g = b.exp_map(&v, &o);
        for (x, y) in a.iter().zip(&g) {
            assert!((x - y).abs() < 1e-15);
        }
        let l0 = b.log_map0(&a);
        let lg = b.log_map(&a, &o).unwrap();
        for ((x, y), z) in l0.iter().zip(&lg).zip(&v) {
            assert!((x - y).abs() < 1e-12 && (x - z).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_and_radius() {
        let b = unit();
        let x = [0.5, 0.0];
        assert_eq!(b.distance(&x, &x), 0.0);
        let r = b.hyperbolic_radius(&x);
        assert!((r - 2.0 * 0.5f64.atanh()).abs() < 1e-15);
        assert!((r - 1.0986).abs() < 1e-4);
        assert!((b.distance(&[0.0, 0.0], &x) - r).abs() < 1e-14);
        // Möbius form of the distance as an independent route.
        let y = [-0.2, 0.7];
        let u = b.mobius_add_raw(&b.mobius_neg(&x), &y);
        let alt = 2.0 * norm_sq(&u).sqrt().atanh();
        assert!((b.distance(&x, &y) - alt).abs() < 1e-13);
    }

    #[test]
    fn gyromidpoint_examples() {
        let b = unit();
        let m = b.gyromidpoint(&[&[0.5, 0.0], &[-0.5, 0.0]], &[1.0, 1.0]).unwrap();
        assert!(m.iter().all(|v| v.abs() < 1e-15));
        let m = b.gyromidpoint(&[&[0.3, 0.0], &[0.6, 0.0]], &[1.0, 1.0]).unwrap();
        let expect = ((0.3f64.atanh() + 0.6f64.atanh()) / 2.0).tanh();
        assert!((m[0] - expect).abs() < 1e-14);
        assert!((m[0] - 0.463_165_154_296_048_3).abs() < 1e-14);
        let single = b.gyromidpoint(&[&[0.2, -0.45]], &[3.7]).unwrap();
        assert!((single[0] - 0.2).abs() < 1e-14 && (single[1] + 0.45).abs() < 1e-14);
    }

    #[test]
    fn gyromidpoint_rejects_bad_weights() {
        let b = unit();
        let p: &[f64] = &[0.1, 0.1];
        assert_eq!(b.gyromidpoint(&[p, p], &[0.0, 0.0]), Err(GeometryError::ZeroWeights));
        assert_eq!(b.gyromidpoint(&[p, p], &[-1.0, 2.0]), Err(GeometryError::ZeroWeights));
        assert!(matches!(
            b.gyromidpoint(&[p], &[1.0, 1.0]),
            Err(GeometryError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn projection_respects_custom_guard() {
        let strict = PoincareBall::<f64>::with_eps(Curvature::default(), 1e-2);
        let mut x = vec![0.999, 0.0];
        strict.project(&mut x);
        assert!(x[0] * x[0] <= 0.99);
        let loose = PoincareBall::<f64>::with_eps(Curvature::default(), 0.0);
        let mut y = vec![1.0 - 1e-6, 0.0];
        loose.project(&mut y);
        assert_eq!(y[0], 1.0 - 1e-6);
    }

    #[test]
    fn tape_gradient_of_distance_is_finite_at_origin_maps() {
        Tape::reset();
        let b = PoincareBall::<Var>::new(Curvature::default());
        let v = Var::params(&[0.0, 0.0]);
        let x = b.exp_map0(&v);
        let y = [Var::constant(0.3), Var::constant(0.1)];
        let d = b.distance(&x, &y);
        let g = gradient(d);
        assert!(g.wrt_all(&v).iter().all(|g| g.is_finite()));
    }
}
