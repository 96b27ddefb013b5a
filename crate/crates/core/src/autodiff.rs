//! Reverse-mode automatic differentiation on a thread-local tape.
//!
//! [`Var`] is a `Copy` scalar implementing [`num_traits::Float`], so every
//! generic routine in the crate can be differentiated by instantiating it
//! with `Var` instead of `f64`. Each thread owns one tape; call
//! [`Tape::reset`] before building a new expression and never mix `Var`s
//! recorded before a reset with ones recorded after it.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::fmt;
use std::num::FpCategory;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, Sub, SubAssign};

use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};

use crate::scalar::Real;

const CONST: u32 = u32::MAX;

#[derive(Default)]
struct TapeData {
    starts: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
}

impl TapeData {
    fn push(&mut self, edges: &[(u32, f64)]) -> u32 {
        let idx = self.starts.len() as u32;
        self.starts.push(self.parents.len() as u32);
        for &(p, d) in edges {
            if p != CONST {
                self.parents.push(p);
                self.partials.push(d);
            }
        }
        idx
    }
}

thread_local! {
    static TAPE: RefCell<TapeData> = RefCell::new(TapeData::default());
}

/// Handle to the current thread's tape.
pub struct Tape;

impl Tape {
    /// Drops every recorded node. Existing non-constant `Var`s become invalid.
    pub fn reset() {
        TAPE.with(|t| {
            let mut t = t.borrow_mut();
            t.starts.clear();
            t.parents.clear();
            t.partials.clear();
        });
    }

    pub fn len() -> usize {
        TAPE.with(|t| t.borrow().starts.len())
    }

    pub fn is_empty() -> bool {
        Self::len() == 0
    }
}

/// Scalar that records its computation history on the thread-local tape.
#[derive(Clone, Copy)]
pub struct Var {
    idx: u32,
    val: f64,
}

impl Var {
    /// A differentiable leaf.
    pub fn param(val: f64) -> Self {
        let idx = TAPE.with(|t| t.borrow_mut().push(&[]));
        Var { idx, val }
    }

    pub fn params(vals: &[f64]) -> Vec<Var> {
        vals.iter().map(|&v| Var::param(v)).collect()
    }

    /// A value with no derivative; records nothing.
    pub const fn constant(val: f64) -> Self {
        Var { idx: CONST, val }
    }

    #[inline]
    pub fn val(self) -> f64 {
        self.val
    }

    #[inline]
    pub fn is_constant(self) -> bool {
        self.idx == CONST
    }

    #[inline]
    fn unary(self, val: f64, d: f64) -> Var {
        if self.is_constant() {
            return Var::constant(val);
        }
        let idx = TAPE.with(|t| t.borrow_mut().push(&[(self.idx, d)]));
        Var { idx, val }
    }

    #[inline]
    fn binary(self, other: Var, val: f64, da: f64, db: f64) -> Var {
        if self.is_constant() && other.is_constant() {
            return Var::constant(val);
        }
        let idx = TAPE.with(|t| t.borrow_mut().push(&[(self.idx, da), (other.idx, db)]));
        Var { idx, val }
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_constant() {
            write!(f, "Var(const {})", self.val)
        } else {
            write!(f, "Var(#{} {})", self.idx, self.val)
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.val, f)
    }
}

/// Adjoints of every tape node with respect to one output.
pub struct Gradient {
    adjoints: Vec<f64>,
}

impl Gradient {
    pub fn wrt(&self, v: Var) -> f64 {
        if v.is_constant() {
            return 0.0;
        }
        self.adjoints.get(v.idx as usize).copied().unwrap_or(0.0)
    }

    pub fn wrt_all(&self, vs: &[Var]) -> Vec<f64> {
        vs.iter().map(|&v| self.wrt(v)).collect()
    }
}

/// Back-propagates from `output` through the current tape.
pub fn gradient(output: Var) -> Gradient {
    TAPE.with(|t| {
        let t = t.borrow();
        let n = t.starts.len();
        let mut adjoints = vec![0.0; n];
        if output.is_constant() {
            return Gradient { adjoints };
        }
        adjoints[output.idx as usize] = 1.0;
        for i in (0..=output.idx as usize).rev() {
            let a = adjoints[i];
            if a == 0.0 {
                continue;
            }
            let start = t.starts[i] as usize;
            let end = t.starts.get(i + 1).map_or(t.parents.len(), |&e| e as usize);
            for k in start..end {
                adjoints[t.parents[k] as usize] += a * t.partials[k];
            }
        }
        Gradient { adjoints }
    })
}

impl Real for Var {
    fn affine(weights: &[Self], inputs: &[f64], bias: Self) -> Self {
        let mut val = bias.val;
        for (w, &x) in weights.iter().zip(inputs) {
            val += w.val * x;
        }
        if bias.is_constant() && weights.iter().all(|w| w.is_constant()) {
            return Var::constant(val);
        }
        let idx = TAPE.with(|t| {
            let mut t = t.borrow_mut();
            let idx = t.starts.len() as u32;
            let start = t.parents.len() as u32;
            t.starts.push(start);
            if !bias.is_constant() {
                t.parents.push(bias.idx);
                t.partials.push(1.0);
            }
            for (w, &x) in weights.iter().zip(inputs) {
                if !w.is_constant() && x != 0.0 {
                    t.parents.push(w.idx);
                    t.partials.push(x);
                }
            }
            idx
        });
        Var { idx, val }
    }
}

impl PartialEq for Var {
    fn eq(&self, other: &Self) -> bool {
        self.val == other.val
    }
}

impl PartialOrd for Var {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.val.partial_cmp(&other.val)
    }
}

impl Add for Var {
    type Output = Var;
    fn add(self, rhs: Var) -> Var {
        self.binary(rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl Sub for Var {
    type Output = Var;
    fn sub(self, rhs: Var) -> Var {
        self.binary(rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl Mul for Var {
    type Output = Var;
    fn mul(self, rhs: Var) -> Var {
        self.binary(rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl Div for Var {
    type Output = Var;
    fn div(self, rhs: Var) -> Var {
        let q = self.val / rhs.val;
        self.binary(rhs, q, 1.0 / rhs.val, -q / rhs.val)
    }
}

impl Rem for Var {
    type Output = Var;
    fn rem(self, rhs: Var) -> Var {
        let k = (self.val / rhs.val).trunc();
        self.binary(rhs, self.val % rhs.val, 1.0, -k)
    }
}

impl Neg for Var {
    type Output = Var;
    fn neg(self) -> Var {
        self.unary(-self.val, -1.0)
    }
}

impl AddAssign for Var {
    fn add_assign(&mut self, rhs: Var) {
        *self = *self + rhs;
    }
}

impl SubAssign for Var {
    fn sub_assign(&mut self, rhs: Var) {
        *self = *self - rhs;
    }
}

impl MulAssign for Var {
    fn mul_assign(&mut self, rhs: Var) {
        *self = *self * rhs;
    }
}

impl DivAssign for Var {
    fn div_assign(&mut self, rhs: Var) {
        *self = *self / rhs;
    }
}

impl Zero for Var {
    fn zero() -> Self {
        Var::constant(0.0)
    }
    fn is_zero(&self) -> bool {
        self.val == 0.0
    }
}

impl One for Var {
    fn one() -> Self {
        Var::constant(1.0)
    }
}

impl Num for Var {
    type FromStrRadixErr = <f64 as Num>::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(Var::constant)
    }
}

impl ToPrimitive for Var {
    fn to_i64(&self) -> Option<i64> {
        self.val.to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.val.to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.val)
    }
}

impl NumCast for Var {
    fn from<N: ToPrimitive>(n: N) -> Option<Self> {
        n.to_f64().map(Var::constant)
    }
}

impl FromPrimitive for Var {
    fn from_i64(n: i64) -> Option<Self> {
        Some(Var::constant(n as f64))
    }
    fn from_u64(n: u64) -> Option<Self> {
        Some(Var::constant(n as f64))
    }
    fn from_f64(n: f64) -> Option<Self> {
        Some(Var::constant(n))
    }
}

impl Float for Var {
    fn nan() -> Self {
        Var::constant(f64::NAN)
    }
    fn infinity() -> Self {
        Var::constant(f64::INFINITY)
    }
    fn neg_infinity() -> Self {
        Var::constant(f64::NEG_INFINITY)
    }
    fn neg_zero() -> Self {
        Var::constant(-0.0)
    }
    fn min_value() -> Self {
        Var::constant(f64::MIN)
    }
    fn min_positive_value() -> Self {
        Var::constant(f64::MIN_POSITIVE)
    }
    fn max_value() -> Self {
        Var::constant(f64::MAX)
    }
    fn epsilon() -> Self {
        Var::constant(f64::EPSILON)
    }
    fn is_nan(self) -> bool {
        self.val.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.val.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.val.is_finite()
    }
    fn is_normal(self) -> bool {
        self.val.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.val.classify()
    }
    fn floor(self) -> Self {
        Var::constant(self.val.floor())
    }
    fn ceil(self) -> Self {
        Var::constant(self.val.ceil())
    }
    fn round(self) -> Self {
        Var::constant(self.val.round())
    }
    fn trunc(self) -> Self {
        Var::constant(self.val.trunc())
    }
    fn fract(self) -> Self {
        self.unary(self.val.fract(), 1.0)
    }
    fn abs(self) -> Self {
        let d = if self.val < 0.0 { -1.0 } else { 1.0 };
        self.unary(self.val.abs(), d)
    }
    fn signum(self) -> Self {
        Var::constant(self.val.signum())
    }
    fn is_sign_positive(self) -> bool {
        self.val.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.val.is_sign_negative()
    }
    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }
    fn recip(self) -> Self {
        let r = 1.0 / self.val;
        self.unary(r, -r * r)
    }
    fn powi(self, n: i32) -> Self {
        let d = if n == 0 { 0.0 } else { n as f64 * self.val.powi(n - 1) };
        self.unary(self.val.powi(n), d)
    }
    fn powf(self, n: Self) -> Self {
        let v = self.val.powf(n.val);
        let da = if n.val == 0.0 { 0.0 } else { n.val * self.val.powf(n.val - 1.0) };
        let db = if self.val > 0.0 { v * self.val.ln() } else { 0.0 };
        self.binary(n, v, da, db)
    }
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }
    fn exp2(self) -> Self {
        let e = self.val.exp2();
        self.unary(e, e * std::f64::consts::LN_2)
    }
    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }
    fn log(self, base: Self) -> Self {
        self.ln() / base.ln()
    }
    fn log2(self) -> Self {
        self.unary(self.val.log2(), 1.0 / (self.val * std::f64::consts::LN_2))
    }
    fn log10(self) -> Self {
        self.unary(self.val.log10(), 1.0 / (self.val * std::f64::consts::LN_10))
    }
    fn max(self, other: Self) -> Self {
        if self.val >= other.val || other.val.is_nan() {
            self
        } else {
            other
        }
    }
    fn min(self, other: Self) -> Self {
        if self.val <= other.val || other.val.is_nan() {
            self
        } else {
            other
        }
    }
    #[allow(deprecated)]
    fn abs_sub(self, other: Self) -> Self {
        if self.val <= other.val {
            Var::constant(0.0)
        } else {
            self - other
        }
    }
    fn cbrt(self) -> Self {
        let c = self.val.cbrt();
        self.unary(c, 1.0 / (3.0 * c * c))
    }
    fn hypot(self, other: Self) -> Self {
        (self * self + other * other).sqrt()
    }
    fn sin(self) -> Self {
        self.unary(self.val.sin(), self.val.cos())
    }
    fn cos(self) -> Self {
        self.unary(self.val.cos(), -self.val.sin())
    }
    fn tan(self) -> Self {
        let t = self.val.tan();
        self.unary(t, 1.0 + t * t)
    }
    fn asin(self) -> Self {
        self.unary(self.val.asin(), 1.0 / (1.0 - self.val * self.val).sqrt())
    }
    fn acos(self) -> Self {
        self.unary(self.val.acos(), -1.0 / (1.0 - self.val * self.val).sqrt())
    }
    fn atan(self) -> Self {
        self.unary(self.val.atan(), 1.0 / (1.0 + self.val * self.val))
    }
    fn atan2(self, other: Self) -> Self {
        let r2 = self.val * self.val + other.val * other.val;
        self.binary(other, self.val.atan2(other.val), other.val / r2, -self.val / r2)
    }
    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }
    fn exp_m1(self) -> Self {
        self.unary(self.val.exp_m1(), self.val.exp())
    }
    fn ln_1p(self) -> Self {
        self.unary(self.val.ln_1p(), 1.0 / (1.0 + self.val))
    }
    fn sinh(self) -> Self {
        self.unary(self.val.sinh(), self.val.cosh())
    }
    fn cosh(self) -> Self {
        self.unary(self.val.cosh(), self.val.sinh())
    }
    fn tanh(self) -> Self {
        let t = self.val.tanh();
        self.unary(t, 1.0 - t * t)
    }
    fn asinh(self) -> Self {
        self.unary(self.val.asinh(), 1.0 / (self.val * self.val + 1.0).sqrt())
    }
    fn acosh(self) -> Self {
        self.unary(self.val.acosh(), 1.0 / (self.val * self.val - 1.0).sqrt())
    }
    fn atanh(self) -> Self {
        self.unary(self.val.atanh(), 1.0 / (1.0 - self.val * self.val))
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        self.val.integer_decode()
    }
}
