//! Scalar types for the dynamic programs: `f64`, exact rationals, and dyadic
//! rationals `m / 2^e` with an allocation-free small mantissa.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Serialize, Serializer};

use crate::rational::{self, Rational};

/// A reported number: exact when the computation was exact.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Exact(Rational),
    Float(f64),
}

impl Value {
    pub fn to_f64(&self) -> f64 {
        match self {
            Value::Exact(r) => rational::to_f64(r),
            Value::Float(x) => *x,
        }
    }

    pub fn exact(&self) -> Option<&Rational> {
        match self {
            Value::Exact(r) => Some(r),
            Value::Float(_) => None,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Value::Exact(_))
    }

    /// `self / other`; exact when both are.
    pub fn ratio(&self, other: &Value) -> Option<Value> {
        match (self, other) {
            (Value::Exact(a), Value::Exact(b)) => (!b.is_zero()).then(|| Value::Exact(a / b)),
            _ => {
                let b = other.to_f64();
                (b != 0.0).then(|| Value::Float(self.to_f64() / b))
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Exact(r) => f.write_str(&rational::format(r)),
            Value::Float(x) => write!(f, "{x}"),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Exact(r) => s.serialize_str(&rational::format(r)),
            Value::Float(x) => s.serialize_f64(*x),
        }
    }
}

/// Arithmetic needed by the Markov dynamic program.
pub trait Weight: Clone + Send + Sync + fmt::Debug + 'static {
    fn nil() -> Self;
    fn unit() -> Self;
    fn is_nil(&self) -> bool;
    fn plus(&self, o: &Self) -> Self;
    fn minus(&self, o: &Self) -> Self;
    fn times(&self, o: &Self) -> Self;
    /// Panics if `r` is not representable (non-dyadic input to [`Dyadic`]).
    fn from_rational(r: &Rational) -> Self;
    fn from_int(n: i64) -> Self;
    /// `self / 2^e`; exact types require integral `e`.
    fn div_pow2(&self, e: f64) -> Self;
    fn to_value(&self) -> Value;
    fn to_f64(&self) -> f64;
    fn cmp_value(&self, o: &Self) -> Ordering;

    fn plus_assign(&mut self, o: &Self) {
        *self = self.plus(o);
    }
}

impl Weight for f64 {
    fn nil() -> Self {
        0.0
    }
    fn unit() -> Self {
        1.0
    }
    fn is_nil(&self) -> bool {
        *self == 0.0
    }
    fn plus(&self, o: &Self) -> Self {
        self + o
    }
    fn minus(&self, o: &Self) -> Self {
        self - o
    }
    fn times(&self, o: &Self) -> Self {
        self * o
    }
    fn from_rational(r: &Rational) -> Self {
        rational::to_f64(r)
    }
    fn from_int(n: i64) -> Self {
        n as f64
    }
    fn div_pow2(&self, e: f64) -> Self {
        self / e.exp2()
    }
    fn to_value(&self) -> Value {
        Value::Float(*self)
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn cmp_value(&self, o: &Self) -> Ordering {
        self.partial_cmp(o).unwrap_or(Ordering::Equal)
    }
    fn plus_assign(&mut self, o: &Self) {
        *self += o;
    }
}

fn integral_exponent(e: f64) -> u64 {
    assert!(e >= 0.0 && e.fract() == 0.0, "exact scaling needs a non-negative integer exponent, got {e}");
    e as u64
}

impl Weight for Rational {
    fn nil() -> Self {
        Zero::zero()
    }
    fn unit() -> Self {
        One::one()
    }
    fn is_nil(&self) -> bool {
        Zero::is_zero(self)
    }
    fn plus(&self, o: &Self) -> Self {
        self + o
    }
    fn minus(&self, o: &Self) -> Self {
        self - o
    }
    fn times(&self, o: &Self) -> Self {
        self * o
    }
    fn from_rational(r: &Rational) -> Self {
        r.clone()
    }
    fn from_int(n: i64) -> Self {
        rational::int(n)
    }
    fn div_pow2(&self, e: f64) -> Self {
        self * rational::pow2(-(integral_exponent(e) as i64))
    }
    fn to_value(&self) -> Value {
        Value::Exact(self.clone())
    }
    fn to_f64(&self) -> f64 {
        rational::to_f64(self)
    }
    fn cmp_value(&self, o: &Self) -> Ordering {
        self.cmp(o)
    }
    fn plus_assign(&mut self, o: &Self) {
        *self += o;
    }
}

#[derive(Clone, Debug)]
enum Mant {
    Small(i128),
    Big(BigInt),
}

impl Mant {
    fn big(&self) -> BigInt {
        match self {
            Mant::Small(v) => BigInt::from(*v),
            Mant::Big(b) => b.clone(),
        }
    }

    fn from_big(b: BigInt) -> Mant {
        match b.to_i128() {
            Some(v) => Mant::Small(v),
            None => Mant::Big(b),
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            Mant::Small(v) => *v == 0,
            Mant::Big(b) => b.is_zero(),
        }
    }

    fn shl(&self, sh: u32) -> Mant {
        if sh == 0 {
            return self.clone();
        }
        match self {
            Mant::Small(0) => Mant::Small(0),
            Mant::Small(v) if sh < 126 && v.unsigned_abs().leading_zeros() > sh + 1 => Mant::Small(v << sh),
            other => Mant::Big(other.big() << sh as usize),
        }
    }

    fn add(&self, o: &Mant) -> Mant {
        if let (Mant::Small(a), Mant::Small(b)) = (self, o) {
            if let Some(s) = a.checked_add(*b) {
                return Mant::Small(s);
            }
        }
        Mant::from_big(self.big() + o.big())
    }

    fn neg(&self) -> Mant {
        match self {
            Mant::Small(v) if *v != i128::MIN => Mant::Small(-v),
            other => Mant::from_big(-other.big()),
        }
    }

    fn mul(&self, o: &Mant) -> Mant {
        if let (Mant::Small(a), Mant::Small(b)) = (self, o) {
            if let Some(s) = a.checked_mul(*b) {
                return Mant::Small(s);
            }
        }
        Mant::from_big(self.big() * o.big())
    }

    fn trailing_zeros(&self) -> u32 {
        match self {
            Mant::Small(v) => v.trailing_zeros(),
            Mant::Big(b) => b.trailing_zeros().unwrap_or(0) as u32,
        }
    }

    fn shr_exact(&self, sh: u32) -> Mant {
        match self {
            Mant::Small(v) => Mant::Small(v >> sh),
            Mant::Big(b) => Mant::from_big(b >> sh as usize),
        }
    }

    fn signum(&self) -> i32 {
        match self {
            Mant::Small(v) => v.signum() as i32,
            Mant::Big(b) => {
                if b.is_positive() {
                    1
                } else if b.is_negative() {
                    -1
                } else {
                    0
                }
            }
        }
    }
}

/// `mant / 2^exp`, kept with `mant` odd or `exp = 0`.
#[derive(Clone, Debug)]
pub struct Dyadic {
    mant: Mant,
    exp: u32,
}

impl Dyadic {
    fn normalized(mant: Mant, exp: u32) -> Self {
        if mant.is_zero() {
            return Dyadic { mant: Mant::Small(0), exp: 0 };
        }
        let tz = mant.trailing_zeros().min(exp);
        if tz == 0 {
            Dyadic { mant, exp }
        } else {
            Dyadic { mant: mant.shr_exact(tz), exp: exp - tz }
        }
    }

    fn aligned(&self, o: &Dyadic) -> (Mant, Mant, u32) {
        let e = self.exp.max(o.exp);
        (self.mant.shl(e - self.exp), o.mant.shl(e - o.exp), e)
    }

    pub fn is_representable(r: &Rational) -> bool {
        let d = r.denom();
        d.is_positive() && (d & (d - BigInt::one())).is_zero()
    }

    pub fn to_rational(&self) -> Rational {
        Rational::new(self.mant.big(), BigInt::one() << self.exp as usize)
    }
}

impl PartialEq for Dyadic {
    fn eq(&self, o: &Self) -> bool {
        self.cmp_value(o) == Ordering::Equal
    }
}

impl Weight for Dyadic {
    fn nil() -> Self {
        Dyadic { mant: Mant::Small(0), exp: 0 }
    }
    fn unit() -> Self {
        Dyadic { mant: Mant::Small(1), exp: 0 }
    }
    fn is_nil(&self) -> bool {
        self.mant.is_zero()
    }
    fn plus(&self, o: &Self) -> Self {
        if o.is_nil() {
            return self.clone();
        }
        if self.is_nil() {
            return o.clone();
        }
        let (a, b, e) = self.aligned(o);
        Dyadic::normalized(a.add(&b), e)
    }
    fn minus(&self, o: &Self) -> Self {
        let neg = Dyadic { mant: o.mant.neg(), exp: o.exp };
        self.plus(&neg)
    }
    fn times(&self, o: &Self) -> Self {
        if self.is_nil() || o.is_nil() {
            return Self::nil();
        }
        // both mantissas odd (or exp 0), so the product needs no normalization
        // unless an exponent was 0
        Dyadic::normalized(self.mant.mul(&o.mant), self.exp + o.exp)
    }
    fn from_rational(r: &Rational) -> Self {
        assert!(Dyadic::is_representable(r), "{} is not dyadic", rational::format(r));
        let exp = (r.denom().bits() - 1) as u32;
        Dyadic::normalized(Mant::from_big(r.numer().clone()), exp)
    }
    fn from_int(n: i64) -> Self {
        Dyadic::normalized(Mant::Small(n as i128), 0)
    }
    fn div_pow2(&self, e: f64) -> Self {
        let e = integral_exponent(e) as u32;
        Dyadic::normalized(self.mant.clone(), self.exp + e)
    }
    fn to_value(&self) -> Value {
        Value::Exact(self.to_rational())
    }
    fn to_f64(&self) -> f64 {
        match &self.mant {
            Mant::Small(v) if self.exp < 1000 => (*v as f64) * (-(self.exp as f64)).exp2(),
            _ => rational::to_f64(&self.to_rational()),
        }
    }
    fn cmp_value(&self, o: &Self) -> Ordering {
        let (a, b, _) = self.aligned(o);
        a.add(&b.neg()).signum().cmp(&0)
    }
}
