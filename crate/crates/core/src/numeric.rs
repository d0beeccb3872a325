//! Scalar abstraction shared by the float and exact-rational code paths,
//! plus log-domain helpers for non-negative quantities.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, ToPrimitive};

use crate::error::{CascadeError, Result};

/// Field element usable by the tree, reduction and enumeration code.
pub trait Scalar: Num + Clone + PartialOrd + Debug + Send + Sync {
    fn to_f64(&self) -> f64;

    /// Equality up to `rel` relative tolerance for floats; exact for rationals.
    fn close_to(&self, other: &Self, rel: f64) -> bool;

    fn powi(&self, exp: usize) -> Self {
        let mut acc = Self::one();
        for _ in 0..exp {
            acc = acc * self.clone();
        }
        acc
    }
}

impl Scalar for f64 {
    fn to_f64(&self) -> f64 {
        *self
    }

    fn close_to(&self, other: &Self, rel: f64) -> bool {
        let scale = self.abs().max(other.abs()).max(1.0);
        (self - other).abs() <= rel * scale
    }

    fn powi(&self, exp: usize) -> Self {
        f64::powi(*self, exp as i32)
    }
}

impl Scalar for BigRational {
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn close_to(&self, other: &Self, _rel: f64) -> bool {
        self == other
    }
}

/// Exact rational from a numerator/denominator pair.
pub fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// A finite discrete law over a generic scalar. No normalization of the mean
/// is imposed; probabilities must sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLaw<T> {
    atoms: Vec<T>,
    probs: Vec<T>,
}

pub type RationalLaw = DiscreteLaw<BigRational>;

impl<T: Scalar> DiscreteLaw<T> {
    pub fn new(atoms: Vec<T>, probs: Vec<T>) -> Result<Self> {
        if atoms.len() != probs.len() || atoms.is_empty() {
            return Err(CascadeError::InvalidDistribution(format!(
                "{} atoms vs {} probabilities",
                atoms.len(),
                probs.len()
            )));
        }
        if atoms.iter().any(|a| *a < T::zero()) {
            return Err(CascadeError::InvalidDistribution(
                "atoms must be non-negative".into(),
            ));
        }
        if probs.iter().any(|p| *p <= T::zero() || *p > T::one()) {
            return Err(CascadeError::InvalidDistribution(
                "probabilities must lie in (0, 1]".into(),
            ));
        }
        let total = probs.iter().cloned().fold(T::zero(), |a, b| a + b);
        if !total.close_to(&T::one(), 1e-12) {
            return Err(CascadeError::InvalidDistribution(format!(
                "probabilities sum to {}",
                total.to_f64()
            )));
        }
        Ok(DiscreteLaw { atoms, probs })
    }

    pub fn atoms(&self) -> &[T] {
        &self.atoms
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// E[X^k] for integer k.
    pub fn int_moment(&self, k: usize) -> T {
        self.atoms
            .iter()
            .zip(&self.probs)
            .fold(T::zero(), |acc, (a, p)| acc + p.clone() * a.powi(k))
    }

    pub fn mean(&self) -> T {
        self.int_moment(1)
    }

    pub fn variance(&self) -> T {
        let m = self.mean();
        let v = self.int_moment(2) - m.clone() * m;
        if v < T::zero() {
            T::zero()
        } else {
            v
        }
    }

    /// Law of X² (atoms squared, probabilities unchanged).
    pub fn squared(&self) -> Self {
        DiscreteLaw {
            atoms: self.atoms.iter().map(|a| a.clone() * a.clone()).collect(),
            probs: self.probs.clone(),
        }
    }

    pub fn to_f64_law(&self) -> DiscreteLaw<f64> {
        DiscreteLaw {
            atoms: self.atoms.iter().map(Scalar::to_f64).collect(),
            probs: self.probs.iter().map(Scalar::to_f64).collect(),
        }
    }
}

impl RationalLaw {
    /// Builds an exact law from `(numerator, denominator)` pairs.
    pub fn from_pairs(atoms: &[(i64, i64)], probs: &[(i64, i64)]) -> Result<Self> {
        if atoms.iter().chain(probs).any(|&(_, d)| d == 0) {
            return Err(CascadeError::InvalidDistribution("zero denominator".into()));
        }
        DiscreteLaw::new(
            atoms.iter().map(|&(n, d)| ratio(n, d)).collect(),
            probs.iter().map(|&(n, d)| ratio(n, d)).collect(),
        )
    }
}

/// log(e^a + e^b), tolerating -inf operands.
#[inline]
pub fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a >= b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// log Σ e^{x_i}; -inf for an empty or all -inf input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Natural log of a non-negative value, mapping 0 to -inf.
#[inline]
pub fn ln_nonneg(x: f64) -> f64 {
    if x == 0.0 {
        f64::NEG_INFINITY
    } else {
        x.ln()
    }
}

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Non-negative float with an unbounded binary exponent: `m · 2^e` with
/// `m ∈ [0.5, 1)` or `m = 0`. Products and sums keep full `f64` relative
/// precision far outside the `f64` range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtFloat {
    m: f64,
    e: i64,
}

/// `2^k` for `-1022 ≤ k ≤ 1023`, built from its bit pattern.
#[inline]
fn pow2(k: i64) -> f64 {
    f64::from_bits(((1023 + k) as u64) << 52)
}

impl ExtFloat {
    pub const ZERO: ExtFloat = ExtFloat { m: 0.0, e: 0 };
    pub const ONE: ExtFloat = ExtFloat { m: 0.5, e: 1 };

    fn normalized(m: f64, e: i64) -> ExtFloat {
        if m == 0.0 {
            return ExtFloat::ZERO;
        }
        debug_assert!(m.is_finite() && m > 0.0);
        let (m, e) = if m < f64::MIN_POSITIVE { (m * pow2(64), e - 64) } else { (m, e) };
        let raw = ((m.to_bits() >> 52) & 0x7ff) as i64;
        // Exponent that brings m into [0.5, 1).
        let shift = raw - 1022;
        ExtFloat {
            m: f64::from_bits((m.to_bits() & !(0x7ff << 52)) | (1022u64 << 52)),
            e: e + shift,
        }
    }

    pub fn from_f64(x: f64) -> ExtFloat {
        assert!(x >= 0.0 && x.is_finite(), "ExtFloat needs a finite non-negative value");
        ExtFloat::normalized(x, 0)
    }

    /// From a natural log; `-inf` maps to zero.
    pub fn from_ln(l: f64) -> ExtFloat {
        if l == f64::NEG_INFINITY {
            return ExtFloat::ZERO;
        }
        let t = l / std::f64::consts::LN_2;
        let e = t.floor();
        ExtFloat::normalized(((t - e) * std::f64::consts::LN_2).exp(), e as i64)
    }

    pub fn is_zero(&self) -> bool {
        self.m == 0.0
    }

    pub fn ln(&self) -> f64 {
        if self.m == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.m.ln() + self.e as f64 * std::f64::consts::LN_2
        }
    }

    /// Nearest `f64`, saturating to `inf` or `0`.
    pub fn to_f64(&self) -> f64 {
        if self.m == 0.0 {
            0.0
        } else if self.e > 1024 {
            f64::INFINITY
        } else if self.e < -1100 {
            0.0
        } else {
            let half = self.e / 2;
            self.m * pow2(half) * pow2(self.e - half)
        }
    }

    pub fn mul(self, o: ExtFloat) -> ExtFloat {
        if self.m == 0.0 || o.m == 0.0 {
            return ExtFloat::ZERO;
        }
        ExtFloat::normalized(self.m * o.m, self.e + o.e)
    }

    pub fn recip(self) -> ExtFloat {
        assert!(self.m != 0.0, "reciprocal of zero");
        ExtFloat::normalized(1.0 / self.m, -self.e)
    }

    pub fn add(self, o: ExtFloat) -> ExtFloat {
        let (big, small) = if self.e >= o.e { (self, o) } else { (o, self) };
        if small.m == 0.0 {
            return big;
        }
        if big.m == 0.0 {
            return small;
        }
        let gap = big.e - small.e;
        if gap > 60 {
            return big;
        }
        ExtFloat::normalized(big.m + small.m * pow2(-gap), big.e)
    }

    pub fn powi(self, mut k: u32) -> ExtFloat {
        let mut acc = ExtFloat::ONE;
        let mut base = self;
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.mul(base);
            }
            k >>= 1;
            base = base.mul(base);
        }
        acc
    }
}

/// ln k! for k = 0..=n.
pub fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}
