//! Exact arithmetic over `Z[1/p]`.
//!
//! Every element is stored as `mantissa / p^exp` with `exp >= 0`; `p` may
//! divide the mantissa only when `exp == 0`, so integers are literally
//! integers. Both the archimedean and the p-adic absolute value are exact:
//! the former is a rational, the latter a power of `p` (or zero).
//!
//! Points of `Z_p^n` (or `Q_p^n`) are carried as [`PadicPoint`]s, i.e. a
//! `Z[1/p]` approximant together with an absolute precision. Anything computed
//! from a truncated point comes back as a [`CertifiedNorm`].

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A rational prime, checked at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Prime(u32);

impl Prime {
    pub fn new(p: u32) -> Result<Self> {
        if p < 2 || (2..p).take_while(|d| d * d <= p).any(|d| p % d == 0) {
            return Err(Error::NotPrime(p));
        }
        Ok(Prime(p))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn big(self) -> BigInt {
        BigInt::from(self.0)
    }

    /// `p^k` for `k >= 0`.
    pub fn pow(self, k: u32) -> BigInt {
        num_traits::pow(self.big(), k as usize)
    }

    /// `p^k` as a rational, any sign of `k`.
    pub fn rpow(self, k: i64) -> BigRational {
        let m = self.pow(k.unsigned_abs() as u32);
        if k >= 0 {
            BigRational::from_integer(m)
        } else {
            BigRational::new(BigInt::one(), m)
        }
    }

    /// p-adic valuation of a nonzero integer.
    pub fn valuation(self, n: &BigInt) -> Option<u64> {
        if n.is_zero() {
            return None;
        }
        if self.0 == 2 {
            return n.trailing_zeros();
        }
        let p = self.big();
        let mut v = 0;
        let mut m = n.clone();
        loop {
            let (q, r) = m.div_rem(&p);
            if !r.is_zero() {
                return Some(v);
            }
            v += 1;
            m = q;
        }
    }

    /// Split a nonzero integer as `p^v * u` with `p ∤ u`.
    pub fn split(self, n: &BigInt) -> (u64, BigInt) {
        match self.valuation(n) {
            None => (0, BigInt::zero()),
            Some(v) => (v, n / self.pow(v as u32)),
        }
    }

    /// Valuation of a nonzero rational.
    pub fn valuation_rational(self, x: &BigRational) -> Option<i64> {
        let vn = self.valuation(x.numer())? as i64;
        let vd = self.valuation(x.denom()).unwrap_or(0) as i64;
        Some(vn - vd)
    }
}

impl TryFrom<u32> for Prime {
    type Error = Error;
    fn try_from(p: u32) -> Result<Self> {
        Prime::new(p)
    }
}

impl From<Prime> for u32 {
    fn from(p: Prime) -> u32 {
        p.0
    }
}

impl fmt::Display for Prime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A p-adic absolute value: zero or `p^k`. Ordered as real numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PNorm(Option<i64>);

impl PNorm {
    pub const ZERO: PNorm = PNorm(None);
    pub const ONE: PNorm = PNorm(Some(0));

    pub fn pow(k: i64) -> Self {
        PNorm(Some(k))
    }

    pub fn exponent(self) -> Option<i64> {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0.is_none()
    }

    /// Multiply by `p^k`.
    pub fn shift(self, k: i64) -> Self {
        PNorm(self.0.map(|e| e + k))
    }

    pub fn mul(self, other: PNorm) -> Self {
        match (self.0, other.0) {
            (Some(a), Some(b)) => PNorm(Some(a + b)),
            _ => PNorm::ZERO,
        }
    }

    pub fn to_rational(self, p: Prime) -> BigRational {
        match self.0 {
            None => BigRational::zero(),
            Some(k) => p.rpow(k),
        }
    }
}

impl fmt::Display for PNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            None => write!(f, "0"),
            Some(k) => write!(f, "p^{k}"),
        }
    }
}

/// An exact element of `Z[1/p]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PExact {
    p: Prime,
    mantissa: BigInt,
    exp: u32,
}

impl PExact {
    /// Canonical form of `mantissa / p^e`; negative `e` multiplies by `p^{-e}`.
    pub fn canonicalize(p: Prime, mantissa: BigInt, e: i64) -> Self {
        if mantissa.is_zero() {
            return PExact {
                p,
                mantissa,
                exp: 0,
            };
        }
        if e <= 0 {
            let m = mantissa * p.pow((-e) as u32);
            return PExact {
                p,
                mantissa: m,
                exp: 0,
            };
        }
        let (v, u) = p.split(&mantissa);
        let v = v as i64;
        if v >= e {
            PExact {
                p,
                mantissa: u * p.pow((v - e) as u32),
                exp: 0,
            }
        } else {
            PExact {
                p,
                mantissa: u,
                exp: (e - v) as u32,
            }
        }
    }

    pub fn zero(p: Prime) -> Self {
        PExact {
            p,
            mantissa: BigInt::zero(),
            exp: 0,
        }
    }

    pub fn one(p: Prime) -> Self {
        PExact::from_int(p, 1)
    }

    pub fn from_int(p: Prime, n: impl Into<BigInt>) -> Self {
        PExact {
            p,
            mantissa: n.into(),
            exp: 0,
        }
    }

    /// `p^k` for any integer `k`.
    pub fn p_power(p: Prime, k: i64) -> Self {
        PExact::canonicalize(p, BigInt::one(), -k)
    }

    /// The element equal to `x`, if its denominator is a power of `p`.
    pub fn from_rational(p: Prime, x: &BigRational) -> Option<Self> {
        let (v, u) = p.split(x.denom());
        if !u.is_one() {
            return None;
        }
        Some(PExact::canonicalize(p, x.numer().clone(), v as i64))
    }

    pub fn prime(&self) -> Prime {
        self.p
    }

    pub fn mantissa(&self) -> &BigInt {
        &self.mantissa
    }

    pub fn exp(&self) -> u32 {
        self.exp
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa.is_zero()
    }

    pub fn is_integer(&self) -> bool {
        self.exp == 0
    }

    /// `v_p(x)`, `None` for zero.
    pub fn valuation(&self) -> Option<i64> {
        if self.exp > 0 {
            return if self.is_zero() {
                None
            } else {
                Some(-(self.exp as i64))
            };
        }
        self.p.valuation(&self.mantissa).map(|v| v as i64)
    }

    /// `|x|_p`.
    pub fn norm_p(&self) -> PNorm {
        PNorm(self.valuation().map(|v| -v))
    }

    /// `|x|_∞`.
    pub fn norm_inf(&self) -> BigRational {
        BigRational::new(self.mantissa.abs(), self.p.pow(self.exp))
    }

    pub fn to_rational(&self) -> BigRational {
        BigRational::new(self.mantissa.clone(), self.p.pow(self.exp))
    }

    /// Multiply by `p^k`.
    pub fn mul_p_pow(&self, k: i64) -> Self {
        PExact::canonicalize(self.p, self.mantissa.clone(), self.exp as i64 - k)
    }

    pub fn signum(&self) -> i32 {
        match self.mantissa.sign() {
            Sign::Minus => -1,
            Sign::NoSign => 0,
            Sign::Plus => 1,
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.to_rational().to_f64().unwrap_or(f64::NAN)
    }

    fn check(&self, other: &PExact) {
        assert_eq!(self.p, other.p, "PExact operands over different primes");
    }
}

impl PartialOrd for PExact {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PExact {
    fn cmp(&self, other: &Self) -> Ordering {
        if self.exp == other.exp {
            return self.mantissa.cmp(&other.mantissa);
        }
        self.to_rational().cmp(&other.to_rational())
    }
}

impl fmt::Display for PExact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.exp == 0 {
            write!(f, "{}", self.mantissa)
        } else {
            write!(f, "{}p-{}", self.mantissa, self.exp)
        }
    }
}

impl<'a> Add<&'a PExact> for &'a PExact {
    type Output = PExact;
    fn add(self, rhs: &PExact) -> PExact {
        self.check(rhs);
        let e = self.exp.max(rhs.exp);
        let a = &self.mantissa * self.p.pow(e - self.exp);
        let b = &rhs.mantissa * self.p.pow(e - rhs.exp);
        PExact::canonicalize(self.p, a + b, e as i64)
    }
}

impl<'a> Sub<&'a PExact> for &'a PExact {
    type Output = PExact;
    fn sub(self, rhs: &PExact) -> PExact {
        self + &(-rhs)
    }
}

impl<'a> Mul<&'a PExact> for &'a PExact {
    type Output = PExact;
    fn mul(self, rhs: &PExact) -> PExact {
        self.check(rhs);
        PExact::canonicalize(
            self.p,
            &self.mantissa * &rhs.mantissa,
            self.exp as i64 + rhs.exp as i64,
        )
    }
}

impl Neg for &PExact {
    type Output = PExact;
    fn neg(self) -> PExact {
        PExact {
            p: self.p,
            mantissa: -&self.mantissa,
            exp: self.exp,
        }
    }
}

impl Add for PExact {
    type Output = PExact;
    fn add(self, rhs: PExact) -> PExact {
        &self + &rhs
    }
}

impl Sub for PExact {
    type Output = PExact;
    fn sub(self, rhs: PExact) -> PExact {
        &self - &rhs
    }
}

impl Mul for PExact {
    type Output = PExact;
    fn mul(self, rhs: PExact) -> PExact {
        &self * &rhs
    }
}

impl Neg for PExact {
    type Output = PExact;
    fn neg(self) -> PExact {
        -&self
    }
}

/// `|x|_∞`.
pub fn norm_inf(x: &PExact) -> BigRational {
    x.norm_inf()
}

/// `|x|_p`.
pub fn norm_p(x: &PExact) -> PNorm {
    x.norm_p()
}

/// How much of a p-adic point is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    /// The approximant is the point itself.
    Exact,
    /// `|y_i - approximant_i|_p <= p^{-N}`.
    Absolute(u32),
}

impl Precision {
    pub fn digits(self) -> Option<u32> {
        match self {
            Precision::Exact => None,
            Precision::Absolute(n) => Some(n),
        }
    }
}

/// A point of `Q_p^n` known through a `Z[1/p]` approximant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PadicPoint {
    p: Prime,
    coords: Vec<PExact>,
    precision: Precision,
}

impl PadicPoint {
    /// Approximant at absolute precision `n_digits`; digits at `p^N` and above
    /// are discarded, so each coordinate lands in `[0, p^N)`.
    pub fn new(p: Prime, coords: Vec<PExact>, n_digits: u32) -> Result<Self> {
        if n_digits == 0 {
            return Err(Error::InvalidInput("precision must be positive".into()));
        }
        let mut out = Vec::with_capacity(coords.len());
        for c in coords {
            if c.p != p {
                return Err(Error::PrimeMismatch(p.get(), c.p.get()));
            }
            let modulus = p.pow(n_digits + c.exp);
            let m = c.mantissa.mod_floor(&modulus);
            out.push(PExact::canonicalize(p, m, c.exp as i64));
        }
        Ok(PadicPoint {
            p,
            coords: out,
            precision: Precision::Absolute(n_digits),
        })
    }

    pub fn exact(p: Prime, coords: Vec<PExact>) -> Result<Self> {
        if let Some(c) = coords.iter().find(|c| c.p != p) {
            return Err(Error::PrimeMismatch(p.get(), c.p.get()));
        }
        Ok(PadicPoint {
            p,
            coords,
            precision: Precision::Exact,
        })
    }

    pub fn zero(p: Prime, n: usize) -> Self {
        PadicPoint {
            p,
            coords: vec![PExact::zero(p); n],
            precision: Precision::Exact,
        }
    }

    /// Integer point from p-adic digits (least significant first), one digit
    /// string per coordinate; precision is the common digit count.
    pub fn from_digits(p: Prime, digits: &[Vec<u32>]) -> Result<Self> {
        let n_digits = digits.iter().map(Vec::len).max().unwrap_or(0) as u32;
        let mut coords = Vec::with_capacity(digits.len());
        for ds in digits {
            let mut acc = BigInt::zero();
            for &d in ds.iter().rev() {
                if d >= p.get() {
                    return Err(Error::InvalidInput(format!("digit {d} >= p = {p}")));
                }
                acc = acc * p.big() + BigInt::from(d);
            }
            coords.push(PExact::from_int(p, acc));
        }
        PadicPoint::new(p, coords, n_digits.max(1))
    }

    /// Haar-random point of `Z_p^n` at precision `N`: independent uniform digits.
    pub fn haar<R: Rng + ?Sized>(p: Prime, n: usize, n_digits: u32, rng: &mut R) -> Self {
        let coords = (0..n)
            .map(|_| PExact::from_int(p, haar_integer(p, n_digits, rng)))
            .collect();
        PadicPoint {
            p,
            coords,
            precision: Precision::Absolute(n_digits),
        }
    }

    pub fn prime(&self) -> Prime {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[PExact] {
        &self.coords
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn is_exact(&self) -> bool {
        self.precision == Precision::Exact
    }

    /// Largest denominator exponent of the approximant; `0` means `y ∈ Z_p^n`.
    pub fn denominator_exp(&self) -> u32 {
        self.coords.iter().map(|c| c.exp).max().unwrap_or(0)
    }

    /// Reduce to a coarser precision.
    pub fn truncate(&self, n_digits: u32) -> Result<Self> {
        match self.precision {
            Precision::Absolute(n) if n_digits > n => Err(Error::PrecisionExhausted {
                needed: n_digits,
                available: n,
            }),
            _ => PadicPoint::new(self.p, self.coords.clone(), n_digits),
        }
    }
}

/// Uniform integer in `[0, p^N)` built digit by digit.
pub fn haar_integer<R: Rng + ?Sized>(p: Prime, n_digits: u32, rng: &mut R) -> BigInt {
    let mut acc = BigInt::zero();
    let pb = p.big();
    for _ in 0..n_digits {
        acc = acc * &pb + BigInt::from(rng.gen_range(0..p.get()));
    }
    acc
}

/// A p-adic absolute value computed from truncated data.
///
/// When `certified` is false the true value is only known to be `<= bound`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertifiedNorm {
    pub value: PNorm,
    pub certified: bool,
    pub bound: PNorm,
}

impl CertifiedNorm {
    pub fn exact(value: PNorm) -> Self {
        CertifiedNorm {
            value,
            certified: true,
            bound: value,
        }
    }

    /// Norm of `computed`, whose distance to the true value is at most
    /// `p^{err}` (`None`: no error).
    pub fn from_error(computed: &PExact, err: Option<i64>) -> Self {
        let value = computed.norm_p();
        match err {
            None => CertifiedNorm::exact(value),
            Some(k) => {
                let bound = PNorm::pow(k);
                if value > bound {
                    CertifiedNorm::exact(value)
                } else {
                    CertifiedNorm {
                        value,
                        certified: false,
                        bound,
                    }
                }
            }
        }
    }

    /// Smallest value known to dominate the true norm.
    pub fn upper(&self) -> PNorm {
        if self.certified {
            self.value
        } else {
            self.bound
        }
    }

    /// Multiply by `p^k`.
    pub fn shift(self, k: i64) -> Self {
        CertifiedNorm {
            value: self.value.shift(k),
            certified: self.certified,
            bound: self.bound.shift(k),
        }
    }

    /// Maximum of several certified norms, certified when the largest
    /// certified entry dominates every uncertified bound.
    pub fn max_of(items: impl IntoIterator<Item = CertifiedNorm>) -> CertifiedNorm {
        let mut best_exact = PNorm::ZERO;
        let mut worst_bound = PNorm::ZERO;
        let mut any_uncertified = false;
        for it in items {
            if it.certified {
                best_exact = best_exact.max(it.value);
            } else {
                any_uncertified = true;
                worst_bound = worst_bound.max(it.bound);
            }
        }
        if !any_uncertified || best_exact >= worst_bound {
            CertifiedNorm::exact(best_exact)
        } else {
            CertifiedNorm {
                value: best_exact,
                certified: false,
                bound: worst_bound,
            }
        }
    }
}

/// `|q0 + q·y|_p` evaluated on the approximant of `y`.
///
/// Certified iff the computed valuation is strictly below `N - max_i e(q_i)`;
/// otherwise the result carries the bound `p^{-(N - shift)}`.
pub fn dot_plus(q: &[PExact], y: &PadicPoint, q0: &PExact) -> Result<CertifiedNorm> {
    if q.len() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: y.dim(),
            found: q.len(),
        });
    }
    let mut acc = q0.clone();
    for (qi, yi) in q.iter().zip(&y.coords) {
        acc = &acc + &(qi * yi);
    }
    Ok(CertifiedNorm::from_error(&acc, dot_error(q, y)))
}

/// Error exponent of `q·y` on the approximant: `max_i e(q_i) - N`.
pub(crate) fn dot_error(q: &[PExact], y: &PadicPoint) -> Option<i64> {
    match y.precision {
        Precision::Exact => None,
        Precision::Absolute(n) => {
            if q.iter().all(PExact::is_zero) {
                return None;
            }
            let shift = q
                .iter()
                .filter(|x| !x.is_zero())
                .map(|x| x.exp as i64)
                .max()
                .unwrap_or(0);
            Some(shift - n as i64)
        }
    }
}

/// `x^b ≤ p^a`-style comparison: is `x <= p^{r}` for rational `r`?
pub fn le_p_power(p: Prime, x: &BigRational, r: &BigRational) -> bool {
    cmp_p_power(p, x, r) != Ordering::Greater
}

/// Compare `x >= 0` against `p^r`.
pub fn cmp_p_power(p: Prime, x: &BigRational, r: &BigRational) -> Ordering {
    if x.is_zero() {
        return Ordering::Less;
    }
    // x vs p^{a/b}  <=>  x^b vs p^a   (b > 0)
    let b = r.denom().to_u32().expect("exponent denominator too large");
    let a = r.numer().to_i64().expect("exponent numerator too large");
    let lhs = num_traits::pow(x.clone(), b as usize);
    lhs.cmp(&p.rpow(a))
}

/// `floor(x)` for a non-negative rational, as a big integer.
pub fn floor_rational(x: &BigRational) -> BigInt {
    x.numer().div_floor(x.denom())
}

/// Largest integer `b >= 0` with `b^j <= x` (exact integer root of a rational).
pub fn floor_root(x: &BigRational, j: u32) -> BigInt {
    if x.is_zero() || x.is_negative() {
        return BigInt::zero();
    }
    // (b+1)^j > floor(x) forces (b+1)^j > x
    floor_rational(x).nth_root(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn px(p: u32, m: i64, e: i64) -> PExact {
        PExact::canonicalize(Prime::new(p).unwrap(), BigInt::from(m), e)
    }

    #[test]
    fn canonical_forms() {
        let a = px(3, 9, 1);
        assert_eq!((a.mantissa().clone(), a.exp()), (BigInt::from(3), 0));
        let b = px(3, 6, 2);
        assert_eq!((b.mantissa().clone(), b.exp()), (BigInt::from(2), 1));
        let c = px(5, 0, 7);
        assert_eq!((c.mantissa().clone(), c.exp()), (BigInt::from(0), 0));
        let d = px(2, 3, -2);
        assert_eq!((d.mantissa().clone(), d.exp()), (BigInt::from(12), 0));
    }

    #[test]
    fn place_norms() {
        let r = |a: i64, b: i64| BigRational::new(a.into(), b.into());
        assert_eq!(px(2, 3, 1).norm_inf(), r(3, 2));
        assert_eq!(px(2, 0, 0).norm_inf(), r(0, 1));
        assert_eq!(px(3, -7, 0).norm_inf(), r(7, 1));
        assert_eq!(px(3, 6, 0).norm_p(), PNorm::pow(-1));
        assert_eq!(px(3, 2, 2).norm_p(), PNorm::pow(2));
        assert_eq!(px(3, 0, 0).norm_p(), PNorm::ZERO);
    }

    #[test]
    fn rejects_composites() {
        assert!(Prime::new(1).is_err());
        assert!(Prime::new(9).is_err());
        assert!(Prime::new(7).is_ok());
    }

    #[test]
    fn dot_plus_examples() {
        let p3 = Prime::new(3).unwrap();
        let y = PadicPoint::new(p3, vec![PExact::zero(p3)], 10).unwrap();
        let r = dot_plus(&[px(3, 1, 0)], &y, &px(3, 9, 0)).unwrap();
        assert_eq!(r, CertifiedNorm::exact(PNorm::pow(-2)));

        let y = PadicPoint::new(p3, vec![PExact::one(p3)], 10).unwrap();
        let r = dot_plus(&[px(3, 1, 0)], &y, &px(3, -1, 0)).unwrap();
        assert!(!r.certified);
        assert_eq!(r.value, PNorm::ZERO);
        assert_eq!(r.bound, PNorm::pow(-10));

        // shift = max e(q_i) = 0 for q = (2), so the floor is 2^-8.
        let p2 = Prime::new(2).unwrap();
        let y = PadicPoint::new(p2, vec![px(2, 1, 1)], 8).unwrap();
        let r = dot_plus(&[px(2, 2, 0)], &y, &px(2, -1, 0)).unwrap();
        assert!(!r.certified);
        assert_eq!(r.value, PNorm::ZERO);
        assert_eq!(r.bound, PNorm::pow(-8));
        // exact rational check: 2 * (1/2) - 1 = 0
        let exact = BigRational::from_integer(2.into()) * BigRational::new(1.into(), 2.into())
            - BigRational::one();
        assert!(exact.is_zero());
    }

    #[test]
    fn dot_plus_dimension_mismatch() {
        let p = Prime::new(3).unwrap();
        let y = PadicPoint::zero(p, 2);
        assert!(matches!(
            dot_plus(&[PExact::one(p)], &y, &PExact::zero(p)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn approximants_drop_high_digits() {
        let p = Prime::new(3).unwrap();
        let y = PadicPoint::new(
            p,
            vec![PExact::from_int(p, 100), PExact::from_int(p, -1)],
            3,
        )
        .unwrap();
        assert_eq!(y.coords()[0], PExact::from_int(p, 100 % 27));
        assert_eq!(y.coords()[1], PExact::from_int(p, 26));
        for c in y.coords() {
            assert!(c.norm_p() <= PNorm::pow(3));
        }
    }

    #[test]
    fn floor_root_is_exact() {
        let x = BigRational::new(BigInt::from(28), BigInt::from(3));
        assert_eq!(floor_root(&x, 2), BigInt::from(3));
        assert_eq!(
            floor_root(&BigRational::from_integer(27.into()), 3),
            BigInt::from(3)
        );
        assert_eq!(
            floor_root(&BigRational::new(1.into(), 2.into()), 2),
            BigInt::from(0)
        );
    }

    fn arb_pexact(p: u32) -> impl Strategy<Value = PExact> {
        (-10_000i64..10_000, 0i64..6).prop_map(move |(m, e)| px(p, m, e))
    }

    proptest! {
        #[test]
        fn product_formula_inequality(x in arb_pexact(3)) {
            prop_assume!(!x.is_zero());
            let prod = x.norm_inf() * x.norm_p().to_rational(x.prime());
            prop_assert!(prod >= BigRational::one());
            // equality exactly for ±p^k
            let (_, rest) = x.prime().split(x.mantissa());
            prop_assert_eq!(prod == BigRational::one(), rest.abs().is_one());
        }

        #[test]
        fn ring_ops_match_rationals(a in arb_pexact(2), b in arb_pexact(2)) {
            prop_assert_eq!((&a + &b).to_rational(), a.to_rational() + b.to_rational());
            prop_assert_eq!((&a - &b).to_rational(), a.to_rational() - b.to_rational());
            prop_assert_eq!((&a * &b).to_rational(), a.to_rational() * b.to_rational());
            let s = &a * &b;
            prop_assert!(s.exp() == 0 || !s.mantissa().is_multiple_of(&BigInt::from(2)));
        }

        #[test]
        fn certification_is_sound(
            ys in proptest::collection::vec(0u64..3u64.pow(8), 2),
            ext in proptest::collection::vec(0u64..3u64.pow(6), 2),
            q in proptest::collection::vec(-50i64..50, 2),
            q0 in -2000i64..2000,
        ) {
            let p = Prime::new(3).unwrap();
            let n = 8;
            let y = PadicPoint::new(p, ys.iter().map(|&v| PExact::from_int(p, v)).collect(), n).unwrap();
            let hi: Vec<PExact> = ys.iter().zip(&ext)
                .map(|(&v, &e)| PExact::from_int(p, BigInt::from(v) + BigInt::from(e) * p.pow(n)))
                .collect();
            let y_hi = PadicPoint::new(p, hi, n + 6).unwrap();
            let qv: Vec<PExact> = q.iter().map(|&v| PExact::from_int(p, v)).collect();
            let lo = dot_plus(&qv, &y, &PExact::from_int(p, q0)).unwrap();
            let hi = dot_plus(&qv, &y_hi, &PExact::from_int(p, q0)).unwrap();
            if lo.certified {
                prop_assert_eq!(lo.value, hi.value);
            } else {
                prop_assert!(hi.upper() <= lo.bound);
            }
        }
    }
}
