//! Prime-field arithmetic over the Goldilocks prime `p = 2^64 - 2^32 + 1`,
//! signed-integer embedding, and the characteristic-polynomial evaluation used
//! by the permutation argument.
//!
//! Elements are always kept in canonical reduced form `0 <= v < p`.

use core::fmt;
use core::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::FieldError;

/// The default modulus, `2^64 - 2^32 + 1`.
pub const MODULUS: u64 = 0xFFFF_FFFF_0000_0001;

/// Largest magnitude accepted by [`embed_signed`].
pub const SIGNED_WINDOW: i128 = 1 << 62;

/// Field parameters. Arithmetic is compiled for [`MODULUS`]; the config carries
/// the modulus into file headers and is validated once at startup.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FieldConfig {
    pub modulus_p: u64,
    pub field_bits: u32,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            modulus_p: MODULUS,
            field_bits: 64,
        }
    }
}

impl FieldConfig {
    /// Validates a modulus. Only the compiled-in modulus is usable for
    /// arithmetic; anything else is rejected after the primality check so the
    /// caller gets the more specific error.
    pub fn new(modulus_p: u64) -> Result<Self, FieldError> {
        if !is_prime_u64(modulus_p) {
            return Err(FieldError::NotPrime(modulus_p));
        }
        if modulus_p != MODULUS {
            return Err(FieldError::UnsupportedModulus(modulus_p));
        }
        Ok(Self {
            modulus_p,
            field_bits: 64 - modulus_p.leading_zeros(),
        })
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let checked = Self::new(self.modulus_p)?;
        if checked.field_bits != self.field_bits {
            return Err(FieldError::UnsupportedModulus(self.modulus_p));
        }
        Ok(())
    }
}

/// Deterministic Miller-Rabin for 64-bit integers (the first twelve primes are
/// a complete witness set below 2^64).
pub fn is_prime_u64(n: u64) -> bool {
    const WITNESSES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &w in &WITNESSES {
        if n.is_multiple_of(w) {
            return n == w;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    'witness: for &a in &WITNESSES {
        let mut x = 1u64;
        let (mut base, mut e) = (a % n, d);
        while e > 0 {
            if e & 1 == 1 {
                x = mulmod(x, base);
            }
            base = mulmod(base, base);
            e >>= 1;
        }
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// An element of `F_p` in canonical form.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "u64", into = "u64"))]
pub struct FieldElement(u64);

impl FieldElement {
    pub const ZERO: Self = Self(0);
    pub const ONE: Self = Self(1);

    /// Reduces an arbitrary `u64`.
    pub const fn new(v: u64) -> Self {
        Self(if v >= MODULUS { v - MODULUS } else { v })
    }

    /// Accepts only canonical values; used by decoders.
    pub fn from_canonical(v: u64) -> Result<Self, FieldError> {
        if v < MODULUS {
            Ok(Self(v))
        } else {
            Err(FieldError::NonCanonical(v))
        }
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    fn reduce128(x: u128) -> Self {
        Self((x % MODULUS as u128) as u64)
    }

    pub fn pow(self, mut e: u64) -> Self {
        let mut base = self;
        let mut acc = Self::ONE;
        while e > 0 {
            if e & 1 == 1 {
                acc *= base;
            }
            base *= base;
            e >>= 1;
        }
        acc
    }

    pub fn inverse(self) -> Result<Self, FieldError> {
        if self.is_zero() {
            return Err(FieldError::DivisionByZero);
        }
        Ok(self.pow(MODULUS - 2))
    }

    /// 8-byte little-endian canonical encoding.
    pub fn to_le_bytes(self) -> [u8; 8] {
        self.0.to_le_bytes()
    }

    pub fn from_le_bytes(bytes: [u8; 8]) -> Result<Self, FieldError> {
        Self::from_canonical(u64::from_le_bytes(bytes))
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F({})", self.0)
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl TryFrom<u64> for FieldElement {
    type Error = FieldError;
    fn try_from(v: u64) -> Result<Self, FieldError> {
        Self::from_canonical(v)
    }
}

impl From<FieldElement> for u64 {
    fn from(f: FieldElement) -> u64 {
        f.0
    }
}

impl Add for FieldElement {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let (sum, carry) = self.0.overflowing_add(rhs.0);
        if carry || sum >= MODULUS {
            // 2^64 = 2^32 - 1 (mod p)
            Self(sum.wrapping_sub(MODULUS))
        } else {
            Self(sum)
        }
    }
}

impl Sub for FieldElement {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        if self.0 >= rhs.0 {
            Self(self.0 - rhs.0)
        } else {
            Self(self.0.wrapping_sub(rhs.0).wrapping_add(MODULUS))
        }
    }
}

impl Neg for FieldElement {
    type Output = Self;
    fn neg(self) -> Self {
        Self::ZERO - self
    }
}

impl Mul for FieldElement {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self::reduce128(self.0 as u128 * rhs.0 as u128)
    }
}

impl AddAssign for FieldElement {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl SubAssign for FieldElement {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl MulAssign for FieldElement {
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl core::iter::Sum for FieldElement {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, |a, b| a + b)
    }
}

impl core::iter::Product for FieldElement {
    fn product<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ONE, |a, b| a * b)
    }
}

pub fn field_add(a: FieldElement, b: FieldElement) -> FieldElement {
    a + b
}

pub fn field_sub(a: FieldElement, b: FieldElement) -> FieldElement {
    a - b
}

pub fn field_mul(a: FieldElement, b: FieldElement) -> FieldElement {
    a * b
}

pub fn field_inv(a: FieldElement) -> Result<FieldElement, FieldError> {
    a.inverse()
}

/// Embeds a signed witness value: `v mod p`, negative values map to `p - |v|`.
pub fn embed_signed(v: i128) -> Result<FieldElement, FieldError> {
    if !(-SIGNED_WINDOW..=SIGNED_WINDOW).contains(&v) {
        return Err(FieldError::OutOfRange(v));
    }
    Ok(embed_unchecked(v as i64))
}

/// Embedding for values already known to be inside the window.
#[inline]
pub(crate) fn embed_unchecked(v: i64) -> FieldElement {
    if v >= 0 {
        FieldElement(v as u64)
    } else {
        FieldElement(MODULUS - v.unsigned_abs())
    }
}

/// `prod_i (t - a_i)`; the empty product is one.
pub fn char_poly_eval(list: &[FieldElement], t: FieldElement) -> FieldElement {
    list.iter().map(|&a| t - a).product()
}
