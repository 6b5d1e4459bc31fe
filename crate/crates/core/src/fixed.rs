//! Fixed-point foundation: scale constants, the `2^(±i/2^l)` lookup tables,
//! integer square root and floor division with remainder.

use alloc::vec::Vec;

use num_bigint::BigUint;

use crate::error::FixedError;

/// `floor(log2(e) * 2^80)`.
const LOG2E_Q80: u128 = 1_744_111_284_760_651_037_637_903;

/// Quantization parameters shared by every kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuantConfig {
    /// Scale bits: a real value `r` is carried as `round(r * 2^q)`.
    pub q: u32,
    /// Table index bits.
    pub l: u32,
    /// Padding value for dead softmax lanes.
    pub neg_inf_q: i64,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            q: 16,
            l: 8,
            neg_inf_q: -(1 << 40),
        }
    }
}

impl QuantConfig {
    pub fn new(q: u32, l: u32) -> Result<Self, FixedError> {
        let cfg = Self {
            q,
            l,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), FixedError> {
        if !(1 <= self.l && self.l <= self.q && self.q <= 24) {
            return Err(FixedError::BadConfig("require 1 <= l <= q <= 24"));
        }
        if self.neg_inf_q >= 0 || self.neg_inf_q.unsigned_abs() < 1u64 << (self.q + 8) {
            return Err(FixedError::BadConfig("neg_inf_q must be <= -2^(q+8)"));
        }
        Ok(())
    }

    pub fn one(&self) -> i64 {
        1 << self.q
    }
}

/// `round(log2(e) * 2^q)`, half away from zero.
pub fn log2e_q(q: u32) -> i64 {
    assert!(q <= 24, "scale bits above 24 are not supported");
    let shift = 80 - q;
    ((LOG2E_Q80 + (1u128 << (shift - 1))) >> shift) as i64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Direction {
    /// `2^(-i/2^l)`, used by softmax.
    Neg,
    /// `2^(+i/2^l)`, used by sigmoid and SiLU.
    Pos,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Exp2Table {
    pub direction: Direction,
    pub q: u32,
    pub l: u32,
    pub entries: Vec<i64>,
}

impl Exp2Table {
    pub fn get(&self, idx: usize) -> i64 {
        self.entries[idx]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Builds the `2^l`-entry fractional power-of-two table.
///
/// Each entry is `round(2^(q ± i/2^l))` computed exactly: with `L = 2^l` and
/// `E = L*q ± i`, the rounded value `m` is the largest integer with
/// `(2m - 1)^L <= 2^(E + L)`. No entry is ever a rounding tie because `2^(E/L)`
/// is irrational unless `i = 0`.
pub fn build_exp2_frac_table(cfg: &QuantConfig, direction: Direction) -> Exp2Table {
    let len = 1usize << cfg.l;
    let big_l = len as u64;
    let entries = (0..len)
        .map(|i| {
            let e = match direction {
                Direction::Neg => big_l * cfg.q as u64 - i as u64,
                Direction::Pos => big_l * cfg.q as u64 + i as u64,
            };
            exact_round_pow2(e, cfg.l)
        })
        .collect();
    Exp2Table {
        direction,
        q: cfg.q,
        l: cfg.l,
        entries,
    }
}

/// `round(2^(e / 2^l))` for the exponent range used by the tables.
fn exact_round_pow2(e: u64, l: u32) -> i64 {
    let big_l = 1u32 << l;
    let target = BigUint::from(1u8) << (e + big_l as u64) as usize;
    // m - 1/2 <= x  <=>  (2m - 1)^L <= 2^(e + L)
    let fits = |m: u64| BigUint::from(2 * m - 1).pow(big_l) <= target;
    let approx = libm::round(libm::exp2(e as f64 / big_l as f64)) as u64;
    let mut m = approx.max(1);
    while !fits(m) {
        m -= 1;
    }
    while fits(m + 1) {
        m += 1;
    }
    m as i64
}

/// Both direction tables plus `LOG2E_Q`, built once per config and shared by
/// the nonlinear kernels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelTables {
    pub cfg: QuantConfig,
    pub log2e_q: i64,
    pub neg: Exp2Table,
    pub pos: Exp2Table,
}

impl KernelTables {
    pub fn new(cfg: QuantConfig) -> Result<Self, FixedError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            log2e_q: log2e_q(cfg.q),
            neg: build_exp2_frac_table(&cfg, Direction::Neg),
            pos: build_exp2_frac_table(&cfg, Direction::Pos),
        })
    }
}

/// `floor(sqrt(n))`.
pub fn isqrt(n: i128) -> Result<i128, FixedError> {
    if n < 0 {
        return Err(FixedError::NegativeInput(n));
    }
    let n = n as u128;
    if n < 2 {
        return Ok(n as i128);
    }
    // Newton iteration from an over-estimate.
    let mut x = 1u128 << (128 - n.leading_zeros()).div_ceil(2);
    loop {
        let y = (x + n / x) / 2;
        if y >= x {
            break;
        }
        x = y;
    }
    Ok(x as i128)
}

/// Floor division of a non-negative dividend: `a = q*b + r`, `0 <= r < b`.
pub fn div_rem(a: i128, b: i128) -> Result<(i128, i128), FixedError> {
    if b <= 0 {
        return Err(FixedError::DivisionByZero);
    }
    if a < 0 {
        return Err(FixedError::NegativeDividend(a));
    }
    Ok((a / b, a % b))
}

/// Floor division for signed dividends (remainder always in `[0, b)`).
pub fn div_floor(a: i128, b: i128) -> (i128, i128) {
    debug_assert!(b > 0);
    (a.div_euclid(b), a.rem_euclid(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log2e_examples() {
        assert_eq!(log2e_q(16), 94548);
        assert_eq!(log2e_q(1), 3);
        assert_eq!(log2e_q(0), 1);
        assert_eq!(log2e_q(24), 24204406);
    }

    #[test]
    fn table_examples_and_golden_sums() {
        let cfg = QuantConfig::default();
        let neg = build_exp2_frac_table(&cfg, Direction::Neg);
        let pos = build_exp2_frac_table(&cfg, Direction::Pos);
        assert_eq!(neg.len(), 256);
        assert_eq!(neg.get(0), 65536);
        assert_eq!(pos.get(0), 65536);
        assert_eq!(neg.get(128), 46341);
        assert_eq!(pos.get(128), 92682);
        assert_eq!(neg.get(255), 32857);
        assert_eq!(pos.get(255), 130718);
        // sums of mpmath-rounded tables at 60 digits
        assert_eq!(neg.entries.iter().sum::<i64>(), 12118596);
        assert_eq!(pos.entries.iter().sum::<i64>(), 24171656);
        assert_eq!(&neg.entries[..5], &[65536, 65359, 65182, 65006, 64830]);
        assert_eq!(&pos.entries[..5], &[65536, 65714, 65892, 66071, 66250]);
    }

    #[test]
    fn table_monotone_and_reciprocal() {
        for (q, l) in [(16, 8), (8, 4), (24, 8), (12, 10)] {
            let cfg = QuantConfig::new(q, l).unwrap();
            let neg = build_exp2_frac_table(&cfg, Direction::Neg);
            let pos = build_exp2_frac_table(&cfg, Direction::Pos);
            assert!(neg.entries.windows(2).all(|w| w[0] >= w[1]));
            assert!(pos.entries.windows(2).all(|w| w[0] <= w[1]));
            let two_q = 1i128 << (2 * q);
            let slack = 1i128 << (q + 1);
            for i in 0..neg.len() {
                let prod = neg.get(i) as i128 * pos.get(i) as i128;
                assert!((two_q - slack..=two_q + slack).contains(&prod), "q={q} l={l} i={i}");
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(QuantConfig::default().validate().is_ok());
        assert!(QuantConfig::new(16, 0).is_err());
        assert!(QuantConfig::new(8, 9).is_err());
        assert!(QuantConfig::new(25, 8).is_err());
        let bad = QuantConfig {
            neg_inf_q: -(1 << 20),
            ..QuantConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn isqrt_examples_and_sweep() {
        assert_eq!(isqrt(0), Ok(0));
        assert_eq!(isqrt(16), Ok(4));
        assert_eq!(isqrt(15), Ok(3));
        assert_eq!(isqrt(-1), Err(FixedError::NegativeInput(-1)));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100_000 {
            let n: i128 = rng.gen_range(0..=(1i128 << 40));
            let r = isqrt(n).unwrap();
            assert!(r * r <= n && n < (r + 1) * (r + 1));
        }
        for n in [(1i128 << 124) - 1, 1 << 124, i128::MAX] {
            let r = isqrt(n).unwrap() as u128;
            assert!(r * r <= n as u128 && (r + 1).checked_mul(r + 1).is_none_or(|s| (n as u128) < s));
        }
    }

    #[test]
    fn div_rem_examples_and_sweep() {
        assert_eq!(div_rem(7, 3), Ok((2, 1)));
        assert_eq!(div_rem(0, 5), Ok((0, 0)));
        assert_eq!(div_rem(65536 * 3, 6), Ok((32768, 0)));
        assert_eq!(div_rem(1, 0), Err(FixedError::DivisionByZero));
        assert_eq!(div_rem(-1, 2), Err(FixedError::NegativeDividend(-1)));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let a = rng.gen_range(0..i64::MAX as i128);
            let b = rng.gen_range(1..1_000_000i128);
            let (q, r) = div_rem(a, b).unwrap();
            assert_eq!(q * b + r, a);
            assert!((0..b).contains(&r));
        }
        assert_eq!(div_floor(-1, 65536), (-1, 65535));
    }
}
