//! Signed 64-bit fixed point at scale 10^-9.
//!
//! Every real-valued quantity that reaches a digest (scores, weights,
//! confidences, fractions, currency) is a [`Fixed`]. Arithmetic is
//! overflow-checked and division rounds half-to-even, so two operators on
//! different machines always agree bit for bit.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::CodecError;

/// Number of raw units in 1.0.
pub const SCALE: i64 = 1_000_000_000;

#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fixed(i64);

impl Fixed {
    pub const ZERO: Fixed = Fixed(0);
    pub const ONE: Fixed = Fixed(SCALE);
    /// Smallest positive value (one ulp).
    pub const EPSILON: Fixed = Fixed(1);
    pub const MAX: Fixed = Fixed(i64::MAX);

    pub const fn from_raw(raw: i64) -> Self {
        Fixed(raw)
    }

    pub const fn raw(self) -> i64 {
        self.0
    }

    pub fn from_int(n: i64) -> Result<Self, CodecError> {
        n.checked_mul(SCALE).map(Fixed).ok_or(CodecError::Overflow)
    }

    /// `num / den`, rounded half-to-even.
    pub fn from_ratio(num: i64, den: i64) -> Result<Self, CodecError> {
        if den == 0 {
            return Err(CodecError::DivisionByZero);
        }
        let q = div_round_half_even(i128::from(num) * i128::from(SCALE), i128::from(den));
        narrow(q)
    }

    /// Conversion for display and for oracles; never used on consensus paths.
    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }

    /// Rounds a finite float to the nearest representable value.
    pub fn from_f64(x: f64) -> Result<Self, CodecError> {
        if !x.is_finite() {
            return Err(CodecError::Unencodable("non-finite float".into()));
        }
        let scaled = (x * SCALE as f64).round_ties_even();
        if scaled >= i64::MAX as f64 || scaled <= i64::MIN as f64 {
            return Err(CodecError::Overflow);
        }
        Ok(Fixed(scaled as i64))
    }

    pub fn checked_add(self, rhs: Fixed) -> Result<Fixed, CodecError> {
        self.0.checked_add(rhs.0).map(Fixed).ok_or(CodecError::Overflow)
    }

    pub fn checked_sub(self, rhs: Fixed) -> Result<Fixed, CodecError> {
        self.0.checked_sub(rhs.0).map(Fixed).ok_or(CodecError::Overflow)
    }

    pub fn checked_mul(self, rhs: Fixed) -> Result<Fixed, CodecError> {
        let wide = i128::from(self.0) * i128::from(rhs.0);
        narrow(div_round_half_even(wide, i128::from(SCALE)))
    }

    pub fn checked_div(self, rhs: Fixed) -> Result<Fixed, CodecError> {
        if rhs.0 == 0 {
            return Err(CodecError::DivisionByZero);
        }
        let wide = i128::from(self.0) * i128::from(SCALE);
        narrow(div_round_half_even(wide, i128::from(rhs.0)))
    }

    pub fn checked_mul_int(self, n: i64) -> Result<Fixed, CodecError> {
        self.0.checked_mul(n).map(Fixed).ok_or(CodecError::Overflow)
    }

    pub fn checked_div_int(self, n: i64) -> Result<Fixed, CodecError> {
        if n == 0 {
            return Err(CodecError::DivisionByZero);
        }
        narrow(div_round_half_even(i128::from(self.0), i128::from(n)))
    }

    pub fn abs(self) -> Fixed {
        Fixed(self.0.saturating_abs())
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn min(self, other: Fixed) -> Fixed {
        Ord::min(self, other)
    }

    pub fn max(self, other: Fixed) -> Fixed {
        Ord::max(self, other)
    }

    pub fn clamp(self, lo: Fixed, hi: Fixed) -> Fixed {
        Ord::clamp(self, lo, hi)
    }

    /// `round_half_even(self * n)` as an integer.
    pub fn scale_to_int(self, n: i64) -> Result<i64, CodecError> {
        let q = div_round_half_even(i128::from(self.0) * i128::from(n), i128::from(SCALE));
        i64::try_from(q).map_err(|_| CodecError::Overflow)
    }
}

/// Integer division of `num / den` with ties going to the even quotient.
pub(crate) fn div_round_half_even(num: i128, den: i128) -> i128 {
    debug_assert!(den != 0);
    let (num, den) = if den < 0 { (-num, -den) } else { (num, den) };
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    match (2 * r).cmp(&den) {
        Ordering::Less => q,
        Ordering::Greater => q + 1,
        Ordering::Equal => {
            if q % 2 == 0 {
                q
            } else {
                q + 1
            }
        }
    }
}

fn narrow(v: i128) -> Result<Fixed, CodecError> {
    i64::try_from(v).map(Fixed).map_err(|_| CodecError::Overflow)
}

/// Pairwise tree summation over values ordered by their keys.
///
/// The caller supplies `(key, value)` pairs in any order; the pairs are
/// sorted by key and reduced pairwise, so the result depends only on the
/// multiset of entries and overflow behaves identically on every run.
pub fn sum_sorted_pairwise<K: Ord>(mut entries: Vec<(K, Fixed)>) -> Result<Fixed, CodecError> {
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    let mut level: Vec<Fixed> = entries.into_iter().map(|(_, v)| v).collect();
    if level.is_empty() {
        return Ok(Fixed::ZERO);
    }
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        for pair in level.chunks(2) {
            next.push(match pair {
                [a, b] => a.checked_add(*b)?,
                [a] => *a,
                _ => unreachable!(),
            });
        }
        level = next;
    }
    Ok(level[0])
}

/// Checked sum in iteration order (exact integer addition; only overflow
/// detection depends on order).
pub fn checked_sum<I: IntoIterator<Item = Fixed>>(iter: I) -> Result<Fixed, CodecError> {
    iter.into_iter().try_fold(Fixed::ZERO, Fixed::checked_add)
}

/// Distributes `total` across `weights` proportionally using the largest
/// remainder method, so the parts sum to `total` exactly.
///
/// Zero weights always receive zero. Remainder ties go to the earlier index.
pub fn apportion(total: Fixed, weights: &[Fixed]) -> Result<Vec<Fixed>, CodecError> {
    if weights.iter().any(|w| w.is_negative()) {
        return Err(CodecError::Unencodable("negative apportionment weight".into()));
    }
    let denom: i128 = weights.iter().map(|w| i128::from(w.raw())).sum();
    if denom == 0 {
        return Err(CodecError::DivisionByZero);
    }
    let total_raw = i128::from(total.raw());
    if total_raw < 0 {
        return Err(CodecError::Unencodable("negative apportionment total".into()));
    }
    let mut parts = Vec::with_capacity(weights.len());
    let mut remainders = Vec::with_capacity(weights.len());
    let mut assigned: i128 = 0;
    for (i, w) in weights.iter().enumerate() {
        let num = total_raw * i128::from(w.raw());
        let q = num / denom;
        let r = num % denom;
        assigned += q;
        parts.push(q);
        if r > 0 {
            remainders.push((r, i));
        }
    }
    let mut leftover = total_raw - assigned;
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, i) in remainders {
        if leftover == 0 {
            break;
        }
        parts[i] += 1;
        leftover -= 1;
    }
    debug_assert_eq!(leftover, 0);
    parts.into_iter().map(narrow).collect()
}

impl fmt::Debug for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fixed({self})")
    }
}

impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let int = abs / SCALE as u64;
        let frac = abs % SCALE as u64;
        if frac == 0 {
            write!(f, "{sign}{int}")
        } else {
            let digits = format!("{frac:09}");
            write!(f, "{sign}{int}.{}", digits.trim_end_matches('0'))
        }
    }
}

impl FromStr for Fixed {
    type Err = CodecError;

    /// Parses a plain decimal such as `-12.5` or `0.000000001`. More than
    /// nine fractional digits is an error rather than a silent rounding.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CodecError::Parse(format!("invalid decimal {s:?}"));
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        if !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
            || frac_part.len() > 9
        {
            return Err(bad());
        }
        let int: i128 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| bad())?
        };
        let frac: i128 = if frac_part.is_empty() {
            0
        } else {
            let padded = format!("{frac_part:0<9}");
            padded.parse().map_err(|_| bad())?
        };
        let raw = int
            .checked_mul(i128::from(SCALE))
            .and_then(|v| v.checked_add(frac))
            .ok_or(CodecError::Overflow)?;
        narrow(if neg { -raw } else { raw })
    }
}

impl Serialize for Fixed {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Fixed {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Str(String),
            Int(i64),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
            Repr::Int(n) => Fixed::from_int(n).map_err(serde::de::Error::custom),
        }
    }
}
