//! Transcendental helpers on [`Fixed`] evaluated entirely in integer
//! arithmetic (128-bit intermediates at scale 10^-18), so results are
//! identical on every platform.

use super::fixed::{div_round_half_even, Fixed, SCALE};
use super::CodecError;

const WIDE: i128 = 1_000_000_000_000_000_000;
const WIDEN: i128 = WIDE / SCALE as i128;
/// ln(2) at scale 10^-18.
const LN2_WIDE: i128 = 693_147_180_559_945_309;

fn to_wide(x: Fixed) -> i128 {
    i128::from(x.raw()) * WIDEN
}

fn from_wide(w: i128) -> Result<Fixed, CodecError> {
    let raw = div_round_half_even(w, WIDEN);
    i64::try_from(raw)
        .map(Fixed::from_raw)
        .map_err(|_| CodecError::Overflow)
}

fn wide_mul(a: i128, b: i128) -> i128 {
    div_round_half_even(a * b, WIDE)
}

/// e^r for |r| <= ln(2) (wide scale), by Taylor series.
fn exp_small(r: i128) -> i128 {
    let mut sum = WIDE;
    let mut term = WIDE;
    let mut k = 1;
    loop {
        term = div_round_half_even(wide_mul(term, r), k);
        if term == 0 {
            break;
        }
        sum += term;
        k += 1;
    }
    sum
}

/// 2^(-x) for x >= 0.
pub fn exp2_neg(x: Fixed) -> Result<Fixed, CodecError> {
    if x.is_negative() {
        return Err(CodecError::Unencodable("exp2_neg of negative exponent".into()));
    }
    let raw = x.raw();
    let whole = raw / SCALE;
    let frac = Fixed::from_raw(raw % SCALE);
    if whole >= 64 {
        return Ok(Fixed::ZERO);
    }
    let y = wide_mul(to_wide(frac), LN2_WIDE);
    let mut v = exp_small(-y);
    // divide by 2^whole with half-even rounding
    v = div_round_half_even(v, 1i128 << whole);
    from_wide(v)
}

/// Natural logarithm for x > 0.
pub fn ln(x: Fixed) -> Result<Fixed, CodecError> {
    if x.raw() <= 0 {
        return Err(CodecError::Unencodable("ln of non-positive value".into()));
    }
    let mut m = to_wide(x);
    let mut k: i128 = 0;
    while m >= 2 * WIDE {
        m = div_round_half_even(m, 2);
        k += 1;
    }
    while m < WIDE {
        m *= 2;
        k -= 1;
    }
    // ln m = 2 atanh(z), z = (m-1)/(m+1) in [0, 1/3)
    let z = div_round_half_even((m - WIDE) * WIDE, m + WIDE);
    let z2 = wide_mul(z, z);
    let mut power = z;
    let mut series = 0i128;
    let mut n = 1i128;
    loop {
        let term = div_round_half_even(power, n);
        if term == 0 {
            break;
        }
        series += term;
        power = wide_mul(power, z2);
        n += 2;
    }
    from_wide(k * LN2_WIDE + 2 * series)
}

/// e^x.
pub fn exp(x: Fixed) -> Result<Fixed, CodecError> {
    let w = to_wide(x);
    // x = k ln2 + r with |r| <= ln2 / 2
    let k = div_round_half_even(w, LN2_WIDE);
    let r = w - k * LN2_WIDE;
    let base = exp_small(r);
    let v = if k >= 0 {
        if k > 40 {
            return Err(CodecError::Overflow);
        }
        base.checked_mul(1i128 << k).ok_or(CodecError::Overflow)?
    } else if k < -100 {
        0
    } else {
        div_round_half_even(base, 1i128 << (-k))
    };
    from_wide(v)
}

/// Square root for x >= 0, rounded down to the nearest ulp.
pub fn sqrt(x: Fixed) -> Result<Fixed, CodecError> {
    if x.is_negative() {
        return Err(CodecError::Unencodable("sqrt of negative value".into()));
    }
    let v = (x.raw() as u128) * (SCALE as u128);
    Ok(Fixed::from_raw(v.isqrt() as i64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Fixed, b: f64, tol: f64) -> bool {
        (a.to_f64() - b).abs() <= tol
    }

    #[test]
    fn exp2_neg_matches_float() {
        for s in ["0", "0.5", "1", "1.75", "3.2", "10.000000001", "63.9"] {
            let x: Fixed = s.parse().unwrap();
            let got = exp2_neg(x).unwrap();
            assert!(close(got, (-x.to_f64()).exp2(), 2e-9), "{s}: {got}");
        }
        assert_eq!(exp2_neg(Fixed::ONE).unwrap().raw(), 500_000_000);
        assert_eq!(exp2_neg(Fixed::ZERO).unwrap(), Fixed::ONE);
    }

    #[test]
    fn ln_and_exp_match_float() {
        for s in ["0.000001", "0.1", "1", "2", "6", "1000", "123456.789"] {
            let x: Fixed = s.parse().unwrap();
            assert!(close(ln(x).unwrap(), x.to_f64().ln(), 2e-9), "ln {s}");
        }
        for s in ["-20", "-1", "0", "0.3", "1", "5", "20"] {
            let x: Fixed = s.parse().unwrap();
            let expect = x.to_f64().exp();
            assert!(close(exp(x).unwrap(), expect, 2e-9 * expect.max(1.0)), "exp {s}");
        }
        assert!(ln(Fixed::ZERO).is_err());
    }

    #[test]
    fn sqrt_basic() {
        assert_eq!(sqrt("4".parse().unwrap()).unwrap(), "2".parse().unwrap());
        assert_eq!(sqrt("0.25".parse().unwrap()).unwrap(), "0.5".parse().unwrap());
        assert!(sqrt("-1".parse().unwrap()).is_err());
    }
}
