//! Exact decimal amounts.
//!
//! Energy quantities and prices are carried as [`Fixed`], a signed count of
//! micro-units (six fractional digits). Ether balances are [`Wei`], an
//! unsigned count of atto-units (eighteen fractional digits). The product of
//! a price and a quantity is exact at 10⁻¹² and therefore lands on the wei
//! grid without rounding.

use std::fmt;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Fractional digits of [`Fixed`].
pub const FIXED_DECIMALS: u32 = 6;
/// Micro-units per whole unit.
pub const FIXED_SCALE: i64 = 1_000_000;
/// Fractional digits of [`Wei`].
pub const WEI_DECIMALS: u32 = 18;
/// Wei per Ether.
pub const WEI_PER_ETHER: u128 = 1_000_000_000_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseAmountError {
    #[error("empty number")]
    Empty,
    #[error("malformed number `{0}`")]
    Malformed(String),
    #[error("`{0}` has more than {1} significant fractional digits")]
    TooPrecise(String, u32),
    #[error("`{0}` is out of range")]
    OutOfRange(String),
    #[error("`{0}` is negative")]
    Negative(String),
}

/// Parses a plain or scientific decimal literal into an integer count of
/// `10^-decimals` units. Digits beyond the resolution must all be zero.
pub fn parse_scaled(text: &str, decimals: u32) -> Result<i128, ParseAmountError> {
    let s = text.trim();
    if s.is_empty() {
        return Err(ParseAmountError::Empty);
    }
    let malformed = || ParseAmountError::Malformed(s.to_string());
    let (negative, body) = match s.as_bytes()[0] {
        b'-' => (true, &s[1..]),
        b'+' => (false, &s[1..]),
        _ => (false, s),
    };
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(idx) => {
            let exp: i32 = body[idx + 1..].parse().map_err(|_| malformed())?;
            (&body[..idx], exp)
        }
        None => (body, 0),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(malformed());
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(malformed());
    }

    // digits * 10^(exponent - frac_len) expressed in units of 10^-decimals
    let digits: String = format!("{int_part}{frac_part}");
    let digits = digits.trim_start_matches('0');
    let shift = exponent as i64 - frac_part.len() as i64 + decimals as i64;
    let value: i128 = if digits.is_empty() {
        0
    } else if shift >= 0 {
        let mut v: i128 = digits.parse().map_err(|_| ParseAmountError::OutOfRange(s.to_string()))?;
        for _ in 0..shift {
            v = v.checked_mul(10).ok_or_else(|| ParseAmountError::OutOfRange(s.to_string()))?;
        }
        v
    } else {
        let cut = (-shift) as usize;
        if cut >= digits.len() {
            return Err(ParseAmountError::TooPrecise(s.to_string(), decimals));
        }
        let (keep, dropped) = digits.split_at(digits.len() - cut);
        if dropped.bytes().any(|b| b != b'0') {
            return Err(ParseAmountError::TooPrecise(s.to_string(), decimals));
        }
        keep.parse().map_err(|_| ParseAmountError::OutOfRange(s.to_string()))?
    };
    Ok(if negative { -value } else { value })
}

/// Signed decimal with six fractional digits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fixed(i64);

impl Fixed {
    pub const ZERO: Fixed = Fixed(0);
    pub const ONE: Fixed = Fixed(FIXED_SCALE);
    /// Smallest representable positive step.
    pub const EPSILON: Fixed = Fixed(1);

    pub const fn from_micros(micros: i64) -> Self {
        Fixed(micros)
    }

    pub const fn from_int(units: i64) -> Self {
        Fixed(units * FIXED_SCALE)
    }

    pub const fn micros(self) -> i64 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / FIXED_SCALE as f64
    }

    /// Rounds to the nearest micro-unit; `None` for non-finite or out-of-range input.
    pub fn from_f64(value: f64) -> Option<Self> {
        let scaled = (value * FIXED_SCALE as f64).round();
        if !scaled.is_finite() || scaled.abs() >= i64::MAX as f64 {
            return None;
        }
        Some(Fixed(scaled as i64))
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub fn abs(self) -> Self {
        Fixed(self.0.abs())
    }

    pub fn checked_add(self, rhs: Fixed) -> Option<Fixed> {
        self.0.checked_add(rhs.0).map(Fixed)
    }

    pub fn checked_sub(self, rhs: Fixed) -> Option<Fixed> {
        self.0.checked_sub(rhs.0).map(Fixed)
    }

    /// Midpoint truncated toward negative infinity at micro resolution.
    pub fn midpoint(self, other: Fixed) -> Fixed {
        Fixed(((self.0 as i128 + other.0 as i128).div_euclid(2)) as i64)
    }

    /// Exact value of `self` (a price) times `quantity`, in wei.
    /// `None` if either operand is negative or the product overflows.
    pub fn times(self, quantity: Fixed) -> Option<Wei> {
        if self.0 < 0 || quantity.0 < 0 {
            return None;
        }
        // micros * micros = 10^-12 ether; 10^6 more to reach wei
        (self.0 as u128)
            .checked_mul(quantity.0 as u128)?
            .checked_mul(1_000_000)
            .map(Wei)
    }
}

impl Add for Fixed {
    type Output = Fixed;
    fn add(self, rhs: Fixed) -> Fixed {
        Fixed(self.0 + rhs.0)
    }
}

impl AddAssign for Fixed {
    fn add_assign(&mut self, rhs: Fixed) {
        self.0 += rhs.0;
    }
}

impl Sub for Fixed {
    type Output = Fixed;
    fn sub(self, rhs: Fixed) -> Fixed {
        Fixed(self.0 - rhs.0)
    }
}

impl SubAssign for Fixed {
    fn sub_assign(&mut self, rhs: Fixed) {
        self.0 -= rhs.0;
    }
}

impl Neg for Fixed {
    type Output = Fixed;
    fn neg(self) -> Fixed {
        Fixed(-self.0)
    }
}

impl std::iter::Sum for Fixed {
    fn sum<I: Iterator<Item = Fixed>>(iter: I) -> Fixed {
        iter.fold(Fixed::ZERO, Add::add)
    }
}

impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let scale = FIXED_SCALE as u64;
        write!(f, "{sign}{}.{:06}", abs / scale, abs % scale)
    }
}

impl FromStr for Fixed {
    type Err = ParseAmountError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v = parse_scaled(s, FIXED_DECIMALS)?;
        i64::try_from(v)
            .map(Fixed)
            .map_err(|_| ParseAmountError::OutOfRange(s.to_string()))
    }
}

/// Serialized as a JSON number carrying all six fractional digits.
impl Serialize for Fixed {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let number = serde_json::Number::from_str(&self.to_string()).map_err(serde::ser::Error::custom)?;
        number.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Fixed {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let number = serde_json::Number::deserialize(deserializer)?;
        number.to_string().parse().map_err(serde::de::Error::custom)
    }
}

/// Non-negative Ether amount in atto-units.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Wei(pub u128);

impl Wei {
    pub const ZERO: Wei = Wei(0);

    pub fn from_ether(ether: u64) -> Wei {
        Wei(ether as u128 * WEI_PER_ETHER)
    }

    pub fn checked_add(self, rhs: Wei) -> Option<Wei> {
        self.0.checked_add(rhs.0).map(Wei)
    }

    pub fn checked_sub(self, rhs: Wei) -> Option<Wei> {
        self.0.checked_sub(rhs.0).map(Wei)
    }

    pub fn to_ether_f64(self) -> f64 {
        self.0 as f64 / WEI_PER_ETHER as f64
    }

    /// Parses a decimal Ether literal exactly.
    pub fn parse_ether(text: &str) -> Result<Wei, ParseAmountError> {
        let v = parse_scaled(text, WEI_DECIMALS)?;
        if v < 0 {
            return Err(ParseAmountError::Negative(text.to_string()));
        }
        Ok(Wei(v as u128))
    }
}

impl fmt::Display for Wei {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:018}", self.0 / WEI_PER_ETHER, self.0 % WEI_PER_ETHER)
    }
}

/// Formats a signed wei delta as Ether with eighteen digits.
pub fn format_wei_delta(delta: i128) -> String {
    let sign = if delta < 0 { "-" } else { "" };
    format!("{sign}{}", Wei(delta.unsigned_abs()))
}

/// Serde adapter reading an Ether decimal literal (JSON number) into [`Wei`].
pub mod ether_literal {
    use super::Wei;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::str::FromStr;

    pub fn serialize<S: Serializer>(value: &Wei, serializer: S) -> Result<S::Ok, S::Error> {
        let number = serde_json::Number::from_str(&value.to_string()).map_err(serde::ser::Error::custom)?;
        number.serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Wei, D::Error> {
        let number = serde_json::Number::deserialize(deserializer)?;
        Wei::parse_ether(&number.to_string()).map_err(serde::de::Error::custom)
    }
}

/// Splits `total` micro-units across `weights` proportionally, largest
/// remainder first, so the parts sum to `total` exactly. Ties on the
/// remainder go to the lower index.
pub fn apportion(total: Fixed, weights: &[f64]) -> Vec<Fixed> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let weight_sum: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    if total.micros() <= 0 || weight_sum <= 0.0 {
        return vec![Fixed::ZERO; n];
    }
    let units = total.micros();
    let mut parts = Vec::with_capacity(n);
    let mut remainders = Vec::with_capacity(n);
    for (i, w) in weights.iter().enumerate() {
        let exact = units as f64 * (w.max(0.0) / weight_sum);
        let floor = exact.floor().min(units as f64) as i64;
        parts.push(floor);
        remainders.push((exact - floor as f64, i));
    }
    let mut leftover = units - parts.iter().sum::<i64>();
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut k = 0;
    while leftover > 0 {
        let idx = remainders[k % n].1;
        if weights[idx] > 0.0 {
            parts[idx] += 1;
            leftover -= 1;
        }
        k += 1;
    }
    while leftover < 0 {
        // float floors overshot; take back from the largest part
        let idx = (0..n).max_by_key(|&i| (parts[i], std::cmp::Reverse(i))).unwrap_or(0);
        parts[idx] -= 1;
        leftover += 1;
    }
    parts.into_iter().map(Fixed::from_micros).collect()
}

/// Integer pro-rata split of `total` by integer `weights`; exact, with
/// leftover micro-units handed out by largest remainder then lowest index.
pub fn apportion_exact(total: Fixed, weights: &[Fixed]) -> Vec<Fixed> {
    let weight_sum: i128 = weights.iter().map(|w| w.micros().max(0) as i128).sum();
    if weights.is_empty() || weight_sum == 0 || total.micros() <= 0 {
        return vec![Fixed::ZERO; weights.len()];
    }
    let units = total.micros() as i128;
    let mut parts: Vec<i128> = Vec::with_capacity(weights.len());
    let mut remainders: Vec<(i128, usize)> = Vec::with_capacity(weights.len());
    for (i, w) in weights.iter().enumerate() {
        let num = units * w.micros().max(0) as i128;
        parts.push(num / weight_sum);
        remainders.push((num % weight_sum, i));
    }
    let mut leftover = units - parts.iter().sum::<i128>();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, idx) in remainders {
        if leftover == 0 {
            break;
        }
        parts[idx] += 1;
        leftover -= 1;
    }
    parts.into_iter().map(|p| Fixed::from_micros(p as i64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_plain_and_scientific() {
        assert_eq!("1.5".parse::<Fixed>().unwrap(), Fixed::from_micros(1_500_000));
        assert_eq!("-0.000001".parse::<Fixed>().unwrap(), Fixed::from_micros(-1));
        assert_eq!("2".parse::<Fixed>().unwrap(), Fixed::from_int(2));
        assert_eq!("1e-3".parse::<Fixed>().unwrap(), Fixed::from_micros(1_000));
        assert_eq!("2.5E2".parse::<Fixed>().unwrap(), Fixed::from_int(250));
        assert_eq!("1.2300000000".parse::<Fixed>().unwrap(), Fixed::from_micros(1_230_000));
        assert_eq!(".5".parse::<Fixed>().unwrap(), Fixed::from_micros(500_000));
    }

    #[test]
    fn rejects_excess_precision_and_garbage() {
        assert!(matches!("0.0000001".parse::<Fixed>(), Err(ParseAmountError::TooPrecise(..))));
        assert!(matches!("1.2.3".parse::<Fixed>(), Err(ParseAmountError::Malformed(_))));
        assert!(matches!("abc".parse::<Fixed>(), Err(ParseAmountError::Malformed(_))));
        assert!(matches!("".parse::<Fixed>(), Err(ParseAmountError::Empty)));
        assert!(matches!("1e30".parse::<Fixed>(), Err(ParseAmountError::OutOfRange(_))));
    }

    #[test]
    fn display_keeps_six_digits() {
        assert_eq!(Fixed::from_micros(4_500_000).to_string(), "4.500000");
        assert_eq!(Fixed::from_micros(-1).to_string(), "-0.000001");
        assert_eq!(Wei::from_ether(6).to_string(), "6.000000000000000000");
        assert_eq!(format_wei_delta(-6 * WEI_PER_ETHER as i128), "-6.000000000000000000");
    }

    #[test]
    fn price_times_quantity_is_exact() {
        let price = Fixed::from_int(3);
        assert_eq!(price.times(Fixed::from_int(2)), Some(Wei::from_ether(6)));
        let q = Fixed::from_micros(1_500_000);
        assert_eq!(price.times(q), Some(Wei(4_500_000_000_000_000_000)));
        assert_eq!(Fixed::from_micros(1).times(Fixed::from_micros(1)), Some(Wei(1_000_000)));
        assert_eq!(price.times(-q), None);
    }

    #[test]
    fn midpoint_truncates() {
        assert_eq!(Fixed::from_int(5).midpoint(Fixed::from_int(4)), Fixed::from_micros(4_500_000));
        assert_eq!(Fixed::from_micros(3).midpoint(Fixed::from_micros(0)), Fixed::from_micros(1));
    }

    #[test]
    fn ether_literal_parses_exactly() {
        assert_eq!(Wei::parse_ether("10").unwrap(), Wei::from_ether(10));
        assert_eq!(Wei::parse_ether("0.000000000000000001").unwrap(), Wei(1));
        assert!(Wei::parse_ether("-1").is_err());
    }

    #[test]
    fn json_round_trip_is_textual() {
        let f = Fixed::from_micros(227_273);
        let json = serde_json::to_string(&f).unwrap();
        assert_eq!(json, "0.227273");
        let back: Fixed = serde_json::from_str("0.227273").unwrap();
        assert_eq!(back, f);
        let err = serde_json::from_str::<Fixed>("0.1234567");
        assert!(err.is_err());
    }

    #[test]
    fn apportion_sums_exactly() {
        let total = Fixed::from_micros(5_000_000);
        let parts = apportion(total, &[0.3333333, 1.0, 2.0, 0.0]);
        assert_eq!(parts.iter().copied().sum::<Fixed>(), total);
        assert_eq!(parts[3], Fixed::ZERO);

        let parts = apportion_exact(Fixed::from_micros(10), &[Fixed::from_int(1), Fixed::from_int(1), Fixed::from_int(1)]);
        assert_eq!(parts, vec![Fixed::from_micros(4), Fixed::from_micros(3), Fixed::from_micros(3)]);
    }
}
