//! Extended reals.
//!
//! Moduli such as `reg G(x̄)` or `‖Df(x₀)‖⁻¹` legitimately take the value
//! `+∞`, and Lagrangian values may be `−∞`. They are carried as an explicit
//! enum so that an infinite modulus is never the result of a float overflow.
//! On the wire a finite value is a JSON number and the infinities are the
//! strings `"inf"` and `"-inf"`.

use std::cmp::Ordering;
use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    NegInf,
    Finite(f64),
    PosInf,
}

impl ExtReal {
    pub const ZERO: ExtReal = ExtReal::Finite(0.0);

    /// Maps `f64` infinities onto the dedicated variants. NaN is rejected.
    pub fn from_f64(v: f64) -> Option<Self> {
        if v.is_nan() {
            None
        } else if v == f64::INFINITY {
            Some(ExtReal::PosInf)
        } else if v == f64::NEG_INFINITY {
            Some(ExtReal::NegInf)
        } else {
            Some(ExtReal::Finite(v))
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn is_pos_inf(self) -> bool {
        matches!(self, ExtReal::PosInf)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            _ => None,
        }
    }

    /// Lossy view as `f64` (infinities map to `f64` infinities).
    pub fn to_f64(self) -> f64 {
        match self {
            ExtReal::NegInf => f64::NEG_INFINITY,
            ExtReal::Finite(v) => v,
            ExtReal::PosInf => f64::INFINITY,
        }
    }

    /// Reciprocal of a nonnegative extended real with `0⁻¹ = +∞` and
    /// `(+∞)⁻¹ = 0`.
    pub fn recip(self) -> ExtReal {
        match self {
            ExtReal::Finite(0.0) => ExtReal::PosInf,
            ExtReal::Finite(v) => ExtReal::Finite(1.0 / v),
            ExtReal::PosInf | ExtReal::NegInf => ExtReal::ZERO,
        }
    }

    pub fn min(self, other: ExtReal) -> ExtReal {
        if other < self {
            other
        } else {
            self
        }
    }

    pub fn max(self, other: ExtReal) -> ExtReal {
        if other > self {
            other
        } else {
            self
        }
    }

    pub fn scale(self, factor: f64) -> ExtReal {
        debug_assert!(factor > 0.0);
        match self {
            ExtReal::Finite(v) => ExtReal::Finite(v * factor),
            other => other,
        }
    }
}

impl From<f64> for ExtReal {
    fn from(v: f64) -> Self {
        ExtReal::from_f64(v).expect("NaN is not an extended real")
    }
}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        use ExtReal::*;
        match (self, other) {
            (NegInf, NegInf) | (PosInf, PosInf) => Some(Ordering::Equal),
            (NegInf, _) | (_, PosInf) => Some(Ordering::Less),
            (_, NegInf) | (PosInf, _) => Some(Ordering::Greater),
            (Finite(a), Finite(b)) => a.partial_cmp(b),
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::NegInf => write!(f, "-inf"),
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::PosInf => write!(f, "inf"),
        }
    }
}

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            ExtReal::NegInf => serializer.serialize_str("-inf"),
            ExtReal::Finite(v) => serializer.serialize_f64(*v),
            ExtReal::PosInf => serializer.serialize_str("inf"),
        }
    }
}

struct ExtRealVisitor;

impl<'de> Visitor<'de> for ExtRealVisitor {
    type Value = ExtReal;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a number or one of \"inf\", \"-inf\"")
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<ExtReal, E> {
        ExtReal::from_f64(v).ok_or_else(|| E::custom("NaN"))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<ExtReal, E> {
        Ok(ExtReal::Finite(v as f64))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<ExtReal, E> {
        Ok(ExtReal::Finite(v as f64))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<ExtReal, E> {
        match v {
            "inf" | "+inf" | "infinity" => Ok(ExtReal::PosInf),
            "-inf" | "-infinity" => Ok(ExtReal::NegInf),
            other => Err(E::custom(format!("not an extended real: {other:?}"))),
        }
    }
}

impl<'de> Deserialize<'de> for ExtReal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_any(ExtRealVisitor)
    }
}
