//! Hexadecimal float text (`-0x1.8p+1`) for bit-exact serialization.

use crate::error::{Error, Result};
use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use std::fmt;

pub fn encode(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let man = bits & ((1u64 << 52) - 1);
    if exp == 0 && man == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, e) = if exp == 0 {
        (0, -1022)
    } else {
        (1, exp - 1023)
    };
    let mut frac = format!("{man:013x}");
    while frac.ends_with('0') {
        frac.pop();
    }
    let es = if e >= 0 {
        format!("+{e}")
    } else {
        format!("{e}")
    };
    if frac.is_empty() {
        format!("{sign}0x{lead}p{es}")
    } else {
        format!("{sign}0x{lead}.{frac}p{es}")
    }
}

/// Strict decoder: accepts what [`encode`] emits (leading digit 0 or 1, at
/// most 13 fraction digits), so every accepted string maps to one `f64`.
pub fn decode(s: &str) -> Result<f64> {
    let bad = || Error::Parse(format!("bad hex float {s:?}"));
    match s {
        "nan" => return Ok(f64::NAN),
        "inf" => return Ok(f64::INFINITY),
        "-inf" => return Ok(f64::NEG_INFINITY),
        _ => {}
    }
    let (neg, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s),
    };
    let rest = rest.strip_prefix("0x").ok_or_else(bad)?;
    let (mant, exp) = rest.split_once('p').ok_or_else(bad)?;
    let (lead, frac) = match mant.split_once('.') {
        Some((l, f)) => {
            if f.is_empty() {
                return Err(bad());
            }
            (l, f)
        }
        None => (mant, ""),
    };
    let lead = match lead {
        "0" => 0u64,
        "1" => 1u64,
        _ => return Err(bad()),
    };
    if frac.len() > 13 || !frac.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(bad());
    }
    let mut man: u64 = 0;
    for (i, c) in frac.bytes().enumerate() {
        let d = (c as char).to_digit(16).ok_or_else(bad)? as u64;
        man |= d << (4 * (12 - i));
    }
    if !(exp.starts_with('+') || exp.starts_with('-')) || exp.len() < 2 || exp.len() > 6 {
        return Err(bad());
    }
    if !exp[1..].bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let e: i64 = exp.parse().map_err(|_| bad())?;
    let bits = if lead == 0 {
        if man == 0 {
            if e != 0 {
                return Err(bad());
            }
            0
        } else {
            if e != -1022 {
                return Err(bad());
            }
            man
        }
    } else {
        if !(-1022..=1023).contains(&e) {
            return Err(bad());
        }
        (((e + 1023) as u64) << 52) | man
    };
    let v = f64::from_bits(bits);
    Ok(if neg { -v } else { v })
}

/// `f64` that serializes as a hex-float string.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hf(pub f64);

impl Serialize for Hf {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Hf {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Hf, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Hf;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("hex float string")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Hf, E> {
                decode(v).map(Hf).map_err(E::custom)
            }
        }
        d.deserialize_str(V)
    }
}

pub fn wrap(v: &[f64]) -> Vec<Hf> {
    v.iter().map(|&x| Hf(x)).collect()
}

pub fn unwrap(v: &[Hf]) -> Vec<f64> {
    v.iter().map(|h| h.0).collect()
}

/// Serde adapters: write hex strings, read hex strings or plain JSON numbers.
pub mod hex {
    use super::Hf;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        N(f64),
        S(Hf),
    }

    impl Raw {
        fn get(self) -> f64 {
            match self {
                Raw::N(v) => v,
                Raw::S(h) => h.0,
            }
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        Hf(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Raw::deserialize(d)?.get())
    }

    pub mod vec {
        use super::*;
        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            super::super::wrap(v).serialize(s)
        }
        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Ok(Vec::<Raw>::deserialize(d)?
                .into_iter()
                .map(Raw::get)
                .collect())
        }
    }

    pub mod mat {
        use super::*;
        pub fn serialize<S: Serializer>(v: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
            v.iter()
                .map(|r| super::super::wrap(r))
                .collect::<Vec<_>>()
                .serialize(s)
        }
        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
            Ok(Vec::<Vec<Raw>>::deserialize(d)?
                .into_iter()
                .map(|r| r.into_iter().map(Raw::get).collect())
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_encodings() {
        assert_eq!(encode(1.0), "0x1p+0");
        assert_eq!(encode(-3.0), "-0x1.8p+1");
        assert_eq!(encode(0.1), "0x1.999999999999ap-4");
        assert_eq!(encode(0.0), "0x0p+0");
        assert_eq!(encode(-0.0), "-0x0p+0");
        assert_eq!(encode(f64::MIN_POSITIVE / 2.0), "0x0.8p-1022");
    }

    #[test]
    fn rejects_noncanonical() {
        for s in [
            "0x2p+0",
            "1.0",
            "0x1.p+0",
            "0x1p0",
            "0x1.0000000000000p+0x",
            "0x0p+5",
            "0x1p+1024",
        ] {
            assert!(decode(s).is_err(), "{s}");
        }
    }

    proptest! {
        #[test]
        fn roundtrip_bits(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let back = decode(&encode(v)).unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}
