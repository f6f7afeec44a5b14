//! Continuous encodings of a single categorical value.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecKind {
    /// Roots of unity: `[cos(2πc/K), sin(2πc/K)]`.
    CatConverter,
    /// Indicator vector over the K categories.
    OneHot,
    /// `⌈log₂ K⌉` bits, MSB first, mapped to ±1.
    AnalogBits,
    /// One scalar on an even grid over `[-1, 1]`.
    Dictionary,
}

impl std::str::FromStr for CodecKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "catconverter" | "cc" => Ok(CodecKind::CatConverter),
            "onehot" | "one-hot" => Ok(CodecKind::OneHot),
            "analogbits" | "analog-bits" | "i2b" => Ok(CodecKind::AnalogBits),
            "dictionary" | "dic" => Ok(CodecKind::Dictionary),
            other => Err(Error::invalid(format!("unknown codec `{other}`"))),
        }
    }
}

/// How one-hot indicators are relaxed into the continuous space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum OneHotRelaxation {
    /// Indicators mapped to `{-1, +1}`.
    Signed,
    /// `softmax(indicator / temperature)`.
    Softmax { temperature: f64 },
}

/// A codec kind plus its decode options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Codec {
    pub kind: CodecKind,
    pub onehot: OneHotRelaxation,
    /// CatConverter vectors with norm `<= r_min` are undecodable and cast to 0.
    pub r_min: f64,
}

impl Codec {
    pub fn new(kind: CodecKind) -> Self {
        Codec {
            kind,
            onehot: OneHotRelaxation::Signed,
            r_min: 0.0,
        }
    }
}

impl From<CodecKind> for Codec {
    fn from(kind: CodecKind) -> Self {
        Codec::new(kind)
    }
}

/// Result of decoding one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decoded {
    pub index: usize,
    /// The raw decode fell outside `[0, K)` and was cast to index 0.
    pub cast: bool,
}

impl Decoded {
    fn ok(index: usize) -> Self {
        Decoded { index, cast: false }
    }

    fn cast() -> Self {
        Decoded { index: 0, cast: true }
    }
}

/// `⌈log₂ K⌉` for `K ≥ 2`.
pub fn bits_for(k: usize) -> usize {
    (usize::BITS - (k - 1).leading_zeros()) as usize
}

/// Encoded width of one column with `k` categories.
pub fn width(kind: CodecKind, k: usize) -> usize {
    match kind {
        CodecKind::CatConverter => 2,
        CodecKind::OneHot => k,
        CodecKind::AnalogBits => bits_for(k),
        CodecKind::Dictionary => 1,
    }
}

/// Phase point of category `c` of `k`.
pub fn phase_point(c: usize, k: usize) -> [f64; 2] {
    let theta = 2.0 * PI * c as f64 / k as f64;
    [theta.cos(), theta.sin()]
}

/// Encode category `c` of `k` into `out` (length [`width`]).
pub fn cat_encode_into(codec: &Codec, c: usize, k: usize, out: &mut [f64]) -> Result<()> {
    if k < 2 || c >= k {
        return Err(Error::invalid(format!("category {c} out of range for K={k}")));
    }
    debug_assert_eq!(out.len(), width(codec.kind, k));
    match codec.kind {
        CodecKind::CatConverter => out.copy_from_slice(&phase_point(c, k)),
        CodecKind::OneHot => match codec.onehot {
            OneHotRelaxation::Signed => {
                out.fill(-1.0);
                out[c] = 1.0;
            }
            OneHotRelaxation::Softmax { temperature } => {
                let hot = (1.0 / temperature).exp();
                let total = hot + (k - 1) as f64;
                out.fill(1.0 / total);
                out[c] = hot / total;
            }
        },
        CodecKind::AnalogBits => {
            let bits = out.len();
            for (i, o) in out.iter_mut().enumerate() {
                let bit = (c >> (bits - 1 - i)) & 1;
                *o = 2.0 * bit as f64 - 1.0;
            }
        }
        CodecKind::Dictionary => out[0] = -1.0 + 2.0 * c as f64 / (k - 1) as f64,
    }
    Ok(())
}

pub fn cat_encode(codec: &Codec, c: usize, k: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; width(codec.kind, k)];
    cat_encode_into(codec, c, k, &mut out)?;
    Ok(out)
}

/// Nearest of two neighbouring grid indices; exact ties go to the smaller one.
fn round_half_to_smaller(x: f64, k: usize) -> usize {
    let lo = x.floor();
    let frac = x - lo;
    let lo = (lo as i64).rem_euclid(k as i64) as usize;
    let hi = (lo + 1) % k;
    if frac < 0.5 {
        lo
    } else if frac > 0.5 {
        hi
    } else {
        lo.min(hi)
    }
}

/// Decode a width-`w` vector back to a category index of `k`.
pub fn cat_decode(codec: &Codec, v: &[f64], k: usize) -> Decoded {
    match codec.kind {
        CodecKind::CatConverter => {
            let (x, y) = (v[0], v[1]);
            let norm = x.hypot(y);
            if !norm.is_finite() || norm <= codec.r_min || norm == 0.0 {
                return Decoded::cast();
            }
            let mut phi = y.atan2(x);
            if phi < 0.0 {
                phi += 2.0 * PI;
            }
            Decoded::ok(round_half_to_smaller(phi * k as f64 / (2.0 * PI), k))
        }
        CodecKind::OneHot => {
            let mut best: Option<(usize, f64)> = None;
            for (i, &x) in v.iter().enumerate() {
                if x.is_nan() {
                    continue;
                }
                if best.is_none_or(|(_, b)| x > b) {
                    best = Some((i, x));
                }
            }
            best.map_or_else(Decoded::cast, |(i, _)| Decoded::ok(i))
        }
        CodecKind::AnalogBits => {
            if v.iter().any(|x| x.is_nan()) {
                return Decoded::cast();
            }
            let value = v.iter().fold(0usize, |acc, &x| (acc << 1) | usize::from(x > 0.0));
            if value < k {
                Decoded::ok(value)
            } else {
                Decoded::cast()
            }
        }
        CodecKind::Dictionary => {
            let x = v[0];
            if !x.is_finite() {
                return Decoded::cast();
            }
            let pos = ((x + 1.0) * (k - 1) as f64 / 2.0).clamp(0.0, (k - 1) as f64);
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            let idx = if frac > 0.5 { lo + 1 } else { lo };
            Decoded::ok(idx.min(k - 1))
        }
    }
}
