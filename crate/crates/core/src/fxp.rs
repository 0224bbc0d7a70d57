//! Fixed-point formats, quantization and the widened subtraction used on
//! every crossbar datapath.
//!
//! A format is `total_bits` wide (sign bit included when `signed`) with
//! `frac_bits` of them below the binary point. Values are carried as a raw
//! two's-complement integer; the real value is `raw * 2^-frac_bits`.
//!
//! Quantization rounds to nearest with ties away from zero and saturates at
//! the range endpoints. Saturation is reported to the caller, never hidden.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Widest format accepted for user-facing inputs.
pub const MAX_INPUT_BITS: u32 = 16;

/// Widest internal format (LUT outputs, widened differences, accumulators).
pub const MAX_WIDE_BITS: u32 = 48;

fn default_signed() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FxFormat {
    pub total_bits: u32,
    pub frac_bits: u32,
    #[serde(default = "default_signed")]
    pub signed: bool,
}

impl FxFormat {
    /// Builds a format, accepting widths up to [`MAX_WIDE_BITS`].
    pub fn new(total_bits: u32, frac_bits: u32, signed: bool) -> Result<Self> {
        let fmt = Self {
            total_bits,
            frac_bits,
            signed,
        };
        fmt.check(MAX_WIDE_BITS)?;
        Ok(fmt)
    }

    pub fn signed(total_bits: u32, frac_bits: u32) -> Result<Self> {
        Self::new(total_bits, frac_bits, true)
    }

    pub fn unsigned(total_bits: u32, frac_bits: u32) -> Result<Self> {
        Self::new(total_bits, frac_bits, false)
    }

    /// Checks the invariants of an input format (at most 16 bits).
    pub fn validate(&self) -> Result<()> {
        self.check(MAX_INPUT_BITS)
    }

    fn check(&self, max_bits: u32) -> Result<()> {
        if self.total_bits < 1 || self.total_bits > max_bits {
            return Err(Error::InvalidFormat(format!(
                "total_bits {} outside 1..={max_bits}",
                self.total_bits
            )));
        }
        if self.frac_bits >= self.total_bits {
            return Err(Error::InvalidFormat(format!(
                "frac_bits {} must be < total_bits {}",
                self.frac_bits, self.total_bits
            )));
        }
        Ok(())
    }

    pub fn min_raw(&self) -> i64 {
        if self.signed {
            -(1i64 << (self.total_bits - 1))
        } else {
            0
        }
    }

    pub fn max_raw(&self) -> i64 {
        if self.signed {
            (1i64 << (self.total_bits - 1)) - 1
        } else {
            (1i64 << self.total_bits) - 1
        }
    }

    /// Number of representable values, `2^total_bits`.
    pub fn cardinality(&self) -> usize {
        1usize << self.total_bits
    }

    pub fn step(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn scale(&self) -> f64 {
        (self.frac_bits as f64).exp2()
    }

    pub fn contains_raw(&self, raw: i64) -> bool {
        raw >= self.min_raw() && raw <= self.max_raw()
    }

    pub fn min_value(&self) -> FxValue {
        FxValue {
            raw: self.min_raw(),
            format: *self,
        }
    }

    pub fn max_value(&self) -> FxValue {
        FxValue {
            raw: self.max_raw(),
            format: *self,
        }
    }

    pub fn zero(&self) -> FxValue {
        FxValue {
            raw: 0,
            format: *self,
        }
    }

    pub fn from_raw(&self, raw: i64) -> Result<FxValue> {
        if !self.contains_raw(raw) {
            return Err(Error::InvalidFormat(format!(
                "raw {raw} outside [{}, {}] of {self}",
                self.min_raw(),
                self.max_raw()
            )));
        }
        Ok(FxValue { raw, format: *self })
    }

    /// Signed format one integer bit wider, large enough for any difference
    /// of two values in `self`.
    pub fn widened(&self) -> FxFormat {
        FxFormat {
            total_bits: self.total_bits + 1,
            frac_bits: self.frac_bits,
            signed: true,
        }
    }

    /// Unsigned format holding `|d|` for differences of values in `self`
    /// once the sign bit is removed: one bit narrower for signed inputs.
    pub fn magnitude_domain(&self) -> FxFormat {
        let total_bits = if self.signed {
            self.total_bits - 1
        } else {
            self.total_bits
        };
        FxFormat {
            total_bits: total_bits.max(self.frac_bits + 1),
            frac_bits: self.frac_bits,
            signed: false,
        }
    }
}

impl fmt::Display for FxFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}.{}",
            if self.signed { "s" } else { "u" },
            self.total_bits,
            self.frac_bits
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FxValue {
    pub raw: i64,
    pub format: FxFormat,
}

impl FxValue {
    pub fn to_f64(&self) -> f64 {
        self.raw as f64 * self.format.step()
    }
}

impl fmt::Display for FxValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

/// Result of a quantization: the value and whether it was clamped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quantized {
    pub value: FxValue,
    pub saturated: bool,
}

pub fn quantize(x: f64, fmt: FxFormat) -> Result<Quantized> {
    if !x.is_finite() {
        return Err(Error::NonFinite(x));
    }
    // Scaling by a power of two is exact; `round` breaks ties away from zero.
    let scaled = (x * fmt.scale()).round();
    let (lo, hi) = (fmt.min_raw(), fmt.max_raw());
    let (raw, saturated) = if scaled < lo as f64 {
        (lo, true)
    } else if scaled > hi as f64 {
        (hi, true)
    } else {
        (scaled as i64, false)
    };
    Ok(Quantized {
        value: FxValue { raw, format: fmt },
        saturated,
    })
}

pub fn dequantize(v: FxValue) -> f64 {
    v.to_f64()
}

/// `a - b` in the widened format of the operands. Never saturates.
pub fn fx_sub(a: FxValue, b: FxValue) -> Result<FxValue> {
    if a.format != b.format {
        return Err(Error::FormatMismatch {
            expected: a.format,
            actual: b.format,
        });
    }
    let out = a.format.widened();
    Ok(FxValue {
        raw: a.raw - b.raw,
        format: out,
    })
}

/// Rounds `num / den` to nearest, ties away from zero. `den` must be non-zero.
pub(crate) fn div_round(num: i128, den: i128) -> i128 {
    debug_assert!(den != 0);
    let (num, den) = if den < 0 { (-num, -den) } else { (num, den) };
    if num >= 0 {
        (2 * num + den) / (2 * den)
    } else {
        -((-2 * num + den) / (2 * den))
    }
}
