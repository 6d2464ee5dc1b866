//! Power-of-2 quantization: values become 0 or a signed power of two, so a
//! multiply reduces to an arithmetic shift.

use serde::{Deserialize, Serialize};

/// One quantized coefficient: zero or +/- 2^exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QCoeff {
    Zero,
    Pow2 { negative: bool, exponent: i32 },
}

impl QCoeff {
    pub fn value(&self) -> f64 {
        match self {
            QCoeff::Zero => 0.0,
            QCoeff::Pow2 {
                negative,
                exponent,
            } => {
                let mag = 2f64.powi(*exponent);
                if *negative {
                    -mag
                } else {
                    mag
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, QCoeff::Zero)
    }
}

/// Quantize to sign(x) * 2^clamp(round(log2|x|), e_min, e_max), with rounding
/// done in the log domain (ties toward the larger exponent). Values with
/// |x| < 2^(e_min - 1) underflow to zero. Total: non-finite inputs map to
/// zero.
pub fn quantize_pow2(x: f64, e_min: i32, e_max: i32) -> QCoeff {
    debug_assert!(e_min <= e_max);
    let ax = x.abs();
    let threshold = 2f64.powi(e_min - 1);
    if !(ax >= threshold) || !ax.is_finite() {
        return QCoeff::Zero;
    }
    let l = ax.log2();
    let floor = l.floor();
    let e = if l - floor >= 0.5 {
        floor as i32 + 1
    } else {
        floor as i32
    };
    QCoeff::Pow2 {
        negative: x < 0.0,
        exponent: e.clamp(e_min, e_max),
    }
}
