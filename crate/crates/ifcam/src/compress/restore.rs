//! Shift-and-add weight restoration.
//!
//! A restored row is sum_j sign_j * (BM row j << (e_j - e_min)) computed
//! purely on the integer fixed-point words. The accumulator carries
//! fraction_bits - e_min fractional bits, so every power-of-2 scaling is an
//! exact left shift and the result equals the exact rational product C*B
//! bit for bit.

use std::ops::Range;

use ndarray::Array2;

use super::quant::QCoeff;
use super::{CompressError, CompressedLayer};

/// Dense fixed-point rows produced by the restore engine. The real value of
/// an entry is raw * 2^(-fraction_bits).
#[derive(Debug, Clone, PartialEq)]
pub struct RestoredRows {
    raw: Array2<i128>,
    fraction_bits: i32,
}

impl RestoredRows {
    pub fn raw(&self) -> &Array2<i128> {
        &self.raw
    }

    pub fn fraction_bits(&self) -> i32 {
        self.fraction_bits
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.raw[[i, j]] as f64 * 2f64.powi(-self.fraction_bits)
    }

    pub fn to_f64(&self) -> Array2<f64> {
        let scale = 2f64.powi(-self.fraction_bits);
        self.raw.mapv(|v| v as f64 * scale)
    }
}

impl CompressedLayer {
    /// Restore the requested stack rows. Pruned rows restore to zero
    /// vectors; stored rows are rebuilt with shifts and adds only.
    pub fn restore_rows(&self, range: Range<usize>) -> Result<RestoredRows, CompressError> {
        if range.start > range.end || range.end > self.num_rows {
            return Err(CompressError::RowRange(
                range.start,
                range.end,
                self.num_rows,
            ));
        }
        // Width check: word + exponent span + log2(rank) must fit i128.
        let span = (self.e_max - self.e_min) as u32;
        let rank_bits = usize::BITS - self.rank().leading_zeros();
        if u32::from(self.bm.word_bits) + span + rank_bits >= 120 {
            return Err(CompressError::BadOptions(
                "accumulator width exceeded; narrow the exponent range".into(),
            ));
        }
        let d = self.dim();
        let map = self.row_map();
        let mut out = Array2::<i128>::zeros((range.len(), d));
        for (local, row) in range.clone().enumerate() {
            let Some(stored) = map[row] else { continue };
            let coeffs = &self.nonzero_rows[stored];
            for (j, coeff) in coeffs.iter().enumerate() {
                match coeff {
                    QCoeff::Zero => {}
                    QCoeff::Pow2 {
                        negative,
                        exponent,
                    } => {
                        if *exponent < self.e_min || *exponent > self.e_max {
                            return Err(CompressError::ExponentRange {
                                exponent: *exponent,
                                e_min: self.e_min,
                                e_max: self.e_max,
                            });
                        }
                        let shift = (exponent - self.e_min) as u32;
                        for col in 0..d {
                            let term = i128::from(self.bm.raw()[[j, col]]) << shift;
                            if *negative {
                                out[[local, col]] -= term;
                            } else {
                                out[[local, col]] += term;
                            }
                        }
                    }
                }
            }
        }
        Ok(RestoredRows {
            raw: out,
            fraction_bits: i32::from(self.bm.fraction_bits) - self.e_min,
        })
    }

    /// Restore the whole stack as f64 (exact for realistic widths).
    pub fn restore_all_f64(&self) -> Result<Array2<f64>, CompressError> {
        Ok(self.restore_rows(0..self.num_rows)?.to_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::{rle_encode, BasisMatrix, CmRow, CoefficientMatrix};
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pow2_rational(e: i32) -> BigRational {
        if e >= 0 {
            BigRational::from_integer(BigInt::from(1u8) << e as usize)
        } else {
            BigRational::new(BigInt::from(1u8), BigInt::from(1u8) << (-e) as usize)
        }
    }

    /// Oracle: exact rational product C*B with no rounding anywhere.
    fn rational_product(layer: &CompressedLayer) -> Vec<Vec<BigRational>> {
        let d = layer.dim();
        let fb = i32::from(layer.bm.fraction_bits);
        let map = layer.row_map();
        let mut out = vec![vec![BigRational::from_integer(BigInt::from(0)); d]; layer.num_rows];
        for (row, slot) in map.iter().enumerate() {
            let Some(k) = slot else { continue };
            for (j, coeff) in layer.nonzero_rows[*k].iter().enumerate() {
                let QCoeff::Pow2 {
                    negative,
                    exponent,
                } = coeff
                else {
                    continue;
                };
                let mut c = pow2_rational(*exponent);
                if *negative {
                    c = -c;
                }
                for col in 0..d {
                    let b = BigRational::new(
                        BigInt::from(layer.bm.raw()[[j, col]]),
                        BigInt::from(1u8) << fb as usize,
                    );
                    out[row][col] += &c * b;
                }
            }
        }
        out
    }

    fn random_layer(seed: u64, n: usize, r: usize, d: usize) -> CompressedLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bm_real =
            Array2::from_shape_fn((r, d), |_| (rng.random_range(-30000i64..30000) as f64) / 256.0);
        let bm = BasisMatrix::from_real(&bm_real, 8, 16);
        let rows: Vec<CmRow> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < 0.4 {
                    CmRow::Zero
                } else {
                    CmRow::Dense(
                        (0..r)
                            .map(|_| {
                                if rng.random::<f64>() < 0.2 {
                                    QCoeff::Zero
                                } else {
                                    QCoeff::Pow2 {
                                        negative: rng.random::<bool>(),
                                        exponent: rng.random_range(-8i32..8),
                                    }
                                }
                            })
                            .collect(),
                    )
                }
            })
            .collect();
        let cm = CoefficientMatrix {
            rows,
            rank: r,
            exponent_bits: 4,
            e_min: -8,
            e_max: 7,
        };
        rle_encode(bm, &cm).unwrap()
    }

    #[test]
    fn identity_basis_selects_rows() {
        let d = 4;
        let mut eye = Array2::zeros((d, d));
        for i in 0..d {
            eye[[i, i]] = 1.0;
        }
        let bm = BasisMatrix::from_real(&eye, 8, 16);
        let mut rows = vec![CmRow::Zero; 3];
        let mut unit = vec![QCoeff::Zero; d];
        unit[2] = QCoeff::Pow2 {
            negative: false,
            exponent: 0,
        };
        rows[1] = CmRow::Dense(unit);
        let cm = CoefficientMatrix {
            rows,
            rank: d,
            exponent_bits: 4,
            e_min: -8,
            e_max: 7,
        };
        let layer = rle_encode(bm, &cm).unwrap();
        let restored = layer.restore_all_f64().unwrap();
        for col in 0..d {
            assert_eq!(restored[[0, col]], 0.0);
            assert_eq!(restored[[2, col]], 0.0);
            let expect = if col == 2 { 1.0 } else { 0.0 };
            assert_eq!(restored[[1, col]], expect);
        }
    }

    #[test]
    fn single_negative_halving_coefficient() {
        // CM row [-2^-1], BM row [0.5, 0.25] at 8 fraction bits ->
        // restored [-0.25, -0.125], exactly.
        let bm = BasisMatrix::from_real(&ndarray::array![[0.5, 0.25]], 8, 16);
        let cm = CoefficientMatrix {
            rows: vec![CmRow::Dense(vec![QCoeff::Pow2 {
                negative: true,
                exponent: -1,
            }])],
            rank: 1,
            exponent_bits: 4,
            e_min: -8,
            e_max: 7,
        };
        let layer = rle_encode(bm, &cm).unwrap();
        let restored = layer.restore_rows(0..1).unwrap();
        assert_eq!(restored.value(0, 0), -0.25);
        assert_eq!(restored.value(0, 1), -0.125);
        // Accumulator fraction bits: 8 - (-8) = 16.
        assert_eq!(restored.fraction_bits(), 16);
    }

    #[test]
    fn shift_add_equals_rational_product() {
        for seed in 0..50 {
            let layer = random_layer(seed, 12, 4, 6);
            let restored = layer.restore_rows(0..12).unwrap();
            let oracle = rational_product(&layer);
            for i in 0..12 {
                for j in 0..6 {
                    let got = BigRational::new(
                        BigInt::from(restored.raw()[[i, j]]),
                        BigInt::from(1u8) << restored.fraction_bits() as usize,
                    );
                    assert_eq!(got, oracle[i][j], "seed {seed} entry ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn row_range_validated() {
        let layer = random_layer(1, 5, 2, 3);
        assert!(layer.restore_rows(0..6).is_err());
        assert!(layer.restore_rows(2..5).is_ok());
    }
}
