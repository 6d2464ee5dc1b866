//! Run-length index coding and the `IFC1` binary container.
//!
//! Stream layout (integers little-endian):
//!   magic "IFC1" | u32 n | u32 r | u32 d | u8 exponent_bits |
//!   u8 bm_fraction_bits | u8 bm_word_bits | i8 layer_scale_exponent |
//!   BM section | index section | CM section
//!
//! BM section: r*d fixed-point words, row-major, two's complement,
//! MSB-first bit packing, zero-padded to a byte boundary.
//! Index section: ULEB128 run lengths — the count of zero rows before each
//! stored row, plus one terminal run of trailing zeros (nnz+1 entries).
//! CM section: stored rows in order; each of the r entries packs
//! zero-flag(1) | sign(1) | exponent field(exponent_bits), MSB-first,
//! zero-padded to a byte boundary at the end of the section. The exponent
//! field holds e - e_min with e_min = layer_scale_exponent - 2^(eb-1).
//!
//! The bit budget records exact payload bits per section (padding excluded);
//! a serialized section occupies ceil(bits/8) bytes.

use super::bits::{read_uleb128, uleb128_len, write_uleb128, BitReader, BitWriter};
use super::quant::QCoeff;
use super::{
    BasisMatrix, BitBudget, CmRow, CoefficientMatrix, CompressError, CompressedLayer,
};
use ndarray::Array2;

const MAGIC: &[u8; 4] = b"IFC1";
const HEADER_BYTES: usize = 20;

/// Bits per packed CM entry: zero flag + sign + exponent field.
pub fn cm_entry_bits(exponent_bits: u8) -> u64 {
    2 + u64::from(exponent_bits)
}

fn compute_budget(
    bm: &BasisMatrix,
    nnz_rows: usize,
    rank: usize,
    exponent_bits: u8,
    rle_index: &[u64],
) -> BitBudget {
    BitBudget {
        bm_bits: (bm.rank() * bm.dim()) as u64 * u64::from(bm.word_bits),
        cm_bits: nnz_rows as u64 * rank as u64 * cm_entry_bits(exponent_bits),
        index_bits: 8 * rle_index.iter().map(|&r| uleb128_len(r) as u64).sum::<u64>(),
    }
}

/// Encode a coefficient matrix against its basis: keep only nonzero rows and
/// the run-length index, with an exact bit budget.
pub fn rle_encode(bm: BasisMatrix, cm: &CoefficientMatrix) -> Result<CompressedLayer, CompressError> {
    if bm.rank() != cm.rank {
        return Err(CompressError::ShapeMismatch(format!(
            "basis rank {} vs coefficient rank {}",
            bm.rank(),
            cm.rank
        )));
    }
    let span = (cm.e_max - cm.e_min + 1) as u64;
    if span > (1u64 << cm.exponent_bits) {
        return Err(CompressError::BadOptions(format!(
            "exponent range [{}, {}] does not fit in {} bits",
            cm.e_min, cm.e_max, cm.exponent_bits
        )));
    }
    let mut nonzero_rows = Vec::new();
    let mut rle_index = Vec::new();
    let mut run = 0u64;
    for row in &cm.rows {
        match row {
            CmRow::Zero => run += 1,
            CmRow::Dense(coeffs) => {
                if coeffs.len() != cm.rank {
                    return Err(CompressError::ShapeMismatch(format!(
                        "stored row has {} entries, rank is {}",
                        coeffs.len(),
                        cm.rank
                    )));
                }
                rle_index.push(run);
                run = 0;
                nonzero_rows.push(coeffs.clone());
            }
        }
    }
    rle_index.push(run);
    let bit_budget = compute_budget(&bm, nonzero_rows.len(), cm.rank, cm.exponent_bits, &rle_index);
    Ok(CompressedLayer {
        bm,
        nonzero_rows,
        rle_index,
        num_rows: cm.rows.len(),
        exponent_bits: cm.exponent_bits,
        e_min: cm.e_min,
        e_max: cm.e_max,
        bit_budget,
    })
}

/// Exact inverse of [`rle_encode`]: rebuild the full coefficient matrix.
/// Fails when the run lengths are inconsistent with the declared row count.
pub fn rle_decode(layer: &CompressedLayer) -> Result<CoefficientMatrix, CompressError> {
    if layer.rle_index.len() != layer.nonzero_rows.len() + 1 {
        return Err(CompressError::Corrupt(format!(
            "index has {} entries for {} stored rows",
            layer.rle_index.len(),
            layer.nonzero_rows.len()
        )));
    }
    let mut rows = Vec::with_capacity(layer.num_rows);
    for (k, &run) in layer.rle_index.iter().enumerate() {
        for _ in 0..run {
            rows.push(CmRow::Zero);
        }
        if k < layer.nonzero_rows.len() {
            rows.push(CmRow::Dense(layer.nonzero_rows[k].clone()));
        }
    }
    if rows.len() != layer.num_rows {
        return Err(CompressError::Corrupt(format!(
            "runs + stored rows give {} rows, declared {}",
            rows.len(),
            layer.num_rows
        )));
    }
    Ok(CoefficientMatrix {
        rows,
        rank: layer.rank(),
        exponent_bits: layer.exponent_bits,
        e_min: layer.e_min,
        e_max: layer.e_max,
    })
}

impl CompressedLayer {
    pub fn to_bytes(&self) -> Result<Vec<u8>, CompressError> {
        let eb = self.exponent_bits;
        let half = 1i32 << (eb - 1);
        let scale = self.e_min + half;
        if scale < i32::from(i8::MIN) || scale > i32::from(i8::MAX) {
            return Err(CompressError::BadOptions(format!(
                "layer scale exponent {scale} does not fit i8"
            )));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.num_rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.rank() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.push(eb);
        out.push(self.bm.fraction_bits);
        out.push(self.bm.word_bits);
        out.push(scale as i8 as u8);
        debug_assert_eq!(out.len(), HEADER_BYTES);

        // BM section.
        let wb = u32::from(self.bm.word_bits);
        let mask = if wb == 64 { u64::MAX } else { (1u64 << wb) - 1 };
        let mut w = BitWriter::new();
        for v in self.bm.raw().iter() {
            w.write_bits((*v as u64) & mask, wb);
        }
        debug_assert_eq!(w.bit_len(), self.bit_budget.bm_bits);
        out.extend_from_slice(&w.into_bytes());

        // Index section.
        let mut idx_bytes = Vec::new();
        for &run in &self.rle_index {
            write_uleb128(&mut idx_bytes, run);
        }
        debug_assert_eq!(idx_bytes.len() as u64 * 8, self.bit_budget.index_bits);
        out.extend_from_slice(&idx_bytes);

        // CM section.
        let mut w = BitWriter::new();
        for row in &self.nonzero_rows {
            for coeff in row {
                match coeff {
                    QCoeff::Zero => {
                        w.write_bits(1, 1);
                        w.write_bits(0, 1 + u32::from(eb));
                    }
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
                        w.write_bits(0, 1);
                        w.write_bits(u64::from(*negative), 1);
                        w.write_bits((exponent - self.e_min) as u64, u32::from(eb));
                    }
                }
            }
        }
        debug_assert_eq!(w.bit_len(), self.bit_budget.cm_bits);
        out.extend_from_slice(&w.into_bytes());
        Ok(out)
    }

    /// Parse an `IFC1` stream. The declared exponent range is recovered as
    /// the full representable span of the field.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CompressError> {
        if bytes.len() < HEADER_BYTES || &bytes[0..4] != MAGIC {
            return Err(CompressError::Corrupt("missing IFC1 header".into()));
        }
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let r = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let eb = bytes[16];
        let fraction_bits = bytes[17];
        let word_bits = bytes[18];
        let scale = bytes[19] as i8;
        if r == 0 || d == 0 || eb == 0 || eb > 32 || word_bits < 2 || word_bits > 32 {
            return Err(CompressError::Corrupt("implausible header fields".into()));
        }
        let e_min = i32::from(scale) - (1i32 << (eb - 1));
        let e_max = e_min + (1i32 << eb) - 1;

        let mut offset = HEADER_BYTES;
        // BM section.
        let bm_bits = (r * d) as u64 * u64::from(word_bits);
        let bm_bytes = bm_bits.div_ceil(8) as usize;
        if bytes.len() < offset + bm_bytes {
            return Err(CompressError::Corrupt("BM section truncated".into()));
        }
        let mut reader = BitReader::new(&bytes[offset..offset + bm_bytes]);
        let mut raw = Array2::zeros((r, d));
        let wb = u32::from(word_bits);
        for i in 0..r {
            for j in 0..d {
                let bits = reader.read_bits(wb)?;
                // Sign-extend the word.
                let shift = 64 - wb;
                raw[[i, j]] = (((bits << shift) as i64) >> shift) as i64;
            }
        }
        offset += bm_bytes;

        // Index section: runs until they account for all n rows.
        let mut rle_index = Vec::new();
        let mut acc: u64 = 0;
        let mut nnz = 0usize;
        loop {
            let mut pos = offset;
            let run = read_uleb128(bytes, &mut pos)?;
            offset = pos;
            rle_index.push(run);
            acc += run;
            if acc == n as u64 {
                break;
            }
            if acc > n as u64 {
                return Err(CompressError::Corrupt(format!(
                    "run lengths overrun declared row count {n}"
                )));
            }
            acc += 1; // the stored row that follows this run
            nnz += 1;
        }

        // CM section.
        let entry_bits = cm_entry_bits(eb);
        let cm_bits = nnz as u64 * r as u64 * entry_bits;
        let cm_bytes = cm_bits.div_ceil(8) as usize;
        if bytes.len() != offset + cm_bytes {
            return Err(CompressError::Corrupt(format!(
                "CM section: {} bytes present, {} expected",
                bytes.len() - offset,
                cm_bytes
            )));
        }
        let mut reader = BitReader::new(&bytes[offset..]);
        let mut nonzero_rows = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            let mut row = Vec::with_capacity(r);
            for _ in 0..r {
                let zero_flag = reader.read_bits(1)?;
                let sign = reader.read_bits(1)?;
                let field = reader.read_bits(u32::from(eb))?;
                row.push(if zero_flag == 1 {
                    QCoeff::Zero
                } else {
                    QCoeff::Pow2 {
                        negative: sign == 1,
                        exponent: e_min + field as i32,
                    }
                });
            }
            nonzero_rows.push(row);
        }

        let bm = BasisMatrix::from_raw(raw, fraction_bits, word_bits);
        let bit_budget = compute_budget(&bm, nnz, r, eb, &rle_index);
        Ok(CompressedLayer {
            bm,
            nonzero_rows,
            rle_index,
            num_rows: n,
            exponent_bits: eb,
            e_min,
            e_max,
            bit_budget,
        })
    }
}

/// Byte sizes of the header and the three sections, measured by walking an
/// actual serialized stream (the index section is found by consuming its
/// self-delimiting varints; the CM section is the remainder).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SectionSizes {
    pub header_bytes: usize,
    pub bm_bytes: usize,
    pub index_bytes: usize,
    pub cm_bytes: usize,
}

pub fn measure_sections(bytes: &[u8]) -> Result<SectionSizes, CompressError> {
    if bytes.len() < HEADER_BYTES || &bytes[0..4] != MAGIC {
        return Err(CompressError::Corrupt("missing IFC1 header".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as u64;
    let r = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as u64;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as u64;
    let word_bits = u64::from(bytes[18]);
    let bm_bytes = (r * d * word_bits).div_ceil(8) as usize;
    let mut offset = HEADER_BYTES + bm_bytes;
    let idx_start = offset;
    let mut acc = 0u64;
    loop {
        let mut pos = offset;
        let run = read_uleb128(bytes, &mut pos)?;
        offset = pos;
        acc += run;
        if acc == n {
            break;
        }
        if acc > n {
            return Err(CompressError::Corrupt("runs overrun row count".into()));
        }
        acc += 1;
    }
    Ok(SectionSizes {
        header_bytes: HEADER_BYTES,
        bm_bytes,
        index_bytes: offset - idx_start,
        cm_bytes: bytes.len() - offset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bm(r: usize, d: usize) -> BasisMatrix {
        let m = Array2::from_shape_fn((r, d), |(i, j)| (i as f64 - j as f64) / 8.0);
        BasisMatrix::from_real(&m, 8, 16)
    }

    fn coeff(e: i32) -> QCoeff {
        QCoeff::Pow2 {
            negative: e % 2 == 0,
            exponent: e,
        }
    }

    fn cm_from_mask(mask: &[bool], rank: usize) -> CoefficientMatrix {
        let rows = mask
            .iter()
            .enumerate()
            .map(|(i, &nz)| {
                if nz {
                    CmRow::Dense((0..rank).map(|j| coeff(-((i + j) as i32 % 8))).collect())
                } else {
                    CmRow::Zero
                }
            })
            .collect();
        CoefficientMatrix {
            rows,
            rank,
            exponent_bits: 4,
            e_min: -8,
            e_max: 7,
        }
    }

    #[test]
    fn rle_index_examples() {
        // [Z, Z, N, Z, N] -> [2, 1, 0]
        let cm = cm_from_mask(&[false, false, true, false, true], 3);
        let layer = rle_encode(bm(3, 4), &cm).unwrap();
        assert_eq!(layer.rle_index, vec![2, 1, 0]);

        // all nonzero, n=4 -> [0, 0, 0, 0, 0]
        let cm = cm_from_mask(&[true; 4], 3);
        let layer = rle_encode(bm(3, 4), &cm).unwrap();
        assert_eq!(layer.rle_index, vec![0, 0, 0, 0, 0]);

        // all zero, n=5 -> [5], no stored rows
        let cm = cm_from_mask(&[false; 5], 3);
        let layer = rle_encode(bm(3, 4), &cm).unwrap();
        assert_eq!(layer.rle_index, vec![5]);
        assert!(layer.nonzero_rows.is_empty());
    }

    #[test]
    fn decode_inverts_encode() {
        for mask in [
            vec![false, false, true, false, true],
            vec![true; 4],
            vec![false; 5],
            vec![true, false, false, true, true, false],
        ] {
            let cm = cm_from_mask(&mask, 2);
            let layer = rle_encode(bm(2, 3), &cm).unwrap();
            let back = rle_decode(&layer).unwrap();
            assert_eq!(back, cm);
        }
    }

    #[test]
    fn inconsistent_runs_rejected() {
        let cm = cm_from_mask(&[true, false, true], 2);
        let mut layer = rle_encode(bm(2, 3), &cm).unwrap();
        layer.rle_index = vec![0, 0, 0]; // sums to n-1 with 2 stored rows
        assert!(rle_decode(&layer).is_err());
    }

    #[test]
    fn byte_round_trip_and_measured_sections() {
        let cm = cm_from_mask(&[true, false, false, true, true, false, false, false], 3);
        let layer = rle_encode(bm(3, 5), &cm).unwrap();
        let bytes = layer.to_bytes().unwrap();
        let back = CompressedLayer::from_bytes(&bytes).unwrap();
        assert_eq!(back.nonzero_rows, layer.nonzero_rows);
        assert_eq!(back.rle_index, layer.rle_index);
        assert_eq!(back.bm, layer.bm);
        assert_eq!(back.num_rows, layer.num_rows);
        assert_eq!(back.bit_budget, layer.bit_budget);

        let sizes = measure_sections(&bytes).unwrap();
        assert_eq!(sizes.bm_bytes as u64, layer.bit_budget.bm_bits.div_ceil(8));
        assert_eq!(sizes.index_bytes as u64 * 8, layer.bit_budget.index_bits);
        assert_eq!(sizes.cm_bytes as u64, layer.bit_budget.cm_bits.div_ceil(8));
        assert_eq!(
            bytes.len(),
            sizes.header_bytes + sizes.bm_bytes + sizes.index_bytes + sizes.cm_bytes
        );
    }

    #[test]
    fn budget_matches_documented_arithmetic() {
        // 32x16 PW-style case: rank 4, half the 32 rows pruned, 4-bit
        // exponents, 16 stored rows -> cm = 16*4*6 = 384 bits.
        let mask: Vec<bool> = (0..32).map(|i| i % 2 == 0).collect();
        let cm = cm_from_mask(&mask, 4);
        let layer = rle_encode(bm(4, 16), &cm).unwrap();
        assert_eq!(layer.bit_budget.cm_bits, 16 * 4 * 6);
        assert_eq!(layer.bit_budget.bm_bits, 4 * 16 * 16);
        // 17 single-byte runs.
        assert_eq!(layer.bit_budget.index_bits, 17 * 8);
    }

    #[test]
    fn out_of_range_exponent_rejected_at_serialization() {
        let mut bad = rle_encode(bm(2, 3), &cm_from_mask(&[true], 2)).unwrap();
        bad.nonzero_rows = vec![vec![
            QCoeff::Pow2 {
                negative: false,
                exponent: 99,
            };
            2
        ]];
        assert!(matches!(
            bad.to_bytes(),
            Err(CompressError::ExponentRange { .. })
        ));
    }
}
