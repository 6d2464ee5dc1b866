//! MSB-first bit packing and ULEB128 varints for the compressed-layer
//! container.

use super::CompressError;

/// Accumulates bit fields MSB-first; the final byte is zero-padded.
pub struct BitWriter {
    bytes: Vec<u8>,
    bits_used: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self {
            bytes: Vec::new(),
            bits_used: 0,
        }
    }

    pub fn write_bits(&mut self, value: u64, nbits: u32) {
        assert!(nbits <= 64);
        for i in (0..nbits).rev() {
            let bit = (value >> i) & 1;
            let byte_idx = (self.bits_used / 8) as usize;
            if byte_idx == self.bytes.len() {
                self.bytes.push(0);
            }
            let shift = 7 - (self.bits_used % 8);
            self.bytes[byte_idx] |= (bit as u8) << shift;
            self.bits_used += 1;
        }
    }

    /// Bits written so far, excluding final-byte padding.
    pub fn bit_len(&self) -> u64 {
        self.bits_used
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

impl Default for BitWriter {
    fn default() -> Self {
        Self::new()
    }
}

pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn read_bits(&mut self, nbits: u32) -> Result<u64, CompressError> {
        let mut v = 0u64;
        for _ in 0..nbits {
            let byte_idx = (self.pos / 8) as usize;
            if byte_idx >= self.bytes.len() {
                return Err(CompressError::Corrupt("bitstream truncated".into()));
            }
            let shift = 7 - (self.pos % 8);
            v = (v << 1) | u64::from((self.bytes[byte_idx] >> shift) & 1);
            self.pos += 1;
        }
        Ok(v)
    }
}

pub fn write_uleb128(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            break;
        }
        out.push(byte | 0x80);
    }
}

pub fn read_uleb128(bytes: &[u8], pos: &mut usize) -> Result<u64, CompressError> {
    let mut v: u64 = 0;
    let mut shift = 0u32;
    loop {
        let byte = *bytes
            .get(*pos)
            .ok_or_else(|| CompressError::Corrupt("uleb128 truncated".into()))?;
        *pos += 1;
        if shift >= 64 {
            return Err(CompressError::Corrupt("uleb128 overflow".into()));
        }
        v |= u64::from(byte & 0x7f) << shift;
        if byte & 0x80 == 0 {
            return Ok(v);
        }
        shift += 7;
    }
}

/// Encoded byte length of a ULEB128 value.
pub fn uleb128_len(v: u64) -> usize {
    if v == 0 {
        return 1;
    }
    ((64 - v.leading_zeros() as usize) + 6) / 7
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bits_round_trip_msb_first() {
        let mut w = BitWriter::new();
        w.write_bits(0b101, 3);
        w.write_bits(0b01, 2);
        w.write_bits(0xab, 8);
        assert_eq!(w.bit_len(), 13);
        let bytes = w.into_bytes();
        assert_eq!(bytes.len(), 2);
        // 101 01 101010 | 11 (padded with zeros)
        assert_eq!(bytes[0], 0b1010_1101);
        assert_eq!(bytes[1], 0b0101_1000);
        let mut r = BitReader::new(&bytes);
        assert_eq!(r.read_bits(3).unwrap(), 0b101);
        assert_eq!(r.read_bits(2).unwrap(), 0b01);
        assert_eq!(r.read_bits(8).unwrap(), 0xab);
    }

    #[test]
    fn uleb_round_trip_and_length() {
        for v in [0u64, 1, 127, 128, 300, 16383, 16384, u32::MAX as u64] {
            let mut out = Vec::new();
            write_uleb128(&mut out, v);
            assert_eq!(out.len(), uleb128_len(v));
            let mut pos = 0;
            assert_eq!(read_uleb128(&out, &mut pos).unwrap(), v);
            assert_eq!(pos, out.len());
        }
    }
}
