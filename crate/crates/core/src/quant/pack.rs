use crate::error::{Error, Result};

use super::BitWidth;

/// Bytes needed for `count` codes of width `bits`.
#[inline]
pub fn packed_len(count: usize, bits: BitWidth) -> usize {
    (count * bits.bits() as usize).div_ceil(8)
}

/// Packs codes LSB-first: code `i` occupies stream bits `[i·b, (i+1)·b)`.
pub fn pack(codes: &[u8], bits: BitWidth) -> Result<Vec<u8>> {
    let b = bits.bits() as usize;
    let max = bits.max_code();
    let mut out = vec![0u8; packed_len(codes.len(), bits)];
    for (i, &c) in codes.iter().enumerate() {
        if u32::from(c) > max {
            return Err(Error::invalid(format!(
                "code {c} at position {i} exceeds {b}-bit range"
            )));
        }
        let bit = i * b;
        // widths divide 8, so a code never straddles a byte
        out[bit / 8] |= c << (bit % 8);
    }
    Ok(out)
}

pub fn unpack(bytes: &[u8], bits: BitWidth, count: usize) -> Result<Vec<u8>> {
    let expected = packed_len(count, bits);
    if bytes.len() != expected {
        return Err(Error::decode(format!(
            "{count} codes of {} bits need {expected} bytes, got {}",
            bits.bits(),
            bytes.len()
        )));
    }
    let b = bits.bits() as usize;
    let mask = bits.max_code() as u8;
    Ok((0..count)
        .map(|i| {
            let bit = i * b;
            (bytes[bit / 8] >> (bit % 8)) & mask
        })
        .collect())
}
