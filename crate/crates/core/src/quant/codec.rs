use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::pack::{pack, packed_len, unpack};

/// Candidate quantization widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum BitWidth {
    B2,
    B4,
    B8,
}

impl BitWidth {
    pub const ALL: [BitWidth; 3] = [BitWidth::B2, BitWidth::B4, BitWidth::B8];

    #[inline]
    pub fn bits(self) -> u32 {
        match self {
            BitWidth::B2 => 2,
            BitWidth::B4 => 4,
            BitWidth::B8 => 8,
        }
    }

    /// `2^b − 1`, the largest code.
    #[inline]
    pub fn max_code(self) -> u32 {
        (1 << self.bits()) - 1
    }

    /// `1/(2^b − 1)²`: the factor turning a message's variance weight into its
    /// variance contribution.
    #[inline]
    pub fn variance_factor(self) -> f64 {
        let l = self.max_code() as f64;
        1.0 / (l * l)
    }

    pub fn from_bits(b: u32) -> Result<Self> {
        match b {
            2 => Ok(BitWidth::B2),
            4 => Ok(BitWidth::B4),
            8 => Ok(BitWidth::B8),
            other => Err(Error::invalid(format!("unsupported bit-width {other}"))),
        }
    }
}

impl TryFrom<u8> for BitWidth {
    type Error = Error;

    fn try_from(b: u8) -> Result<Self> {
        BitWidth::from_bits(b.into())
    }
}

impl From<BitWidth> for u8 {
    fn from(b: BitWidth) -> u8 {
        b.bits() as u8
    }
}

impl std::fmt::Display for BitWidth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.bits())
    }
}

/// Bytes in a chunk header: bit-width (1), count (8), scale (8), zero-point (8).
pub const HEADER_LEN: usize = 25;

/// One quantized message vector.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedChunk {
    pub bits: BitWidth,
    /// `Z = min(h)`.
    pub zero_point: f64,
    /// `S = (max(h) − min(h)) / (2^b − 1)`; zero for a constant vector.
    pub scale: f64,
    pub count: usize,
    pub payload: Vec<u8>,
}

/// Stochastic integer quantization: `round_st((h − Z)/S)`.
///
/// Each element is rounded up with probability equal to its fractional part,
/// which makes `dequantize(quantize(h))` an unbiased estimate of `h`. Exactly
/// one uniform draw is consumed per element unless the vector is constant.
pub fn quantize<T: Scalar, R: Rng + ?Sized>(
    h: &[T],
    bits: BitWidth,
    rng: &mut R,
) -> Result<QuantizedChunk> {
    if h.is_empty() {
        return Err(Error::invalid("cannot quantize an empty vector"));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, x) in h.iter().enumerate() {
        let x = x.to_f64_lossless();
        if !x.is_finite() {
            return Err(Error::invalid(format!(
                "non-finite value {x} at position {i}"
            )));
        }
        lo = lo.min(x);
        hi = hi.max(x);
    }
    let max_code = bits.max_code();
    let scale = (hi - lo) / max_code as f64;
    let codes: Vec<u8> = if scale == 0.0 {
        vec![0; h.len()]
    } else {
        let top = max_code as f64;
        h.iter()
            .map(|x| {
                let scaled = ((x.to_f64_lossless() - lo) / scale).clamp(0.0, top);
                let floor = scaled.floor();
                let up = rng.gen::<f64>() < scaled - floor;
                (floor + if up { 1.0 } else { 0.0 }).min(top) as u8
            })
            .collect()
    };
    Ok(QuantizedChunk {
        bits,
        zero_point: lo,
        scale,
        count: h.len(),
        payload: pack(&codes, bits)?,
    })
}

/// `ĥ_i = code_i · S + Z`. A zero scale reproduces the constant exactly.
pub fn dequantize<T: Scalar>(c: &QuantizedChunk) -> Result<Vec<T>> {
    let codes = unpack(&c.payload, c.bits, c.count)?;
    if c.scale == 0.0 {
        return Ok(vec![T::of(c.zero_point); c.count]);
    }
    Ok(codes
        .into_iter()
        .map(|q| T::of(f64::from(q) * c.scale + c.zero_point))
        .collect())
}

impl QuantizedChunk {
    /// Total encoded size, header included.
    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encoded_len(count: usize, bits: BitWidth) -> usize {
        HEADER_LEN + packed_len(count, bits)
    }

    /// Appends the wire form: `b u8 | D u64 LE | S f64 LE | Z f64 LE | payload`.
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.push(self.bits.bits() as u8);
        out.extend_from_slice(&(self.count as u64).to_le_bytes());
        out.extend_from_slice(&self.scale.to_le_bytes());
        out.extend_from_slice(&self.zero_point.to_le_bytes());
        out.extend_from_slice(&self.payload);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        self.write_to(&mut out);
        out
    }

    /// Parses one chunk occupying all of `bytes`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::decode(format!(
                "chunk of {} bytes is shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        let bits =
            BitWidth::from_bits(bytes[0].into()).map_err(|e| Error::decode(e.to_string()))?;
        let count = u64::from_le_bytes(bytes[1..9].try_into().unwrap()) as usize;
        let scale = f64::from_le_bytes(bytes[9..17].try_into().unwrap());
        let zero_point = f64::from_le_bytes(bytes[17..25].try_into().unwrap());
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != packed_len(count, bits) {
            return Err(Error::decode(format!(
                "chunk payload is {} bytes, header implies {}",
                payload.len(),
                packed_len(count, bits)
            )));
        }
        if !(scale.is_finite() && scale >= 0.0 && zero_point.is_finite()) {
            return Err(Error::decode(
                "chunk header carries an invalid scale or zero-point",
            ));
        }
        Ok(QuantizedChunk {
            bits,
            zero_point,
            scale,
            count,
            payload: payload.to_vec(),
        })
    }
}
