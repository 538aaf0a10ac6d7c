//! Mixed-width message sets: many quantized vectors in one byte array.
//!
//! Messages are grouped by bit-width (ascending) and, inside a group, keep
//! their original order. Offsets follow from the widths and dimensions
//! alone, so the receiver builds the same [`RetrievalIndex`] from its copy of
//! the bit-width plan without it being sent.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::codec::{dequantize, quantize, BitWidth, QuantizedChunk};
use super::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IndexEntry {
    /// Position of the message in the sender's order.
    pub message: usize,
    pub bits: BitWidth,
    pub dim: usize,
    pub offset: usize,
    pub len: usize,
}

/// Where each message lives inside an encoded set.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct RetrievalIndex {
    /// Entries in wire order.
    pub entries: Vec<IndexEntry>,
    pub total_len: usize,
}

impl RetrievalIndex {
    pub fn build(dims: &[usize], bits: &[BitWidth]) -> Result<Self> {
        if dims.len() != bits.len() {
            return Err(Error::invalid(format!(
                "{} message dimensions but {} bit-widths",
                dims.len(),
                bits.len()
            )));
        }
        let mut order: Vec<usize> = (0..dims.len()).collect();
        order.sort_by_key(|&i| (bits[i], i));
        let mut offset = 0;
        let entries = order
            .into_iter()
            .map(|i| {
                let len = QuantizedChunk::encoded_len(dims[i], bits[i]);
                let e = IndexEntry {
                    message: i,
                    bits: bits[i],
                    dim: dims[i],
                    offset,
                    len,
                };
                offset += len;
                e
            })
            .collect();
        Ok(RetrievalIndex {
            entries,
            total_len: offset,
        })
    }

    pub fn num_messages(&self) -> usize {
        self.entries.len()
    }

    /// Encoded bytes per bit-width, in `BitWidth::ALL` order.
    pub fn bytes_per_width(&self) -> [usize; 3] {
        let mut out = [0; 3];
        for e in &self.entries {
            let slot = BitWidth::ALL.iter().position(|&b| b == e.bits).unwrap();
            out[slot] += e.len;
        }
        out
    }
}

fn check_messages<T>(messages: &[&[T]], bits: &[BitWidth]) -> Result<Vec<usize>> {
    if messages.len() != bits.len() {
        return Err(Error::invalid(format!(
            "{} messages but the plan covers {}",
            messages.len(),
            bits.len()
        )));
    }
    Ok(messages.iter().map(|m| m.len()).collect())
}

/// Quantizes every message with its assigned width and concatenates the
/// chunks in wire order. Message `i` draws from `stream_of(i)`.
pub fn encode_message_set<T: Scalar>(
    messages: &[&[T]],
    bits: &[BitWidth],
    stream_of: impl Fn(usize) -> RngStream,
) -> Result<(Vec<u8>, RetrievalIndex)> {
    let dims = check_messages(messages, bits)?;
    let index = RetrievalIndex::build(&dims, bits)?;
    let mut out = Vec::with_capacity(index.total_len);
    for e in &index.entries {
        let mut rng = stream_of(e.message).rng();
        quantize(messages[e.message], e.bits, &mut rng)?.write_to(&mut out);
    }
    debug_assert_eq!(out.len(), index.total_len);
    Ok((out, index))
}

/// Same bytes as [`encode_message_set`], with messages quantized in parallel.
pub fn encode_message_set_par<T: Scalar>(
    messages: &[&[T]],
    bits: &[BitWidth],
    stream_of: impl Fn(usize) -> RngStream + Sync,
) -> Result<(Vec<u8>, RetrievalIndex)> {
    let dims = check_messages(messages, bits)?;
    let index = RetrievalIndex::build(&dims, bits)?;
    let mut out = vec![0u8; index.total_len];
    let mut slots: Vec<(&IndexEntry, &mut [u8])> = Vec::with_capacity(index.entries.len());
    let mut rest = out.as_mut_slice();
    for e in &index.entries {
        let (head, tail) = rest.split_at_mut(e.len);
        slots.push((e, head));
        rest = tail;
    }
    slots
        .into_par_iter()
        .try_for_each(|(e, dst)| -> Result<()> {
            let mut rng = stream_of(e.message).rng();
            let chunk = quantize(messages[e.message], e.bits, &mut rng)?;
            let mut buf = Vec::with_capacity(e.len);
            chunk.write_to(&mut buf);
            dst.copy_from_slice(&buf);
            Ok(())
        })?;
    Ok((out, index))
}

/// Recovers every message's de-quantized vector, in the sender's order.
pub fn decode_message_set<T: Scalar>(bytes: &[u8], index: &RetrievalIndex) -> Result<Vec<Vec<T>>> {
    if bytes.len() != index.total_len {
        return Err(Error::decode(format!(
            "message set is {} bytes but its index describes {}",
            bytes.len(),
            index.total_len
        )));
    }
    let mut out: Vec<Vec<T>> = vec![Vec::new(); index.entries.len()];
    for e in &index.entries {
        let end = e
            .offset
            .checked_add(e.len)
            .filter(|&end| end <= bytes.len());
        let end =
            end.ok_or_else(|| Error::decode("index entry runs past the end of the byte array"))?;
        let chunk = QuantizedChunk::from_bytes(&bytes[e.offset..end])?;
        if chunk.bits != e.bits || chunk.count != e.dim {
            return Err(Error::decode(format!(
                "message {} header says {}-bit x {}, index says {}-bit x {}",
                e.message, chunk.bits, chunk.count, e.bits, e.dim
            )));
        }
        let slot = out.get_mut(e.message).ok_or_else(|| {
            Error::decode(format!("index names message {} out of range", e.message))
        })?;
        *slot = dequantize(&chunk)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn stream(i: usize) -> RngStream {
        RngStream::new(11).at(&[i as u64])
    }

    #[test]
    fn single_eight_bit_message_is_header_plus_payload() {
        let msg = [0.5f64, 1.5, -2.0];
        let (bytes, index) = encode_message_set(&[&msg[..]], &[BitWidth::B8], stream).unwrap();
        let chunk = quantize(&msg, BitWidth::B8, &mut stream(0).rng()).unwrap();
        assert_eq!(bytes, chunk.to_bytes());
        assert_eq!(index.total_len, 25 + 3);
    }

    #[test]
    fn lower_widths_come_first() {
        let a = [1.0f64, 2.0];
        let b = [3.0f64, 4.0];
        let (bytes, index) =
            encode_message_set(&[&a[..], &b[..]], &[BitWidth::B8, BitWidth::B2], stream).unwrap();
        assert_eq!(index.entries[0].message, 1);
        assert_eq!(index.entries[0].bits, BitWidth::B2);
        assert_eq!(bytes[0], 2);
        assert_eq!(bytes[index.entries[1].offset], 8);
    }

    #[test]
    fn parallel_encoding_is_bit_identical() {
        let mut rng = RngStream::new(2).rng();
        let msgs: Vec<Vec<f64>> = (0..40)
            .map(|i| (0..(1 + i % 7)).map(|_| rng.gen()).collect())
            .collect();
        let refs: Vec<&[f64]> = msgs.iter().map(Vec::as_slice).collect();
        let bits: Vec<BitWidth> = (0..40).map(|i| BitWidth::ALL[i % 3]).collect();
        let seq = encode_message_set(&refs, &bits, stream).unwrap();
        let par = encode_message_set_par(&refs, &bits, stream).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn mismatched_index_is_a_decode_error() {
        let a = [1.0f64, 2.0, 3.0];
        let (bytes, index) = encode_message_set(&[&a[..]], &[BitWidth::B4], stream).unwrap();
        assert!(matches!(
            decode_message_set::<f64>(&bytes[1..], &index),
            Err(Error::Decode(_))
        ));
        let other = RetrievalIndex::build(&[3], &[BitWidth::B2]).unwrap();
        let padded = [bytes.clone(), vec![0]].concat();
        assert!(decode_message_set::<f64>(&padded, &other).is_err());
        let wrong_dim = RetrievalIndex::build(&[5], &[BitWidth::B2]).unwrap();
        assert!(decode_message_set::<f64>(&bytes, &wrong_dim).is_err());
    }

    #[test]
    fn plan_must_cover_every_message() {
        let a = [1.0f64];
        assert!(encode_message_set(&[&a[..], &a[..]], &[BitWidth::B4], stream).is_err());
    }
}
