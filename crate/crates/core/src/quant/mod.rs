//! Stochastic integer quantization and the multi-width byte-stream format.

mod codec;
mod message_set;
mod pack;
mod rng;

pub use codec::{dequantize, quantize, BitWidth, QuantizedChunk, HEADER_LEN};
pub use message_set::{
    decode_message_set, encode_message_set, encode_message_set_par, IndexEntry, RetrievalIndex,
};
pub use pack::{pack, packed_len, unpack};
pub use rng::RngStream;
