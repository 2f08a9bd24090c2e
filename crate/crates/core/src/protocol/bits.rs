//! Bit strings and fixed-width packets.
//!
//! A message travels over the pool as a sequence of [`Chunk`]s, each read
//! big-endian as an unsigned integer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ProtocolError;

/// Ordered sequence of bits, most-significant first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct BitString {
    bits: Vec<bool>,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn push(&mut self, bit: bool) {
        self.bits.push(bit);
    }

    pub fn extend_from(&mut self, other: &BitString) {
        self.bits.extend_from_slice(&other.bits);
    }

    /// Number of positions (from the start) at which `self` and `other`
    /// agree. Positions past the shorter string never count.
    pub fn matching_prefix_bits(&self, other: &BitString) -> usize {
        self.bits.iter().zip(other.bits.iter()).filter(|(a, b)| a == b).count()
    }

    /// Draws `len` uniformly random bits.
    pub fn random<R: rand::Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Self {
            bits: (0..len).map(|_| rng.random::<bool>()).collect(),
        }
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for BitString {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(ProtocolError::InvalidBit(other)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { bits })
    }
}

impl From<BitString> for String {
    fn from(b: BitString) -> Self {
        b.to_string()
    }
}

impl TryFrom<String> for BitString {
    type Error = ProtocolError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// One packet: a [`BitString`] of exactly `width` bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Chunk {
    bits: BitString,
}

impl Chunk {
    pub fn new(bits: BitString) -> Result<Self, ProtocolError> {
        if bits.is_empty() {
            return Err(ProtocolError::InvalidPacketSize(0));
        }
        Ok(Self { bits })
    }

    pub fn width(&self) -> u32 {
        self.bits.len() as u32
    }

    pub fn bits(&self) -> &BitString {
        &self.bits
    }

    /// Big-endian unsigned value of the packet.
    pub fn to_int(&self) -> u64 {
        self.bits.bits().iter().fold(0u64, |acc, &b| (acc << 1) | u64::from(b))
    }

    /// Big-endian encoding of `value`, zero-padded to `width` bits.
    pub fn from_int(value: u64, width: u32) -> Result<Self, ProtocolError> {
        if width == 0 || width > 63 {
            return Err(ProtocolError::InvalidPacketSize(width));
        }
        if value >= 1u64 << width {
            return Err(ProtocolError::ValueOutOfRange { value, width });
        }
        let bits = (0..width).rev().map(|i| (value >> i) & 1 == 1).collect();
        Ok(Self {
            bits: BitString::from_bits(bits),
        })
    }
}

impl fmt::Display for Chunk {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.bits.fmt(f)
    }
}

/// Splits `message` into consecutive packets of `pkt_size` bits.
///
/// No padding is ever added: the receiver has no length header, so a
/// message that does not divide evenly is rejected.
pub fn chunk_message(message: &BitString, pkt_size: u32) -> Result<Vec<Chunk>, ProtocolError> {
    if pkt_size == 0 || pkt_size > 63 {
        return Err(ProtocolError::InvalidPacketSize(pkt_size));
    }
    if message.is_empty() {
        return Err(ProtocolError::EmptyMessage);
    }
    let width = pkt_size as usize;
    if !message.len().is_multiple_of(width) {
        return Err(ProtocolError::NonDivisibleMessage {
            len: message.len(),
            pkt_size,
        });
    }
    Ok(message
        .bits()
        .chunks(width)
        .map(|c| Chunk {
            bits: BitString::from_bits(c.to_vec()),
        })
        .collect())
}

pub fn chunk_to_int(chunk: &Chunk) -> u64 {
    chunk.to_int()
}

pub fn int_to_chunk(value: u64, width: u32) -> Result<Chunk, ProtocolError> {
    Chunk::from_int(value, width)
}

/// Largest packet width `w` with `2^w + 1 <= pool_size`, so that a
/// release-all of the pool always exceeds every valid on-wire count.
pub fn max_packet_size(pool_size: u64) -> Result<u32, ProtocolError> {
    if pool_size < 3 {
        return Err(ProtocolError::PoolTooSmall(pool_size));
    }
    // (pool_size - 1) >= 2^w  <=>  w <= floor(log2(pool_size - 1))
    Ok(63 - (pool_size - 1).leading_zeros())
}
