//! Classical bit strings as they flow between parties and the oracle.

use alloc::vec::Vec;
use core::fmt;

/// An ordered string of bits. Packed form is LSB-first within each byte.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitString(Vec<bool>);

impl BitString {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn zeros(len: usize) -> Self {
        Self(alloc::vec![false; len])
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    /// Parses a string of `'0'`/`'1'` characters; anything else is rejected.
    pub fn parse(s: &str) -> Option<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(Self)
    }

    /// `width` bits of `value`, most significant bit first.
    pub fn from_uint(value: u64, width: usize) -> Self {
        Self(
            (0..width)
                .rev()
                .map(|k| k < 64 && (value >> k) & 1 == 1)
                .collect(),
        )
    }

    /// Interprets the bits as an unsigned integer, most significant bit first.
    /// Bits beyond the low 64 are dropped.
    pub fn to_uint(&self) -> u64 {
        self.0
            .iter()
            .fold(0u64, |acc, &b| (acc << 1) | u64::from(b))
    }

    /// Bytes expanded MSB-first, so `from_bytes(b"A")` reads `01000001`.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        Self(
            bytes
                .iter()
                .flat_map(|&byte| (0..8).rev().map(move |k| (byte >> k) & 1 == 1))
                .collect(),
        )
    }

    /// Inverse of [`BitString::from_bytes`]; a trailing partial byte is zero padded.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.0
            .chunks(8)
            .map(|chunk| {
                chunk
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << (7 - i)))
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<bool> {
        self.0.get(i).copied()
    }

    pub fn push(&mut self, bit: bool) {
        self.0.push(bit);
    }

    pub fn extend_from(&mut self, other: &BitString) {
        self.0.extend_from_slice(&other.0);
    }

    pub fn concat(&self, other: &BitString) -> BitString {
        let mut out = self.clone();
        out.extend_from(other);
        out
    }

    pub fn slice(&self, start: usize, end: usize) -> BitString {
        Self(self.0[start..end].to_vec())
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    /// LSB-first packing used by the wire formats.
    pub fn pack(&self) -> Vec<u8> {
        let mut out = alloc::vec![0u8; self.0.len().div_ceil(8)];
        for (i, &b) in self.0.iter().enumerate() {
            if b {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    pub fn unpack(bytes: &[u8], len: usize) -> Option<Self> {
        if bytes.len() != len.div_ceil(8) {
            return None;
        }
        let bits: Vec<bool> = (0..len)
            .map(|i| (bytes[i / 8] >> (i % 8)) & 1 == 1)
            .collect();
        // canonical: padding bits must be zero
        if len % 8 != 0 && bytes[len / 8] >> (len % 8) != 0 {
            return None;
        }
        Some(Self(bits))
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString({self})")
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromIterator<bool> for BitString {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        let b = BitString::parse("1010").unwrap();
        assert_eq!(alloc::format!("{b}"), "1010");
        assert!(BitString::parse("10x").is_none());
    }

    #[test]
    fn uint_round_trip() {
        let b = BitString::from_uint(5, 8);
        assert_eq!(alloc::format!("{b}"), "00000101");
        assert_eq!(b.to_uint(), 5);
    }

    #[test]
    fn bytes_round_trip() {
        let b = BitString::from_bytes(b"AB");
        assert_eq!(b.len(), 16);
        assert_eq!(b.to_bytes(), b"AB");
    }

    #[test]
    fn pack_rejects_dirty_padding() {
        let b = BitString::parse("101").unwrap();
        assert_eq!(b.pack(), [0b101]);
        assert_eq!(BitString::unpack(&[0b101], 3).unwrap(), b);
        assert!(BitString::unpack(&[0b1101], 3).is_none());
        assert!(BitString::unpack(&[0, 0], 3).is_none());
    }
}
