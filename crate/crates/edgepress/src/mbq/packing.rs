use crate::error::{Error, Result};

pub const WORD_BITS: usize = 64;

/// Pack a ±1 vector into 64-bit words: +1 → bit 1, −1 → bit 0,
/// little-endian within each word, zero padding past the logical length.
pub fn pack_bits(column: &[f64]) -> Result<Vec<u64>> {
    let mut words = vec![0u64; column.len().div_ceil(WORD_BITS)];
    for (i, &v) in column.iter().enumerate() {
        if v == 1.0 {
            words[i / WORD_BITS] |= 1u64 << (i % WORD_BITS);
        } else if v != -1.0 {
            return Err(Error::InvalidEntry { index: i, value: v });
        }
    }
    Ok(words)
}

/// Inverse of [`pack_bits`]: recover exactly `n` entries of ±1.
pub fn unpack_bits(words: &[u64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1 { 1.0 } else { -1.0 })
        .collect()
}
