//! Bit-exact update payload codec and the communication cost model.
//!
//! A payload carries the mask of updated weights (as whichever of a raw
//! bitmap or ascending delta varints is smaller) plus one value per set
//! bit. The analytic cost model prices a mask at the binary entropy bound:
//! `S_w·k·I + S_x(k)·I` bits per update.

use crate::error::{Error, Result};

/// Binary entropy in bits per weight:
/// `S_x(k) = k·log₂(1/k) + (1−k)·log₂(1/(1−k))`, with the boundary values
/// `S_x(0) = S_x(1) = 0`.
pub fn shannon_bits(k: f64) -> f64 {
    assert!((0.0..=1.0).contains(&k), "k must lie in [0,1]");
    if k <= 0.0 || k >= 1.0 {
        return 0.0;
    }
    -(k * k.log2() + (1.0 - k) * (1.0 - k).log2())
}

/// Bits transmitted for one partial update of `i` weights at ratio `k`
/// with `s_w`-bit values: the updated weights plus entropy-coded indices.
pub fn comm_cost(k: f64, i: usize, s_w: u32) -> f64 {
    s_w as f64 * k * i as f64 + shannon_bits(k) * i as f64
}

/// Index-section encoding chosen by the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IndexEncoding {
    Bitmap = 0,
    DeltaVarint = 1,
}

/// Fixed header of an update payload.
#[derive(Clone, Debug, PartialEq)]
pub struct PayloadHeader {
    pub round: u32,
    pub k: f32,
    pub value_bits: u8,
    pub reinit_seed: Option<u64>,
}

/// A decoded partial update: mask + one value per set bit, mask order.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdatePayload {
    pub header: PayloadHeader,
    pub mask: Vec<bool>,
    pub values: Vec<f64>,
}

const MAGIC: &[u8; 4] = b"DPU1";
const SEED_FLAG: u8 = 0x80;

fn bitmap_bytes(mask: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; mask.len().div_ceil(8)];
    for (i, &b) in mask.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn leb128(mut v: u64, out: &mut Vec<u8>) {
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

fn read_leb128(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    let mut v = 0u64;
    let mut shift = 0;
    loop {
        let &b = bytes.get(*pos).ok_or(Error::TruncatedFile { needed: 1 })?;
        *pos += 1;
        v |= ((b & 0x7f) as u64) << shift;
        if b & 0x80 == 0 {
            return Ok(v);
        }
        shift += 7;
        if shift > 63 {
            return Err(Error::CorruptHeader("varint overflow".into()));
        }
    }
}

fn varint_bytes(mask: &[bool]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut prev: Option<u64> = None;
    for (i, &b) in mask.iter().enumerate() {
        if b {
            let gap = match prev {
                None => i as u64,
                Some(p) => i as u64 - p,
            };
            leb128(gap, &mut out);
            prev = Some(i as u64);
        }
    }
    out
}

/// Sizes of both candidate index encodings, in bytes (data only).
pub fn index_encoding_sizes(mask: &[bool]) -> (usize, usize) {
    (mask.len().div_ceil(8), varint_bytes(mask).len())
}

/// Serialize a payload. All integers little-endian; the smaller of the two
/// index encodings wins (delta varints on a tie only if strictly smaller).
pub fn encode_payload(p: &UpdatePayload) -> Result<Vec<u8>> {
    let count = p.mask.iter().filter(|&&b| b).count();
    if count != p.values.len() {
        return Err(Error::LengthMismatch { left: count, right: p.values.len() });
    }
    if p.header.value_bits != 32 && p.header.value_bits != 64 {
        return Err(Error::CorruptHeader(format!(
            "unsupported value bitwidth {}",
            p.header.value_bits
        )));
    }
    let bitmap = bitmap_bytes(&p.mask);
    let varint = varint_bytes(&p.mask);
    let (kind, index_data) = if varint.len() < bitmap.len() {
        (IndexEncoding::DeltaVarint, varint)
    } else {
        (IndexEncoding::Bitmap, bitmap)
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&p.header.round.to_le_bytes());
    out.extend_from_slice(&p.header.k.to_le_bytes());
    let mut kind_byte = kind as u8;
    if p.header.reinit_seed.is_some() {
        kind_byte |= SEED_FLAG;
    }
    out.push(kind_byte);
    out.push(p.header.value_bits);
    if let Some(seed) = p.header.reinit_seed {
        out.extend_from_slice(&seed.to_le_bytes());
    }
    out.extend_from_slice(&(p.mask.len() as u64).to_le_bytes());
    out.extend_from_slice(&(count as u64).to_le_bytes());
    out.extend_from_slice(&index_data);
    for &v in &p.values {
        if p.header.value_bits == 32 {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        } else {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    if *pos + n > bytes.len() {
        return Err(Error::TruncatedFile { needed: *pos + n - bytes.len() });
    }
    let s = &bytes[*pos..*pos + n];
    *pos += n;
    Ok(s)
}

/// Inverse of [`encode_payload`], bit-exact.
pub fn decode_payload(bytes: &[u8]) -> Result<UpdatePayload> {
    let mut pos = 0;
    let magic = take(bytes, &mut pos, 4)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(MAGIC).into_owned(),
            found: format!("{magic:?}"),
        });
    }
    let round = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap());
    let k = f32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap());
    let kind_byte = take(bytes, &mut pos, 1)?[0];
    let value_bits = take(bytes, &mut pos, 1)?[0];
    if value_bits != 32 && value_bits != 64 {
        return Err(Error::CorruptHeader(format!("unsupported value bitwidth {value_bits}")));
    }
    let reinit_seed = if kind_byte & SEED_FLAG != 0 {
        Some(u64::from_le_bytes(take(bytes, &mut pos, 8)?.try_into().unwrap()))
    } else {
        None
    };
    let kind = match kind_byte & !SEED_FLAG {
        0 => IndexEncoding::Bitmap,
        1 => IndexEncoding::DeltaVarint,
        other => return Err(Error::CorruptHeader(format!("unknown index encoding {other}"))),
    };
    let total = u64::from_le_bytes(take(bytes, &mut pos, 8)?.try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(take(bytes, &mut pos, 8)?.try_into().unwrap()) as usize;
    let mut mask = vec![false; total];
    match kind {
        IndexEncoding::Bitmap => {
            let data = take(bytes, &mut pos, total.div_ceil(8))?;
            for (i, m) in mask.iter_mut().enumerate() {
                *m = data[i / 8] >> (i % 8) & 1 == 1;
            }
        }
        IndexEncoding::DeltaVarint => {
            let mut idx = 0u64;
            for j in 0..count {
                let gap = read_leb128(bytes, &mut pos)?;
                idx = if j == 0 { gap } else { idx + gap };
                let i = idx as usize;
                if i >= total {
                    return Err(Error::CorruptHeader(format!("index {i} out of range {total}")));
                }
                mask[i] = true;
            }
        }
    }
    let decoded_count = mask.iter().filter(|&&b| b).count();
    if decoded_count != count {
        return Err(Error::CorruptHeader(format!(
            "mask popcount {decoded_count} vs header count {count}"
        )));
    }
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        if value_bits == 32 {
            values.push(f32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap()) as f64);
        } else {
            values.push(f64::from_le_bytes(take(bytes, &mut pos, 8)?.try_into().unwrap()));
        }
    }
    if pos != bytes.len() {
        return Err(Error::CorruptHeader(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(UpdatePayload {
        header: PayloadHeader { round, k, value_bits, reinit_seed },
        mask,
        values,
    })
}
