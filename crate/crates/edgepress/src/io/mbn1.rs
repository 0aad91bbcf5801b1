//! MBN1: multi-bit quantized model file.
//!
//! Layout: magic "MBN1", u16 version, u32 layer count; per layer a
//! structure code u8 with its u32 parameter, the tensor shape (u8 ndim +
//! u32 dims), u32 group size n, u32 group count G, then per group u8 I_g
//! followed by I_g bit-packed basis columns (ceil(n/64) u64 words each)
//! and I_g f32 coordinates; finally the bias as a length-prefixed f32
//! array.

use super::Reader;
use crate::alq::{QuantLayer, QuantModel};
use crate::bitexec::PackedVector;
use crate::error::{Error, Result};
use crate::mbq::{GroupedLayer, GroupingStructure, QuantGroup, WORD_BITS};

const MAGIC: &str = "MBN1";
const VERSION: u16 = 1;

pub fn save_mbn1(qm: &QuantModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC.as_bytes());
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(qm.layers.len() as u32).to_le_bytes());
    for layer in &qm.layers {
        let g = &layer.grouped;
        let (code, param) = g.structure.code();
        out.push(code);
        out.extend_from_slice(&param.to_le_bytes());
        out.push(g.shape.len() as u8);
        for &d in &g.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let n = g.structure.group_size(&g.shape)?;
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(g.groups.len() as u32).to_le_bytes());
        for group in &g.groups {
            if group.len() != n {
                return Err(Error::ShapeMismatch("inconsistent group size".into()));
            }
            out.push(group.bitwidth() as u8);
            for col in group.basis() {
                for &w in col.words() {
                    out.extend_from_slice(&w.to_le_bytes());
                }
            }
            for &a in group.coords() {
                out.extend_from_slice(&(a as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&(layer.bias.len() as u32).to_le_bytes());
        for &b in &layer.bias {
            out.extend_from_slice(&(b as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load_mbn1(bytes: &[u8]) -> Result<QuantModel> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let layer_count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let code = r.u8()?;
        let param = r.u32()?;
        let structure = GroupingStructure::from_code(code, param)?;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let n = r.u32()? as usize;
        if structure.group_size(&shape)? != n {
            return Err(Error::CorruptHeader(format!(
                "group size {n} inconsistent with structure {structure} on shape {shape:?}"
            )));
        }
        let group_count = r.u32()? as usize;
        let total: usize = shape.iter().product();
        if group_count * n != total {
            return Err(Error::CorruptHeader(format!(
                "{group_count} groups of {n} do not cover {total} weights"
            )));
        }
        let words_per_col = n.div_ceil(WORD_BITS);
        let mut groups = Vec::with_capacity(group_count);
        for _ in 0..group_count {
            let bits = r.u8()? as usize;
            let mut basis = Vec::with_capacity(bits);
            for _ in 0..bits {
                let mut words = Vec::with_capacity(words_per_col);
                for _ in 0..words_per_col {
                    words.push(r.u64()?);
                }
                basis.push(PackedVector::from_words(n, words)?);
            }
            let mut coords = Vec::with_capacity(bits);
            for _ in 0..bits {
                coords.push(r.f32()? as f64);
            }
            groups.push(QuantGroup::new(n, basis, coords)?);
        }
        let bias_len = r.u32()? as usize;
        let mut bias = Vec::with_capacity(bias_len);
        for _ in 0..bias_len {
            bias.push(r.f32()? as f64);
        }
        layers.push(QuantLayer { grouped: GroupedLayer { shape, structure, groups }, bias });
    }
    r.finish()?;
    Ok(QuantModel { layers })
}
