//! MLP1: dense full-precision model file.
//!
//! Layout: magic "MLP1", u16 version, u32 layer count; per layer u32 c_out,
//! u32 c_in, then c_out·c_in f64 weights (row-major) and c_out f64 biases.

use super::Reader;
use crate::error::Result;
use crate::model::{Linear, MlpModel};
use crate::numerics::Tensor;

const MAGIC: &str = "MLP1";
const VERSION: u16 = 1;

pub fn save_dense_model(model: &MlpModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC.as_bytes());
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for l in &model.layers {
        out.extend_from_slice(&(l.c_out() as u32).to_le_bytes());
        out.extend_from_slice(&(l.c_in() as u32).to_le_bytes());
        for &w in l.weight.data() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for &b in &l.bias {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    out
}

pub fn load_dense_model(bytes: &[u8]) -> Result<MlpModel> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let layers = r.u32()? as usize;
    let mut out = Vec::with_capacity(layers);
    for _ in 0..layers {
        let c_out = r.u32()? as usize;
        let c_in = r.u32()? as usize;
        let mut data = Vec::with_capacity(c_out * c_in);
        for _ in 0..c_out * c_in {
            data.push(r.f64()?);
        }
        let mut bias = Vec::with_capacity(c_out);
        for _ in 0..c_out {
            bias.push(r.f64()?);
        }
        out.push(Linear { weight: Tensor::from_vec(&[c_out, c_in], data)?, bias });
    }
    r.finish()?;
    Ok(MlpModel { layers: out })
}
