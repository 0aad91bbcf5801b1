//! DCSR1: nested row-sparse model file.
//!
//! Layout: magic "DCSR1", u16 version, u32 layer count; per layer u32
//! row_size, u32 rows, u32 level count, then the level table (f32 sparsity,
//! u32 nonzeros per row), the index table (u8 per entry) and the value
//! table (f32 per entry). Row size is capped at 256 by the 8-bit indices.

use super::Reader;
use crate::dress::DressCsr;
use crate::error::{Error, Result};

const MAGIC: &str = "DCSR1";
const VERSION: u16 = 1;

pub fn save_dcsr1(layers: &[DressCsr]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC.as_bytes());
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for csr in layers {
        if csr.row_size > 256 {
            return Err(Error::RowSizeExceedsIndexWidth { row_size: csr.row_size, index_bits: 8 });
        }
        out.extend_from_slice(&(csr.row_size as u32).to_le_bytes());
        out.extend_from_slice(&(csr.rows as u32).to_le_bytes());
        out.extend_from_slice(&(csr.levels.len() as u32).to_le_bytes());
        for &(s, nz) in &csr.levels {
            out.extend_from_slice(&(s as f32).to_le_bytes());
            out.extend_from_slice(&(nz as u32).to_le_bytes());
        }
        for &i in &csr.indices {
            debug_assert!(i < 256);
            out.push(i as u8);
        }
        for &v in &csr.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load_dcsr1(bytes: &[u8]) -> Result<Vec<DressCsr>> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let layer_count = r.u32()? as usize;
    let mut out = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let row_size = r.u32()? as usize;
        let rows = r.u32()? as usize;
        let level_count = r.u32()? as usize;
        if level_count == 0 {
            return Err(Error::CorruptHeader("empty level table".into()));
        }
        let mut levels = Vec::with_capacity(level_count);
        for _ in 0..level_count {
            let s = r.f32()? as f64;
            let nz = r.u32()? as usize;
            levels.push((s, nz));
        }
        if !levels.windows(2).all(|w| w[1].1 < w[0].1) {
            return Err(Error::CorruptHeader("nonzero counts not strictly decreasing".into()));
        }
        let stride = levels[0].1;
        if stride > row_size {
            return Err(Error::CorruptHeader(format!(
                "level stride {stride} exceeds row size {row_size}"
            )));
        }
        let entries = rows * stride;
        let mut indices = Vec::with_capacity(entries);
        for _ in 0..entries {
            let i = r.u8()? as u32;
            if i as usize >= row_size {
                return Err(Error::CorruptHeader(format!("index {i} out of row of {row_size}")));
            }
            indices.push(i);
        }
        let mut values = Vec::with_capacity(entries);
        for _ in 0..entries {
            values.push(r.f32()? as f64);
        }
        out.push(DressCsr { row_size, rows, levels, indices, values });
    }
    r.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dress::{build_dress_csr, row_sample_masks};
    use rand::Rng;

    fn sample_csr(seed: u64, rows: usize, n: usize) -> DressCsr {
        let mut rng = crate::numerics::seeded_rng(seed);
        let w: Vec<f64> = (0..rows * n).map(|_| rng.gen_range(-1.0f32..1.0) as f64).collect();
        let levels = [0.5, 0.75];
        let masks = row_sample_masks(&w, n, &levels);
        build_dress_csr(&w, n, &levels, &masks).unwrap()
    }

    #[test]
    fn roundtrip_bit_exact() {
        let layers = vec![sample_csr(1, 6, 16), sample_csr(2, 4, 8)];
        let bytes = save_dcsr1(&layers).unwrap();
        let loaded = load_dcsr1(&bytes).unwrap();
        assert_eq!(save_dcsr1(&loaded).unwrap(), bytes);
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].indices, layers[0].indices);
    }

    #[test]
    fn oversized_rows_rejected() {
        let csr = sample_csr(3, 2, 300);
        assert!(matches!(
            save_dcsr1(&[csr]),
            Err(Error::RowSizeExceedsIndexWidth { row_size: 300, index_bits: 8 })
        ));
    }

    #[test]
    fn corrupt_level_table_rejected() {
        let layers = vec![sample_csr(4, 4, 8)];
        let mut bytes = save_dcsr1(&layers).unwrap();
        // make the second level's nz equal the first (no longer strictly
        // decreasing): level table starts after magic(5)+ver(2)+count(4)+
        // row_size(4)+rows(4)+levels(4) = 23; entry is f32 s + u32 nz
        let nz0 = bytes[23 + 4];
        bytes[23 + 8 + 4] = nz0;
        assert!(matches!(load_dcsr1(&bytes), Err(Error::CorruptHeader(_))));
    }
}
