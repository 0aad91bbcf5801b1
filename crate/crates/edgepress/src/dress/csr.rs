use crate::error::{Error, Result};

/// Prefix-ordered row-sparse tensor holding `K` nested subnets in one
/// index/value table pair. Per row the stored column indices are ordered
/// by descending importance, so the level-`k` subnet is exactly the first
/// `nz_per_row(k)` entries of every row.
#[derive(Clone, Debug, PartialEq)]
pub struct DressCsr {
    pub row_size: usize,
    pub rows: usize,
    /// `(sparsity, nonzeros per row)` per level; nonzeros strictly
    /// decreasing.
    pub levels: Vec<(f64, usize)>,
    /// `rows × nz₁` column indices, row-major.
    pub indices: Vec<u32>,
    /// Values in the same order as `indices`.
    pub values: Vec<f64>,
}

impl DressCsr {
    pub fn nz_row(&self, level: usize) -> usize {
        self.levels[level].1
    }

    fn stride(&self) -> usize {
        self.levels[0].1
    }
}

/// Build the format from a `rows × row_size` weight view and its nested
/// masks (one per level, flat row-major, uniform per-row counts).
/// Within a row, indices are ordered first by the deepest level still
/// containing them, then by descending magnitude, then ascending index —
/// which makes every level a prefix.
pub fn build_dress_csr(
    weights: &[f64],
    row_size: usize,
    levels: &[f64],
    masks: &[Vec<bool>],
) -> Result<DressCsr> {
    if weights.len() % row_size != 0 {
        return Err(Error::ShapeMismatch(format!(
            "row size {row_size} does not divide {} weights",
            weights.len()
        )));
    }
    let rows = weights.len() / row_size;
    if masks.len() != levels.len() || masks.is_empty() {
        return Err(Error::LengthMismatch { left: masks.len(), right: levels.len() });
    }
    // nesting check
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            if let Some(pos) = masks[j].iter().zip(&masks[i]).position(|(&mj, &mi)| mj && !mi) {
                return Err(Error::NonNestedMask { level: j, row: pos / row_size });
            }
        }
    }
    // uniform per-row counts, strictly decreasing across levels
    let mut level_table = Vec::with_capacity(levels.len());
    for (k, mask) in masks.iter().enumerate() {
        let first = mask[..row_size].iter().filter(|&&b| b).count();
        for r in 1..rows {
            let c = mask[r * row_size..(r + 1) * row_size].iter().filter(|&&b| b).count();
            if c != first {
                return Err(Error::NonNestedMask { level: k, row: r });
            }
        }
        if first == 0 {
            return Err(Error::NonNestedMask { level: k, row: 0 });
        }
        level_table.push((levels[k], first));
    }
    if !level_table.windows(2).all(|w| w[1].1 < w[0].1) {
        return Err(Error::ShapeMismatch(
            "per-row nonzero counts must strictly decrease across levels".into(),
        ));
    }
    let stride = level_table[0].1;
    let mut indices = Vec::with_capacity(rows * stride);
    let mut values = Vec::with_capacity(rows * stride);
    for r in 0..rows {
        let base = r * row_size;
        let mut cols: Vec<(usize, usize)> = (0..row_size)
            .filter(|&c| masks[0][base + c])
            .map(|c| {
                let depth = masks.iter().rposition(|m| m[base + c]).unwrap();
                (c, depth)
            })
            .collect();
        cols.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then(weights[base + b.0].abs().partial_cmp(&weights[base + a.0].abs()).unwrap())
                .then(a.0.cmp(&b.0))
        });
        for &(c, _) in &cols {
            indices.push(c as u32);
            values.push(weights[base + c]);
        }
    }
    Ok(DressCsr { row_size, rows, levels: level_table, indices, values })
}

/// The level-`k` subnet as a standard row-sparse view: per-row prefixes of
/// the shared tables, with implied row pointers `r·nz`.
#[derive(Clone, Copy, Debug)]
pub struct SubnetView<'a> {
    csr: &'a DressCsr,
    pub nz_per_row: usize,
}

impl SubnetView<'_> {
    pub fn rows(&self) -> usize {
        self.csr.rows
    }

    pub fn row_size(&self) -> usize {
        self.csr.row_size
    }

    pub fn row_ptr(&self, r: usize) -> usize {
        r * self.nz_per_row
    }

    pub fn row_indices(&self, r: usize) -> &[u32] {
        let base = r * self.csr.stride();
        &self.csr.indices[base..base + self.nz_per_row]
    }

    pub fn row_values(&self, r: usize) -> &[f64] {
        let base = r * self.csr.stride();
        &self.csr.values[base..base + self.nz_per_row]
    }

    /// Dense `rows × row_size` reconstruction of this subnet.
    pub fn densify(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.csr.rows * self.csr.row_size];
        for r in 0..self.csr.rows {
            for (&c, &v) in self.row_indices(r).iter().zip(self.row_values(r)) {
                out[r * self.csr.row_size + c as usize] = v;
            }
        }
        out
    }
}

pub fn fetch_subnet(csr: &DressCsr, level: usize) -> Result<SubnetView<'_>> {
    if level >= csr.levels.len() {
        return Err(Error::LevelNotFound(level));
    }
    Ok(SubnetView { csr, nz_per_row: csr.nz_row(level) })
}

/// `y = (w ⊙ m_k)·x` straight off the prefix tables.
pub fn sparse_matvec(view: &SubnetView<'_>, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != view.row_size() {
        return Err(Error::ShapeMismatch(format!(
            "x len {} vs row size {}",
            x.len(),
            view.row_size()
        )));
    }
    Ok((0..view.rows())
        .map(|r| {
            view.row_indices(r)
                .iter()
                .zip(view.row_values(r))
                .map(|(&c, &v)| v * x[c as usize])
                .sum()
        })
        .collect())
}

/// Storage accounting: shared prefix tables vs per-level independent
/// storage, with `index_bits`-wide column indices and 32-bit float values.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrCost {
    /// Bytes to store the whole format (shared tables + level table).
    pub total_bytes: usize,
    /// Bytes fetched when running each level.
    pub per_level_fetch_bytes: Vec<usize>,
    /// Bytes if every level kept its own index/value tables.
    pub independent_bytes: usize,
    /// Index entries stored (shared) vs summed over levels (independent).
    pub index_entries: usize,
    pub independent_index_entries: usize,
    pub level_table_bytes: usize,
}

pub fn csr_cost(csr: &DressCsr, index_bits: u32) -> Result<CsrCost> {
    if csr.row_size > 1usize << index_bits {
        return Err(Error::RowSizeExceedsIndexWidth { row_size: csr.row_size, index_bits });
    }
    let idx_bytes = (index_bits as usize).div_ceil(8);
    let value_bytes = 4;
    let per_entry = idx_bytes + value_bytes;
    let shared_entries = csr.rows * csr.stride();
    let level_table_bytes = csr.levels.len() * (4 + 4);
    let per_level_fetch_bytes: Vec<usize> =
        csr.levels.iter().map(|&(_, nz)| csr.rows * nz * per_entry).collect();
    let independent_entries: usize = csr.levels.iter().map(|&(_, nz)| csr.rows * nz).sum();
    Ok(CsrCost {
        total_bytes: shared_entries * per_entry + level_table_bytes,
        per_level_fetch_bytes,
        independent_bytes: independent_entries * per_entry,
        index_entries: shared_entries,
        independent_index_entries: independent_entries,
        level_table_bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dress::{masks_nested, row_sample_masks};
    use rand::Rng;

    fn ladder_masks(w: &[f64], n: usize, levels: &[f64]) -> Vec<Vec<bool>> {
        let m = row_sample_masks(w, n, levels);
        assert!(masks_nested(&m));
        m
    }

    #[test]
    fn four_by_eight_ladder_prefix_views() {
        // 4 rows × 8 cols with levels 0.5/0.75/0.875: level views read
        // 4, 2, 1 entries per row; the deepest view is each row's largest
        // magnitude
        let mut rng = crate::numerics::seeded_rng(81);
        let w: Vec<f64> = (0..32).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let levels = [0.5, 0.75, 0.875];
        let masks = ladder_masks(&w, 8, &levels);
        let csr = build_dress_csr(&w, 8, &levels, &masks).unwrap();
        assert_eq!(csr.levels.iter().map(|l| l.1).collect::<Vec<_>>(), vec![4, 2, 1]);
        let deepest = fetch_subnet(&csr, 2).unwrap();
        for r in 0..4 {
            let row = &w[r * 8..(r + 1) * 8];
            let max_idx = (0..8).max_by(|&a, &b| row[a].abs().partial_cmp(&row[b].abs()).unwrap()).unwrap();
            assert_eq!(deepest.row_indices(r), &[max_idx as u32]);
            assert_eq!(deepest.row_ptr(r), r);
        }
    }

    #[test]
    fn prefix_property_densify_equals_masked_weights() {
        let mut rng = crate::numerics::seeded_rng(82);
        let w: Vec<f64> = (0..16 * 32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let levels = [0.5, 0.75, 0.875];
        let masks = ladder_masks(&w, 32, &levels);
        let csr = build_dress_csr(&w, 32, &levels, &masks).unwrap();
        for (k, mask) in masks.iter().enumerate() {
            let dense = fetch_subnet(&csr, k).unwrap().densify();
            for (i, (&d, &m)) in dense.iter().zip(mask).enumerate() {
                let want = if m { w[i] } else { 0.0 };
                assert_eq!(d, want, "level {k} position {i}");
            }
        }
    }

    #[test]
    fn sparse_matvec_matches_dense_oracle() {
        let mut rng = crate::numerics::seeded_rng(83);
        let (rows, n) = (16, 32);
        let w: Vec<f64> = (0..rows * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let levels = [0.5, 0.75, 0.875];
        let masks = ladder_masks(&w, n, &levels);
        let csr = build_dress_csr(&w, n, &levels, &masks).unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for k in 0..levels.len() {
            let view = fetch_subnet(&csr, k).unwrap();
            let got = sparse_matvec(&view, &x).unwrap();
            for r in 0..rows {
                let want: f64 = (0..n)
                    .filter(|&c| masks[k][r * n + c])
                    .map(|c| w[r * n + c] * x[c])
                    .sum();
                assert!((got[r] - want).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn non_nested_masks_rejected() {
        let w = vec![1.0, 2.0, 3.0, 4.0];
        let masks = vec![vec![true, true, false, false], vec![false, false, true, false]];
        assert!(matches!(
            build_dress_csr(&w, 4, &[0.5, 0.75], &masks),
            Err(Error::NonNestedMask { .. })
        ));
    }

    #[test]
    fn level_not_found() {
        let w = vec![1.0, 2.0, 3.0, 4.0];
        let masks = ladder_masks(&w, 4, &[0.5]);
        let csr = build_dress_csr(&w, 4, &[0.5], &masks).unwrap();
        assert!(matches!(fetch_subnet(&csr, 1), Err(Error::LevelNotFound(1))));
    }

    #[test]
    fn cost_single_level_is_plain_csr() {
        let mut rng = crate::numerics::seeded_rng(84);
        let w: Vec<f64> = (0..4 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let masks = ladder_masks(&w, 8, &[0.5]);
        let csr = build_dress_csr(&w, 8, &[0.5], &masks).unwrap();
        let cost = csr_cost(&csr, 8).unwrap();
        // 4 rows × 4 nz × (1 + 4) bytes + one level entry
        assert_eq!(cost.total_bytes, 16 * 5 + 8);
        assert_eq!(cost.independent_bytes, 16 * 5);
        assert_eq!(cost.per_level_fetch_bytes, vec![16 * 5]);
    }

    #[test]
    fn cost_ladder_shares_indices() {
        // 4×8 ladder: 16 shared index entries vs 4·(4+2+1) = 28 independent
        let mut rng = crate::numerics::seeded_rng(85);
        let w: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let levels = [0.5, 0.75, 0.875];
        let masks = ladder_masks(&w, 8, &levels);
        let csr = build_dress_csr(&w, 8, &levels, &masks).unwrap();
        let cost = csr_cost(&csr, 8).unwrap();
        assert_eq!(cost.index_entries, 16);
        assert_eq!(cost.independent_index_entries, 28);
        assert!(cost.index_entries < cost.independent_index_entries);
    }

    #[test]
    fn oversized_rows_rejected_for_8bit_indices() {
        let w = vec![0.5; 300];
        let masks = ladder_masks(&w, 300, &[0.5]);
        let csr = build_dress_csr(&w, 300, &[0.5], &masks).unwrap();
        assert!(matches!(
            csr_cost(&csr, 8),
            Err(Error::RowSizeExceedsIndexWidth { row_size: 300, index_bits: 8 })
        ));
        assert!(csr_cost(&csr, 16).is_ok());
    }
}
