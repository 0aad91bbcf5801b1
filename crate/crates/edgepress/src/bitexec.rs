//! Bit-packed ±1 kernels (xnor/popcount) and multi-bit layer execution.
//!
//! A dot product of two ±1 vectors reduces to
//! `2·popcount(xnor(a,b)) − n` on the packed words, and a whole quantized
//! layer runs as a weighted sum of such dot products, exactly matching the
//! dense reconstructed computation.

use crate::error::{Error, Result};
use crate::exec;
use crate::mbq::{pack_bits, unpack_bits, GroupedLayer, GroupingStructure, QuantGroup, WORD_BITS};

/// A ±1 vector packed into 64-bit words; bits past the logical length are
/// zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedVector {
    n: usize,
    words: Vec<u64>,
}

impl PackedVector {
    pub fn from_signs(v: &[f64]) -> Result<Self> {
        Ok(PackedVector { n: v.len(), words: pack_bits(v)? })
    }

    pub fn from_words(n: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != n.div_ceil(WORD_BITS) {
            return Err(Error::LengthMismatch { left: words.len(), right: n.div_ceil(WORD_BITS) });
        }
        if let Some(&last) = words.last() {
            let pad = n % WORD_BITS;
            if pad != 0 && last >> pad != 0 {
                return Err(Error::CorruptHeader("nonzero padding bits".into()));
            }
        }
        Ok(PackedVector { n, words })
    }

    pub fn ones(n: usize) -> Self {
        let mut words = vec![u64::MAX; n.div_ceil(WORD_BITS)];
        mask_tail(&mut words, n);
        PackedVector { n, words }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn to_signs(&self) -> Vec<f64> {
        unpack_bits(&self.words, self.n)
    }

    /// Elementwise sign flip (complement of the stored bits).
    pub fn complement(&self) -> PackedVector {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        mask_tail(&mut words, self.n);
        PackedVector { n: self.n, words }
    }

    /// Extract `len` bits starting at `offset` into a new packed vector.
    pub fn slice(&self, offset: usize, len: usize) -> PackedVector {
        assert!(offset + len <= self.n, "slice out of range");
        let mut words = vec![0u64; len.div_ceil(WORD_BITS)];
        let word0 = offset / WORD_BITS;
        let shift = offset % WORD_BITS;
        for (i, w) in words.iter_mut().enumerate() {
            let lo = self.words.get(word0 + i).copied().unwrap_or(0) >> shift;
            let hi = if shift == 0 {
                0
            } else {
                self.words.get(word0 + i + 1).copied().unwrap_or(0) << (WORD_BITS - shift)
            };
            *w = lo | hi;
        }
        mask_tail(&mut words, len);
        PackedVector { n: len, words }
    }
}

fn mask_tail(words: &mut [u64], n: usize) {
    let pad = n % WORD_BITS;
    if pad != 0 {
        if let Some(last) = words.last_mut() {
            *last &= (1u64 << pad) - 1;
        }
    }
}

/// Exact ±1 dot product via xnor/popcount:
/// `Σ aᵢ·bᵢ = 2·popcount(xnor(a,b)) − n`.
pub fn pm1_dot(a: &PackedVector, b: &PackedVector) -> Result<i64> {
    if a.n != b.n {
        return Err(Error::LengthMismatch { left: a.n, right: b.n });
    }
    let mut matches: i64 = 0;
    let full_words = a.n / WORD_BITS;
    for i in 0..full_words {
        matches += (!(a.words[i] ^ b.words[i])).count_ones() as i64;
    }
    let pad = a.n % WORD_BITS;
    if pad != 0 {
        let x = !(a.words[full_words] ^ b.words[full_words]) & ((1u64 << pad) - 1);
        matches += x.count_ones() as i64;
    }
    Ok(2 * matches - a.n as i64)
}

/// Column sum of a ±1 vector (dot with all-ones), still via popcount.
pub fn colsum(a: &PackedVector) -> i64 {
    let ones: i64 = a.words.iter().map(|w| w.count_ones() as i64).sum();
    2 * ones - a.n as i64
}

/// An activation vector in multi-bit form `x̂ = x_ref + D·γ` with the
/// columns of `D` bit-packed.
#[derive(Clone, Debug)]
pub struct QuantizedActivation {
    pub x_ref: f64,
    pub gammas: Vec<f64>,
    pub columns: Vec<PackedVector>,
}

impl QuantizedActivation {
    pub fn new(x_ref: f64, gammas: Vec<f64>, columns: Vec<PackedVector>) -> Result<Self> {
        if gammas.len() != columns.len() {
            return Err(Error::LengthMismatch { left: gammas.len(), right: columns.len() });
        }
        let n = columns.first().map_or(0, PackedVector::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::ShapeMismatch("ragged activation columns".into()));
        }
        Ok(QuantizedActivation { x_ref, gammas, columns })
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, PackedVector::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bitwidth(&self) -> usize {
        self.gammas.len()
    }

    /// Dense reconstruction `x_ref + D·γ` (the reference path).
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = vec![self.x_ref; self.len()];
        for (col, &g) in self.columns.iter().zip(&self.gammas) {
            for (o, s) in out.iter_mut().zip(col.to_signs()) {
                *o += g * s;
            }
        }
        out
    }

    pub fn slice(&self, offset: usize, len: usize) -> QuantizedActivation {
        QuantizedActivation {
            x_ref: self.x_ref,
            gammas: self.gammas.clone(),
            columns: self.columns.iter().map(|c| c.slice(offset, len)).collect(),
        }
    }
}

/// Bitwise dot product of one quantized weight group with a quantized
/// activation segment:
/// `x_ref·Σᵢ αᵢ·colsum(βᵢ) + Σᵢⱼ αᵢγⱼ·pm1_dot(βᵢ, dⱼ)`.
pub fn multibit_dot(group: &QuantGroup, act: &QuantizedActivation) -> Result<f64> {
    if group.bitwidth() > 0 && act.bitwidth() > 0 && group.len() != act.len() {
        return Err(Error::ShapeMismatch(format!(
            "group n {} vs activation n {}",
            group.len(),
            act.len()
        )));
    }
    let mut out = 0.0;
    for (beta, &alpha) in group.basis().iter().zip(group.coords()) {
        out += act.x_ref * alpha * colsum(beta) as f64;
        for (d, &gamma) in act.columns.iter().zip(&act.gammas) {
            out += alpha * gamma * pm1_dot(beta, d)? as f64;
        }
    }
    Ok(out)
}

/// Row/segment geometry of a grouped fc layer whose groups cover
/// contiguous input segments.
fn fc_segments(layer: &GroupedLayer) -> Result<(usize, usize, usize)> {
    if layer.shape.len() != 2 {
        return Err(Error::IncompatibleGrouping(format!(
            "need an fc layer, got shape {:?}",
            layer.shape
        )));
    }
    let (rows, cols) = (layer.shape[0], layer.shape[1]);
    match layer.structure {
        GroupingStructure::Channelwise => Ok((rows, 1, cols)),
        GroupingStructure::Subchannelwise(s) => Ok((rows, s, cols / s)),
        GroupingStructure::RowChunk(n) => {
            if cols % n != 0 {
                return Err(Error::IncompatibleGrouping(format!(
                    "chunk {n} does not tile rows of width {cols}"
                )));
            }
            Ok((rows, cols / n, n))
        }
        other => Err(Error::IncompatibleGrouping(format!(
            "structure {other} does not align groups with row segments"
        ))),
    }
}

/// Bitwise matrix-vector product of a grouped fc layer against a quantized
/// activation. Equals the dense reconstructed product; rows run in
/// parallel.
pub fn multibit_matvec(layer: &GroupedLayer, act: &QuantizedActivation) -> Result<Vec<f64>> {
    multibit_matvec_impl(layer, act, false)
}

/// Sequential reference path for [`multibit_matvec`].
pub fn multibit_matvec_seq(layer: &GroupedLayer, act: &QuantizedActivation) -> Result<Vec<f64>> {
    multibit_matvec_impl(layer, act, true)
}

fn multibit_matvec_impl(layer: &GroupedLayer, act: &QuantizedActivation, seq: bool) -> Result<Vec<f64>> {
    let (rows, segs, seg_len) = fc_segments(layer)?;
    if act.len() != layer.shape[1] {
        return Err(Error::ShapeMismatch(format!(
            "activation len {} vs layer width {}",
            act.len(),
            layer.shape[1]
        )));
    }
    let row_fn = |r: usize| -> Result<f64> {
        let mut acc = 0.0;
        for s in 0..segs {
            let group = &layer.groups[r * segs + s];
            let seg = act.slice(s * seg_len, seg_len);
            acc += multibit_dot(group, &seg)?;
        }
        Ok(acc)
    };
    let out = if seq { exec::map_range_seq(rows, row_fn) } else { exec::map_range(rows, row_fn) };
    out.into_iter().collect()
}

/// Popcount-word operations one [`multibit_matvec`] call performs:
/// `Σ_groups I_g·(I_x+1)·ceil(n/64)` — each basis column meets every
/// activation column plus the all-ones column once per word.
pub fn matvec_op_count(layer: &GroupedLayer, act_bits: usize) -> u64 {
    layer
        .groups
        .iter()
        .map(|g| (g.bitwidth() * (act_bits + 1) * g.len().div_ceil(WORD_BITS)) as u64)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_rng, Tensor};
    use rand::Rng;

    fn random_packed(rng: &mut crate::numerics::Rng64, n: usize) -> (PackedVector, Vec<f64>) {
        let signs: Vec<f64> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        (PackedVector::from_signs(&signs).unwrap(), signs)
    }

    #[test]
    fn pm1_dot_trivial_cases() {
        let a = PackedVector::from_signs(&[1.0, -1.0, 1.0, -1.0, 1.0]).unwrap();
        assert_eq!(pm1_dot(&a, &a).unwrap(), 5);
        assert_eq!(pm1_dot(&a, &a.complement()).unwrap(), -5);
        let x = PackedVector::from_signs(&[1.0, -1.0, 1.0, -1.0]).unwrap();
        let y = PackedVector::from_signs(&[1.0, 1.0, -1.0, -1.0]).unwrap();
        assert_eq!(pm1_dot(&x, &y).unwrap(), 0);
    }

    #[test]
    fn pm1_dot_length_mismatch() {
        let a = PackedVector::ones(4);
        let b = PackedVector::ones(5);
        assert!(pm1_dot(&a, &b).is_err());
    }

    #[test]
    fn pm1_dot_matches_naive_across_padding_sizes() {
        let mut rng = seeded_rng(31);
        for n in 1..=130 {
            for _ in 0..20 {
                let (a, sa) = random_packed(&mut rng, n);
                let (b, sb) = random_packed(&mut rng, n);
                let naive: f64 = sa.iter().zip(&sb).map(|(x, y)| x * y).sum();
                assert_eq!(pm1_dot(&a, &b).unwrap(), naive as i64, "n = {n}");
            }
        }
    }

    #[test]
    fn slice_matches_sign_slice() {
        let mut rng = seeded_rng(32);
        let (p, signs) = random_packed(&mut rng, 200);
        for (off, len) in [(0, 64), (1, 64), (63, 70), (100, 100), (199, 1), (5, 0)] {
            let s = p.slice(off, len);
            assert_eq!(s.to_signs(), &signs[off..off + len]);
        }
    }

    #[test]
    fn colsum_equals_dot_with_ones() {
        let mut rng = seeded_rng(33);
        for n in [1usize, 63, 64, 65, 127, 130] {
            let (p, signs) = random_packed(&mut rng, n);
            let expect: f64 = signs.iter().sum();
            assert_eq!(colsum(&p), expect as i64);
            assert_eq!(colsum(&p), pm1_dot(&p, &PackedVector::ones(n)).unwrap());
        }
    }

    fn random_activation(rng: &mut crate::numerics::Rng64, n: usize, bits: usize) -> QuantizedActivation {
        let gammas: Vec<f64> = (0..bits).map(|_| rng.gen_range(0.05..1.0)).collect();
        let columns = (0..bits).map(|_| random_packed(rng, n).0).collect();
        QuantizedActivation::new(rng.gen_range(-1.0..1.0), gammas, columns).unwrap()
    }

    #[test]
    fn multibit_dot_zero_bitwidth_group() {
        let mut rng = seeded_rng(34);
        let act = random_activation(&mut rng, 16, 2);
        let g = QuantGroup::zero(16);
        assert_eq!(multibit_dot(&g, &act).unwrap(), 0.0);
    }

    #[test]
    fn multibit_dot_constant_activation() {
        // γ = 0 ⇒ result is x_ref·Σ αᵢ·colsum(βᵢ)
        let mut rng = seeded_rng(35);
        let w: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = crate::mbq::sketch_group(&w, 3, 0.0);
        let act = QuantizedActivation::new(0.7, vec![], vec![]).unwrap();
        let expect: f64 = g
            .basis()
            .iter()
            .zip(g.coords())
            .map(|(b, &a)| 0.7 * a * colsum(b) as f64)
            .sum();
        assert!((multibit_dot(&g, &act).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn multibit_dot_matches_dense_oracle() {
        let mut rng = seeded_rng(36);
        for _ in 0..50 {
            let n = 64;
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g = crate::mbq::sketch_group(&w, 2, 0.0);
            let act = random_activation(&mut rng, n, 2);
            let x_hat = act.reconstruct();
            let dense: f64 = g.reconstruct().iter().zip(&x_hat).map(|(a, b)| a * b).sum();
            let bitwise = multibit_dot(&g, &act).unwrap();
            assert!((dense - bitwise).abs() <= 1e-9, "dense {dense} vs bitwise {bitwise}");
        }
    }

    #[test]
    fn matvec_matches_dense_oracle() {
        let mut rng = seeded_rng(37);
        for &(rows, cols, structure) in &[
            (16usize, 64usize, GroupingStructure::Channelwise),
            (8, 64, GroupingStructure::Subchannelwise(2)),
            (8, 96, GroupingStructure::RowChunk(32)),
        ] {
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w = Tensor::from_vec(&[rows, cols], data).unwrap();
            let layer = GroupedLayer::sketch(&w, structure, 3, 0.0).unwrap();
            let act = random_activation(&mut rng, cols, 2);
            let x_hat = act.reconstruct();
            let dense = layer.reconstruct().unwrap().matvec(&x_hat).unwrap();
            let bitwise = multibit_matvec(&layer, &act).unwrap();
            let seq = multibit_matvec_seq(&layer, &act).unwrap();
            assert_eq!(bitwise, seq);
            for (d, b) in dense.iter().zip(&bitwise) {
                let rel = (d - b).abs() / d.abs().max(1e-9);
                assert!(rel <= 1e-6, "dense {d} vs bitwise {b}");
            }
        }
    }

    #[test]
    fn matvec_zero_activation() {
        let mut rng = seeded_rng(38);
        let data: Vec<f64> = (0..8 * 32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = Tensor::from_vec(&[8, 32], data).unwrap();
        let layer = GroupedLayer::sketch(&w, GroupingStructure::Channelwise, 2, 0.0).unwrap();
        // x_ref = 0 and γ = 0 reconstruct to the zero activation
        let act = QuantizedActivation::new(0.0, vec![0.0], vec![PackedVector::ones(32)]).unwrap();
        let out = multibit_matvec(&layer, &act).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn matvec_rejects_misaligned_grouping() {
        let w = Tensor::zeros(&[4, 6, 3, 3]);
        let layer = GroupedLayer::sketch(&w, GroupingStructure::Kernelwise, 1, 0.0).unwrap();
        let act = QuantizedActivation::new(0.0, vec![], vec![]).unwrap();
        assert!(matches!(
            multibit_matvec(&layer, &act),
            Err(Error::IncompatibleGrouping(_))
        ));
    }

    #[test]
    fn op_count_formula() {
        let mut rng = seeded_rng(39);
        let data: Vec<f64> = (0..4 * 130).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = Tensor::from_vec(&[4, 130], data).unwrap();
        let layer = GroupedLayer::sketch(&w, GroupingStructure::Channelwise, 3, 0.0).unwrap();
        let expect: u64 = layer
            .groups
            .iter()
            .map(|g| (g.bitwidth() * 3 * 130usize.div_ceil(64)) as u64)
            .sum();
        assert_eq!(matvec_op_count(&layer, 2), expect);
    }
}
