//! Row projection for base optimization: replace each ±1 row pattern with
//! the enumerated minimizer of `|bᵀα − target|` over all 2^{I_g} patterns.

/// Sign of entry `j` of candidate pattern `c` (bit-reversed so ascending
/// `c` is lexicographically ascending with +1 before −1; `c = 0` is the
/// all-(+1) pattern).
#[inline]
pub fn candidate_sign(c: u32, i_g: usize, j: usize) -> f64 {
    if c >> (i_g - 1 - j) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// All `2^{I_g}` values of `bᵀα`, indexed by candidate pattern.
pub fn enumerate_candidates(alpha: &[f64]) -> Vec<f64> {
    let i_g = alpha.len();
    assert!(i_g >= 1 && i_g <= 24, "bitwidth out of range");
    (0u32..1 << i_g)
        .map(|c| (0..i_g).map(|j| candidate_sign(c, i_g, j) * alpha[j]).sum())
        .collect()
}

/// Pre-sorted candidate table for projecting many rows against one α.
pub struct RowProjector {
    i_g: usize,
    /// (value, pattern), sorted by value; equal values keep the smallest
    /// pattern.
    sorted: Vec<(f64, u32)>,
}

impl RowProjector {
    pub fn new(alpha: &[f64]) -> Self {
        let vals = enumerate_candidates(alpha);
        let mut sorted: Vec<(f64, u32)> = vals.into_iter().zip(0u32..).collect();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        sorted.dedup_by(|next, kept| {
            if next.0 == kept.0 {
                kept.1 = kept.1.min(next.1);
                true
            } else {
                false
            }
        });
        RowProjector { i_g: alpha.len(), sorted }
    }

    pub fn bitwidth(&self) -> usize {
        self.i_g
    }

    /// Nearest candidate to `target`; distance ties resolve to the smaller
    /// pattern.
    pub fn nearest(&self, target: f64) -> (u32, f64) {
        let pos = self.sorted.partition_point(|&(v, _)| v < target);
        let mut best: Option<(f64, u32, f64)> = None;
        for &(v, c) in self.sorted[pos.saturating_sub(1)..(pos + 1).min(self.sorted.len())].iter() {
            let d = (v - target).abs();
            let better = match best {
                None => true,
                Some((bd, bc, _)) => d < bd || (d == bd && c < bc),
            };
            if better {
                best = Some((d, c, v));
            }
        }
        let (_, c, v) = best.unwrap();
        (c, v)
    }
}

/// One-shot projection of a single row (builds the table each call).
pub fn project_row(alpha: &[f64], target: f64) -> (u32, f64) {
    RowProjector::new(alpha).nearest(target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Independent oracle: linear scan over every pattern with the same
    /// summation order.
    pub fn project_row_oracle(alpha: &[f64], target: f64) -> (u32, f64) {
        let i_g = alpha.len();
        let mut best = (u32::MAX, f64::INFINITY, f64::INFINITY);
        for c in 0u32..1 << i_g {
            let v: f64 = (0..i_g).map(|j| candidate_sign(c, i_g, j) * alpha[j]).sum();
            let d = (v - target).abs();
            if d < best.1 {
                best = (c, d, v);
            }
        }
        (best.0, best.2)
    }

    #[test]
    fn single_coordinate_sign_choice() {
        // α = [1], target 0.3: |1−0.3| < |−1−0.3| so the +1 pattern wins
        let (c, v) = project_row(&[1.0], 0.3);
        assert_eq!((c, v), (0, 1.0));
        let (c, v) = project_row(&[1.0], -0.3);
        assert_eq!((c, v), (1, -1.0));
    }

    #[test]
    fn two_coordinate_enumeration() {
        // α = [0.5, 0.4], target −0.2: candidates {0.9, 0.1, −0.1, −0.9},
        // nearest is −0.1 from pattern (−1, +1)
        let (c, v) = project_row(&[0.5, 0.4], -0.2);
        assert!((v + 0.1).abs() < 1e-12);
        assert_eq!(candidate_sign(c, 2, 0), -1.0);
        assert_eq!(candidate_sign(c, 2, 1), 1.0);
    }

    #[test]
    fn tie_breaks_to_smaller_pattern() {
        // α = [1]: target 0 is equidistant from ±1; all-(+1) pattern (c=0)
        // must win
        assert_eq!(project_row(&[1.0], 0.0).0, 0);
        // α = [0.5, 0.5]: candidates {1, 0, 0, −1}; value 0 appears twice,
        // keep c=1 over c=2
        assert_eq!(project_row(&[0.5, 0.5], 0.05).0, 1);
    }

    #[test]
    fn matches_oracle_on_random_inputs() {
        let mut rng = crate::numerics::seeded_rng(41);
        for _ in 0..2000 {
            let i_g = rng.gen_range(1..=4);
            let alpha: Vec<f64> = (0..i_g).map(|_| rng.gen_range(0.01..1.0)).collect();
            let target = rng.gen_range(-2.0..2.0);
            let got = project_row(&alpha, target);
            let want = project_row_oracle(&alpha, target);
            assert_eq!(got.0, want.0, "alpha {alpha:?} target {target}");
            assert_eq!((got.1 - target).abs(), (want.1 - target).abs());
        }
    }
}
