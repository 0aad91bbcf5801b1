//! Multi-bit activation quantization with a parameterized clipping vector
//! `γ' = [x_ref, γ₁..γ_{I_x}]` maintained by a running least-squares fit.

use crate::bitexec::{PackedVector, QuantizedActivation};
use crate::error::Result;
use crate::numerics::{least_squares, Tensor};

/// Activation quantizer: codebook levels are
/// `x_ref + Σᵢ bᵢ·γᵢ` over all sign patterns `b ∈ {−1,+1}^{I_x}`.
#[derive(Clone, Debug)]
pub struct ActQuantizer {
    i_x: usize,
    /// `[x_ref, γ₁, .., γ_{I_x}]`
    gamma_prime: Vec<f64>,
    momentum: f64,
}

impl ActQuantizer {
    pub fn new(x_ref: f64, gammas: Vec<f64>) -> Self {
        let i_x = gammas.len();
        let mut gamma_prime = Vec::with_capacity(1 + i_x);
        gamma_prime.push(x_ref);
        gamma_prime.extend(gammas);
        ActQuantizer { i_x, gamma_prime, momentum: 0.9 }
    }

    /// Data-driven start: center at the mean and halve the scale per bit.
    pub fn init_from(x: &[f64], i_x: usize) -> Self {
        assert!(i_x >= 1);
        let mean = x.iter().sum::<f64>() / x.len().max(1) as f64;
        let spread = x
            .iter()
            .map(|&v| (v - mean).abs())
            .fold(0.0f64, f64::max)
            .max(1e-3);
        let gammas = (0..i_x).map(|j| spread / 2f64.powi(j as i32 + 1)).collect();
        ActQuantizer::new(mean, gammas)
    }

    pub fn bits(&self) -> usize {
        self.i_x
    }

    pub fn x_ref(&self) -> f64 {
        self.gamma_prime[0]
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gamma_prime[1..]
    }

    pub fn gamma_prime(&self) -> &[f64] {
        &self.gamma_prime
    }

    /// Codebook as (value, pattern) pairs sorted ascending by value; equal
    /// values keep the smaller pattern.
    pub fn levels(&self) -> Vec<(f64, u32)> {
        let mut levels: Vec<(f64, u32)> = (0u32..1 << self.i_x)
            .map(|c| {
                let v = self.gamma_prime[0]
                    + (0..self.i_x)
                        .map(|j| super::project::candidate_sign(c, self.i_x, j) * self.gamma_prime[1 + j])
                        .sum::<f64>();
                (v, c)
            })
            .collect();
        levels.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        levels
    }

    fn assign(&self, x: &[f64]) -> (Vec<f64>, Vec<u32>) {
        let levels = self.levels();
        let mut x_hat = Vec::with_capacity(x.len());
        let mut patterns = Vec::with_capacity(x.len());
        for &v in x {
            let pos = levels.partition_point(|&(lv, _)| lv < v);
            let mut best: Option<(f64, u32, f64)> = None;
            for &(lv, c) in levels[pos.saturating_sub(1)..(pos + 1).min(levels.len())].iter() {
                let d = (lv - v).abs();
                let better = match best {
                    None => true,
                    Some((bd, bc, _)) => d < bd || (d == bd && c < bc),
                };
                if better {
                    best = Some((d, c, lv));
                }
            }
            let (_, c, lv) = best.unwrap();
            x_hat.push(lv);
            patterns.push(c);
        }
        (x_hat, patterns)
    }

    /// Quantize without updating the clipping parameters (inference path).
    pub fn quantize(&self, x: &[f64]) -> (Vec<f64>, Vec<u32>) {
        self.assign(x)
    }

    /// Bit-packed form of a quantized activation for the bitwise kernels.
    pub fn to_packed(&self, patterns: &[u32]) -> Result<QuantizedActivation> {
        let columns: Result<Vec<PackedVector>> = (0..self.i_x)
            .map(|j| {
                let signs: Vec<f64> = patterns
                    .iter()
                    .map(|&c| super::project::candidate_sign(c, self.i_x, j))
                    .collect();
                PackedVector::from_signs(&signs)
            })
            .collect();
        QuantizedActivation::new(self.x_ref(), self.gammas().to_vec(), columns?)
    }
}

/// Quantize `x` against the current codebook, then refresh `γ'` by the
/// running average `γ' ← 0.9·γ' + 0.1·γ'_new`, where `γ'_new` is the
/// least-squares fit of the assignment matrix `D' = [1, D]` to `x`.
/// Returns the quantized vector (under the codebook at entry).
pub fn act_quantize(x: &[f64], q: &mut ActQuantizer) -> Vec<f64> {
    let (x_hat, patterns) = q.assign(x);
    if let Some(new) = fit_gamma_prime(x, &patterns, q.i_x) {
        for (g, n) in q.gamma_prime.iter_mut().zip(&new) {
            *g = q.momentum * *g + (1.0 - q.momentum) * n;
        }
    }
    x_hat
}

/// `γ'_new = (D'ᵀD')⁻¹D'ᵀx`; `None` when the assignment matrix is
/// numerically singular (some patterns unused), in which case the caller
/// keeps the previous parameters.
fn fit_gamma_prime(x: &[f64], patterns: &[u32], i_x: usize) -> Option<Vec<f64>> {
    let n = x.len();
    if n < i_x + 1 {
        return None;
    }
    let mut data = Vec::with_capacity(n * (i_x + 1));
    for &c in patterns {
        data.push(1.0);
        for j in 0..i_x {
            data.push(super::project::candidate_sign(c, i_x, j));
        }
    }
    let d = Tensor::from_vec(&[n, i_x + 1], data).ok()?;
    least_squares(&d, x, 0.0).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exactly_representable_input_is_fixed_point() {
        // x hits every level: x̂ = x and γ'_new reproduces γ'
        let mut q = ActQuantizer::new(1.0, vec![2.0, 0.5]);
        let x: Vec<f64> = q.levels().iter().map(|&(v, _)| v).collect();
        let before = q.gamma_prime().to_vec();
        let x_hat = act_quantize(&x, &mut q);
        assert_eq!(x_hat, x);
        for (b, a) in before.iter().zip(q.gamma_prime()) {
            assert!((b - a).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_equations_two_point_fit() {
        // x = [3, 1] with 1-bit assignments (+1), (−1): γ'_new = [2, 1]
        let mut q = ActQuantizer::new(2.5, vec![1.0]);
        // levels: 1.5 (pattern −1), 3.5 (pattern +1); 3→3.5, 1→1.5
        let (_, patterns) = q.quantize(&[3.0, 1.0]);
        assert_eq!(patterns, vec![0, 1]);
        let fitted = fit_gamma_prime(&[3.0, 1.0], &patterns, 1).unwrap();
        assert!((fitted[0] - 2.0).abs() < 1e-12);
        assert!((fitted[1] - 1.0).abs() < 1e-12);
        act_quantize(&[3.0, 1.0], &mut q);
        // running average: 0.9·[2.5,1] + 0.1·[2,1] = [2.45, 1]
        assert!((q.x_ref() - 2.45).abs() < 1e-12);
        assert!((q.gammas()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_when_new_equals_old() {
        let mut q = ActQuantizer::new(0.0, vec![1.0]);
        // x = levels exactly → γ'_new == γ' → running average is a no-op
        let x = vec![-1.0, 1.0];
        act_quantize(&x, &mut q);
        assert!((q.x_ref()).abs() < 1e-12);
        assert!((q.gammas()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_assignment_keeps_parameters() {
        let mut q = ActQuantizer::new(0.0, vec![1.0]);
        let before = q.gamma_prime().to_vec();
        // all samples land on one level → D' singular → parameters kept
        act_quantize(&[5.0, 5.0, 5.0], &mut q);
        assert_eq!(q.gamma_prime(), &before[..]);
    }

    #[test]
    fn packed_activation_reconstructs_assignments() {
        let q = ActQuantizer::new(0.3, vec![0.8, 0.2]);
        let x = vec![-0.9, 0.1, 0.5, 1.4, 0.0, -0.2, 2.0, 0.33];
        let (x_hat, patterns) = q.quantize(&x);
        let packed = q.to_packed(&patterns).unwrap();
        let rec = packed.reconstruct();
        for (a, b) in x_hat.iter().zip(&rec) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
