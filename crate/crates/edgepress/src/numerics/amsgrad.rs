use crate::error::{Error, Result};

/// AMSGrad hyperparameters. Both moments use bias correction; the second
/// moment's running maximum is taken over the corrected values so it stays
/// monotone non-decreasing.
#[derive(Clone, Copy, Debug)]
pub struct AmsGradHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AmsGradHyper {
    fn default() -> Self {
        AmsGradHyper { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second-moment accumulators powering both plain steps and
/// projection updates.
#[derive(Clone, Debug)]
pub struct AmsGradState {
    m: Vec<f64>,
    v: Vec<f64>,
    v_max: Vec<f64>,
    step_count: u64,
    hyper: AmsGradHyper,
}

impl AmsGradState {
    pub fn new(dim: usize, hyper: AmsGradHyper) -> Self {
        AmsGradState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            v_max: vec![0.0; dim],
            step_count: 0,
            hyper,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn hyper(&self) -> AmsGradHyper {
        self.hyper
    }

    /// Fold a gradient into the moment estimates. `v_max` absorbs the
    /// elementwise maximum of the bias-corrected second moment.
    pub fn update_moments(&mut self, grad: &[f64]) -> Result<()> {
        if grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient dim {} vs state dim {}",
                grad.len(),
                self.m.len()
            )));
        }
        self.step_count += 1;
        let b1 = self.hyper.beta1;
        let b2 = self.hyper.beta2;
        let c2 = 1.0 - b2.powi(self.step_count as i32);
        for i in 0..grad.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let v_hat = self.v[i] / c2;
            if v_hat > self.v_max[i] {
                self.v_max[i] = v_hat;
            }
        }
        Ok(())
    }

    /// Bias-corrected first moment `m̂`.
    pub fn first_moment_hat(&self) -> Vec<f64> {
        let c1 = 1.0 - self.hyper.beta1.powi(self.step_count as i32);
        self.m.iter().map(|&m| m / c1).collect()
    }

    /// Running maximum of the bias-corrected second moment `v̂`.
    pub fn second_moment_max(&self) -> &[f64] {
        &self.v_max
    }

    /// Parameter increment `−lr · m̂ / (√v̂_max + ε)` for the current moments.
    pub fn delta(&self, lr: f64) -> Vec<f64> {
        let c1 = 1.0 - self.hyper.beta1.powi(self.step_count as i32);
        let eps = self.hyper.epsilon;
        self.m
            .iter()
            .zip(&self.v_max)
            .map(|(&m, &vm)| -lr * (m / c1) / (vm.sqrt() + eps))
            .collect()
    }

    /// Update moments with `grad` and return the resulting increment.
    pub fn step(&mut self, grad: &[f64], lr: f64) -> Result<Vec<f64>> {
        self.update_moments(grad)?;
        Ok(self.delta(lr))
    }

    /// The diagonal curvature proxy `H = √v̂_max`, floored at ε so
    /// divisions by `H` stay finite on fresh state.
    pub fn curvature_diag(&self) -> Vec<f64> {
        let eps = self.hyper.epsilon;
        self.v_max.iter().map(|&vm| vm.sqrt().max(eps)).collect()
    }

    /// Drop state entries where `keep` is false (used when coordinates are
    /// pruned away); surviving entries keep their history.
    pub fn retain(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.m.len());
        let filter = |v: &mut Vec<f64>| {
            let mut it = keep.iter();
            v.retain(|_| *it.next().unwrap());
        };
        filter(&mut self.m);
        filter(&mut self.v);
        filter(&mut self.v_max);
    }

    /// Flip the sign convention of coordinate `i` (first moment only; the
    /// second moment is sign-invariant).
    pub fn negate_entry(&mut self, i: usize) {
        self.m[i] = -self.m[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_fresh_state_gives_zero_delta() {
        let mut s = AmsGradState::new(3, AmsGradHyper::default());
        let d = s.step(&[0.0; 3], 0.01).unwrap();
        assert_eq!(d, vec![0.0; 3]);
    }

    #[test]
    fn first_step_is_bias_corrected() {
        // grad = 1: m̂ = 1, v̂ = 1, delta ≈ −lr.
        let mut s = AmsGradState::new(1, AmsGradHyper::default());
        let d = s.step(&[1.0], 0.01).unwrap();
        assert!((d[0] + 0.01).abs() < 1e-9, "delta = {}", d[0]);
    }

    #[test]
    fn constant_grad_step_magnitude_approaches_lr() {
        let mut s = AmsGradState::new(1, AmsGradHyper::default());
        let mut d = vec![0.0];
        for _ in 0..5000 {
            d = s.step(&[1.0], 0.01).unwrap();
        }
        assert!((d[0].abs() - 0.01).abs() < 1e-6, "|delta| = {}", d[0].abs());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut s = AmsGradState::new(2, AmsGradHyper::default());
        assert!(s.step(&[1.0], 0.01).is_err());
    }

    #[test]
    fn v_max_monotone_nondecreasing() {
        use rand::Rng;
        let mut rng = crate::numerics::seeded_rng(11);
        let mut s = AmsGradState::new(4, AmsGradHyper::default());
        let mut prev = s.second_moment_max().to_vec();
        for _ in 0..200 {
            let g: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            s.update_moments(&g).unwrap();
            for (p, c) in prev.iter().zip(s.second_moment_max()) {
                assert!(c >= p);
            }
            prev = s.second_moment_max().to_vec();
        }
    }

    #[test]
    fn converges_on_random_spd_quadratic() {
        // f(θ) = ½θᵀAθ with A symmetric positive definite, dim ≤ 10:
        // iterates reach ‖θ‖ ≤ 1e-3 of the minimizer (origin) within 5000
        // steps at lr = 0.01.
        use rand::Rng;
        let mut rng = crate::numerics::seeded_rng(13);
        for dim in [2usize, 5, 10] {
            // A = MᵀM/dim + I keeps the spectrum within a civilized range
            let m: Vec<f64> = (0..dim * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut a = vec![0.0; dim * dim];
            for i in 0..dim {
                for j in 0..dim {
                    let mut s = if i == j { 1.0 } else { 0.0 };
                    for k in 0..dim {
                        s += m[k * dim + i] * m[k * dim + j] / dim as f64;
                    }
                    a[i * dim + j] = s;
                }
            }
            let mut theta: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut st = AmsGradState::new(dim, AmsGradHyper::default());
            for _ in 0..5000 {
                let grad: Vec<f64> = (0..dim)
                    .map(|i| (0..dim).map(|j| a[i * dim + j] * theta[j]).sum())
                    .collect();
                let d = st.step(&grad, 0.01).unwrap();
                for (t, di) in theta.iter_mut().zip(&d) {
                    *t += di;
                }
            }
            let dist = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
            assert!(dist <= 1e-3, "dim {dim}: final distance {dist}");
        }
    }
}
