use crate::numerics::Tensor;

/// Central-difference gradient estimate `(f(θ+h·eᵢ) − f(θ−h·eᵢ)) / (2h)`
/// per coordinate. Used as the independent oracle for analytic gradients.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> f64, theta: &Tensor, h: f64) -> Tensor {
    assert!(h > 0.0, "step size must be positive");
    let mut probe = theta.clone();
    let mut grad = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Tensor::from_vec(theta.shape(), grad).expect("finite differences stayed finite")
}
