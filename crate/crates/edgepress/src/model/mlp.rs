use crate::error::{Error, Result};
use crate::model::data::LabeledBatch;
use crate::numerics::{seeded_rng, Tensor};
use rand::Rng;

/// One fully connected layer: `weight` is `[c_out, c_in]`, `bias` is
/// `c_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn c_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn c_in(&self) -> usize {
        self.weight.cols()
    }
}

/// Multilayer perceptron with ReLU between layers and softmax at the
/// output. Adjacent layer dimensions chain.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Linear>,
}

impl MlpModel {
    /// Deterministic initialization: weights uniform in
    /// ±√(6/(c_in+c_out)), biases zero.
    pub fn new(dims: &[usize], seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least one layer");
        let mut rng = seeded_rng(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (c_in, c_out) = (w[0], w[1]);
            let bound = (6.0 / (c_in + c_out) as f64).sqrt();
            let data: Vec<f64> = (0..c_in * c_out).map(|_| rng.gen_range(-bound..bound)).collect();
            layers.push(Linear {
                weight: Tensor::from_vec(&[c_out, c_in], data).unwrap(),
                bias: vec![0.0; c_out],
            });
        }
        MlpModel { layers }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].c_in()];
        d.extend(self.layers.iter().map(Linear::c_out));
        d
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().unwrap().c_out()
    }

    /// Total parameter count (weights and biases).
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Flatten all parameters (layer by layer, weights then bias) into one
    /// vector.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`flatten_params`]: overwrite this model's parameters.
    pub fn unflatten_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "flat vector {} vs parameter count {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let wn = l.weight.len();
            l.weight.data_mut().copy_from_slice(&flat[off..off + wn]);
            off += wn;
            let bn = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + bn]);
            off += bn;
        }
        Ok(())
    }
}

/// Per-layer inputs and pre-activations captured during the forward pass;
/// `inputs[l]` feeds layer `l`, `pre_acts[l]` is its affine output before
/// the nonlinearity.
pub struct ForwardCache {
    pub inputs: Vec<Tensor>,
    pub pre_acts: Vec<Tensor>,
}

/// Forward pass over a batch: returns logits `[batch, classes]` and the
/// cache for the backward pass.
pub fn forward(model: &MlpModel, inputs: &Tensor) -> Result<(Tensor, ForwardCache)> {
    if inputs.shape().len() != 2 || inputs.cols() != model.layers[0].c_in() {
        return Err(Error::ShapeMismatch(format!(
            "inputs {:?} vs first layer width {}",
            inputs.shape(),
            model.layers[0].c_in()
        )));
    }
    let nl = model.layers.len();
    let mut cache = ForwardCache { inputs: Vec::with_capacity(nl), pre_acts: Vec::with_capacity(nl) };
    let mut x = inputs.clone();
    for (l, layer) in model.layers.iter().enumerate() {
        let mut y = x.matmul_nt(&layer.weight)?;
        y.add_row_vec(&layer.bias)?;
        cache.inputs.push(x);
        cache.pre_acts.push(y.clone());
        x = if l + 1 < nl { y.map(|v| v.max(0.0)) } else { y };
    }
    Ok((x, cache))
}

/// Row-wise stable softmax.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let (n, c) = (logits.rows(), logits.cols());
    let mut out = logits.clone();
    for r in 0..n {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        debug_assert_eq!(row.len(), c);
    }
    out
}

/// Per-parameter gradients in the model's layer order.
#[derive(Clone, Debug)]
pub struct Grads {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Grads {
            weights: model.layers.iter().map(|l| Tensor::zeros(l.weight.shape())).collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn scaled_add(&mut self, other: &Grads, scale: f64) -> Result<()> {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            let scaled = b.map(|v| v * scale);
            a.add_in_place(&scaled)?;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        Ok(())
    }
}

/// Mean softmax cross-entropy over the batch plus exact analytic gradients
/// for every weight and bias.
pub fn loss_and_grads(model: &MlpModel, batch: &LabeledBatch) -> Result<(f64, Grads)> {
    let (logits, cache) = forward(model, &batch.inputs)?;
    let n = batch.len();
    let probs = softmax_rows(&logits);
    let mut loss = 0.0;
    // dL/dlogits = (softmax − onehot) / n
    let mut delta = probs.clone();
    for (r, &label) in batch.labels.iter().enumerate() {
        let p = probs.at(r, label);
        loss -= p.max(1e-300).ln();
        let v = delta.at(r, label);
        delta.set(r, label, v - 1.0);
    }
    loss /= n as f64;
    delta.scale_in_place(1.0 / n as f64);

    let nl = model.layers.len();
    let mut weights = vec![Tensor::zeros(&[0]); nl];
    let mut biases = vec![Vec::new(); nl];
    let mut d = delta;
    for l in (0..nl).rev() {
        // dW = dᵀ·x  where d: [batch, out], x: [batch, in]
        weights[l] = d.matmul_tn(&cache.inputs[l])?;
        biases[l] = (0..d.cols()).map(|j| (0..d.rows()).map(|r| d.at(r, j)).sum()).collect();
        if l > 0 {
            // dX = d·W, gated by the ReLU mask of the previous pre-activation.
            let mut dx = d.matmul_nn(&model.layers[l].weight)?;
            let pre = &cache.pre_acts[l - 1];
            for (v, &p) in dx.data_mut().iter_mut().zip(pre.data()) {
                if p <= 0.0 {
                    *v = 0.0;
                }
            }
            d = dx;
        }
    }
    Ok((loss, Grads { weights, biases }))
}

/// Mean loss and top-1 accuracy without gradient bookkeeping.
pub fn loss_and_accuracy(model: &MlpModel, batch: &LabeledBatch) -> Result<(f64, f64)> {
    let (logits, _) = forward(model, &batch.inputs)?;
    let probs = softmax_rows(&logits);
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (r, &label) in batch.labels.iter().enumerate() {
        loss -= probs.at(r, label).max(1e-300).ln();
        let row = probs.row(r);
        let pred = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if pred == label {
            correct += 1;
        }
    }
    let n = batch.len() as f64;
    Ok((loss / n, correct as f64 / n))
}
