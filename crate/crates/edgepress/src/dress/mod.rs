//! Nested sparse subnets: row-based unstructured sampling, parallel
//! training with weighted losses, layer-wise sparsity allocation, and the
//! prefix-ordered CSR storage format.
//!
//! `K` subnets share one backbone: the mask of a sparser subnet is always a
//! subset of every denser one (`mᵢ ⊙ mⱼ = mⱼ` for `i < j`), every row keeps
//! the same number of nonzeros per level, and one index/value table stores
//! all levels — the level-`k` subnet is the per-row prefix of that table.

mod csr;

pub use csr::{build_dress_csr, csr_cost, fetch_subnet, sparse_matvec, CsrCost, DressCsr, SubnetView};

use crate::error::Result;
use crate::exec;
use crate::model::{
    loss_and_accuracy, loss_and_grads, BatchStream, Grads, LabeledBatch, LrSchedule, MlpModel,
    ModelOptimizer,
};
use crate::numerics::AmsGradHyper;

/// Nonzeros per row for sparsity `s` on rows of size `n`: round-half-up
/// with a floor of one so no row ever empties.
pub fn nz_per_row(s: f64, n: usize) -> usize {
    (((1.0 - s) * n as f64).round() as usize).clamp(1, n)
}

/// Loss weights `π_k ∝ (1−s_k)^γ`, normalized to sum 1.
pub fn loss_weights(gamma: f64, levels: &[f64]) -> Vec<f64> {
    assert!(levels.iter().all(|&s| s > 0.0 && s < 1.0), "levels must lie in (0,1)");
    let raw: Vec<f64> = levels.iter().map(|&s| (1.0 - s).powf(gamma)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|a| a / sum).collect()
}

/// The sparsity ladder: ascending levels with their loss weights.
#[derive(Clone, Debug)]
pub struct SparsityLadder {
    pub levels: Vec<f64>,
    pub gamma: f64,
    pub pi: Vec<f64>,
}

impl SparsityLadder {
    pub fn new(levels: Vec<f64>, gamma: f64) -> Self {
        assert!(levels.windows(2).all(|w| w[0] < w[1]), "levels must be strictly ascending");
        let pi = loss_weights(gamma, &levels);
        SparsityLadder { levels, gamma, pi }
    }

    pub fn count(&self) -> usize {
        self.levels.len()
    }
}

/// Magnitude order of one row: indices sorted by descending `|w|`, ties by
/// ascending index.
fn row_magnitude_order(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| {
        row[b]
            .abs()
            .partial_cmp(&row[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    idx
}

/// Per-level nonzero counts for one row size. Rounding can make adjacent
/// levels collide on small rows; counts are then nudged down so strictly
/// sparser levels stay strictly smaller (floored at one), which keeps the
/// prefix CSR format well-defined.
pub fn level_row_counts(levels: &[f64], row_size: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = levels.iter().map(|&s| nz_per_row(s, row_size)).collect();
    for k in 1..counts.len() {
        counts[k] = counts[k].min(counts[k - 1].saturating_sub(1)).max(1);
    }
    counts
}

/// Row-based unstructured sampling: for each row of the `G×N` view the
/// top-`(1−s_k)·N` magnitudes are selected per level. Masks are returned
/// flat (row-major) and are nested by construction.
pub fn row_sample_masks(weights: &[f64], row_size: usize, levels: &[f64]) -> Vec<Vec<bool>> {
    assert_eq!(weights.len() % row_size, 0, "row size must divide the weight count");
    let rows = weights.len() / row_size;
    let counts = level_row_counts(levels, row_size);
    let mut masks = vec![vec![false; weights.len()]; levels.len()];
    for r in 0..rows {
        let row = &weights[r * row_size..(r + 1) * row_size];
        let order = row_magnitude_order(row);
        for (k, &nz) in counts.iter().enumerate() {
            for &j in &order[..nz] {
                masks[k][r * row_size + j] = true;
            }
        }
    }
    masks
}

/// Global magnitude-based allocation: select the `(1−s)` fraction of all
/// weights with the largest magnitudes across layers, then express each
/// layer's share as a layer-wise sparsity.
pub fn allocate_layerwise_sparsity(layers: &[&[f64]], s: f64) -> Vec<f64> {
    assert!((0.0..=1.0).contains(&s));
    let total: usize = layers.iter().map(|l| l.len()).sum();
    let keep = ((1.0 - s) * total as f64).round() as usize;
    let mut entries: Vec<(f64, usize)> = Vec::with_capacity(total);
    for (l, w) in layers.iter().enumerate() {
        for &v in w.iter() {
            entries.push((v.abs(), l));
        }
    }
    // descending magnitude, ties by ascending global index (stable sort
    // preserves layer-major order among equals)
    entries.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut kept = vec![0usize; layers.len()];
    for &(_, l) in entries.iter().take(keep) {
        kept[l] += 1;
    }
    layers
        .iter()
        .zip(&kept)
        .map(|(w, &k)| 1.0 - k as f64 / w.len() as f64)
        .collect()
}

/// Check the nesting constraint `mᵢ ⊙ mⱼ = mⱼ` for all `i < j`.
pub fn masks_nested(masks: &[Vec<bool>]) -> bool {
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            if masks[i].len() != masks[j].len() {
                return false;
            }
            if masks[j].iter().zip(&masks[i]).any(|(&mj, &mi)| mj && !mi) {
                return false;
            }
        }
    }
    true
}

/// Per-layer row sizes: one output-neuron row per default, split into
/// equal chunks when the fan-in exceeds the 8-bit index range of the CSR
/// format.
pub fn default_row_sizes(model: &MlpModel, max_row: usize) -> Vec<usize> {
    model
        .layers
        .iter()
        .map(|l| {
            let c_in = l.c_in();
            if c_in <= max_row {
                c_in
            } else {
                let mut d = 1;
                for cand in 1..=max_row {
                    if c_in % cand == 0 {
                        d = cand;
                    }
                }
                d
            }
        })
        .collect()
}

/// Per-layer, per-level masks of the current backbone weights.
pub fn sample_model_masks(
    model: &MlpModel,
    row_sizes: &[usize],
    sparsities: &[Vec<f64>],
) -> Vec<Vec<Vec<bool>>> {
    let k = sparsities.len();
    let mut masks: Vec<Vec<Vec<bool>>> = vec![Vec::new(); k];
    for (l, layer) in model.layers.iter().enumerate() {
        let per_level: Vec<f64> = sparsities.iter().map(|row| row[l]).collect();
        let layer_masks = row_sample_masks(layer.weight.data(), row_sizes[l], &per_level);
        for (ki, m) in layer_masks.into_iter().enumerate() {
            masks[ki].push(m);
        }
    }
    masks
}

fn masked_model(model: &MlpModel, mask: &[Vec<bool>]) -> MlpModel {
    let mut out = model.clone();
    for (l, layer) in out.layers.iter_mut().enumerate() {
        for (w, &keep) in layer.weight.data_mut().iter_mut().zip(&mask[l]) {
            if !keep {
                *w = 0.0;
            }
        }
    }
    out
}

/// One parallel-training step: re-sample all masks from the current
/// backbone magnitudes, run each subnet's forward/backward, accumulate the
/// π-weighted masked gradients onto the backbone, and take one optimizer
/// step on the dense weights. Returns the per-subnet losses.
pub fn dress_train_step(
    model: &mut MlpModel,
    opt: &mut ModelOptimizer,
    row_sizes: &[usize],
    sparsities: &[Vec<f64>],
    pi: &[f64],
    batch: &LabeledBatch,
) -> Result<Vec<f64>> {
    let masks = sample_model_masks(model, row_sizes, sparsities);
    let subnet_ids: Vec<usize> = (0..pi.len()).collect();
    let passes = exec::map(&subnet_ids, |&k| {
        let sub = masked_model(model, &masks[k]);
        loss_and_grads(&sub, batch)
    });
    let mut acc = Grads::zeros_like(model);
    let mut losses = Vec::with_capacity(pi.len());
    for (k, pass) in passes.into_iter().enumerate() {
        let (loss, mut grads) = pass?;
        losses.push(loss);
        for (l, gw) in grads.weights.iter_mut().enumerate() {
            for (g, &keep) in gw.data_mut().iter_mut().zip(&masks[k][l]) {
                if !keep {
                    *g = 0.0;
                }
            }
        }
        acc.scaled_add(&grads, pi[k])?;
    }
    opt.step_model(model, &acc, None, false)?;
    Ok(losses)
}

/// Training configuration for [`dress_train`].
#[derive(Clone, Debug)]
pub struct DressConfig {
    pub ladder: SparsityLadder,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Per-layer row sizes; `None` chooses [`default_row_sizes`] with the
    /// 8-bit index limit.
    pub row_sizes: Option<Vec<usize>>,
}

#[derive(Clone, Debug)]
pub struct DressEpochRecord {
    pub epoch: usize,
    pub per_subnet_val_acc: Vec<f64>,
    pub avg_val_acc: f64,
    pub reallocated: bool,
}

#[derive(Clone, Debug)]
pub struct DressTrainResult {
    pub backbone: MlpModel,
    /// `[level][layer]` masks of the best-validation snapshot.
    pub masks: Vec<Vec<Vec<bool>>>,
    /// `[level][layer]` sparsity allocations in force at that snapshot.
    pub allocations: Vec<Vec<f64>>,
    pub row_sizes: Vec<usize>,
    pub trace: Vec<DressEpochRecord>,
}

fn evaluate_subnets(
    model: &MlpModel,
    masks: &[Vec<Vec<bool>>],
    val: &LabeledBatch,
) -> Result<Vec<f64>> {
    masks
        .iter()
        .map(|m| Ok(loss_and_accuracy(&masked_model(model, m), val)?.1))
        .collect()
}

/// Stage-2 training: jointly train all subnets for `epochs`, keeping the
/// best-average-validation snapshot and re-allocating layer-wise sparsity
/// whenever an epoch fails to improve it.
pub fn dress_train(
    model: &MlpModel,
    train: &LabeledBatch,
    val: &LabeledBatch,
    cfg: &DressConfig,
) -> Result<DressTrainResult> {
    let row_sizes = cfg
        .row_sizes
        .clone()
        .unwrap_or_else(|| default_row_sizes(model, 256));
    let mut backbone = model.clone();
    let layer_views: Vec<&[f64]> = backbone.layers.iter().map(|l| l.weight.data()).collect();
    let mut allocations: Vec<Vec<f64>> = cfg
        .ladder
        .levels
        .iter()
        .map(|&s| allocate_layerwise_sparsity(&layer_views, s))
        .collect();
    let mut opt = ModelOptimizer::new(&backbone, LrSchedule::constant(cfg.lr), AmsGradHyper::default());
    let mut stream = BatchStream::new(train.len(), cfg.batch_size, cfg.seed);
    let mut trace = Vec::new();
    let mut best_avg = f64::NEG_INFINITY;
    let mut best: Option<(MlpModel, Vec<Vec<Vec<bool>>>, Vec<Vec<f64>>)> = None;
    let steps_per_epoch = stream.batches_per_epoch();
    for epoch in 0..cfg.epochs.max(1) {
        if cfg.epochs > 0 {
            for _ in 0..steps_per_epoch {
                let batch = train.subset(&stream.next_indices());
                dress_train_step(&mut backbone, &mut opt, &row_sizes, &allocations, &cfg.ladder.pi, &batch)?;
            }
        }
        let masks = sample_model_masks(&backbone, &row_sizes, &allocations);
        let accs = evaluate_subnets(&backbone, &masks, val)?;
        let avg = accs.iter().sum::<f64>() / accs.len() as f64;
        let improved = avg > best_avg;
        if improved {
            best_avg = avg;
            best = Some((backbone.clone(), masks, allocations.clone()));
        } else {
            // validation stalled: re-allocate layer-wise sparsity from the
            // current backbone magnitudes
            let views: Vec<&[f64]> = backbone.layers.iter().map(|l| l.weight.data()).collect();
            allocations = cfg
                .ladder
                .levels
                .iter()
                .map(|&s| allocate_layerwise_sparsity(&views, s))
                .collect();
        }
        trace.push(DressEpochRecord {
            epoch,
            per_subnet_val_acc: accs,
            avg_val_acc: avg,
            reallocated: !improved,
        });
        if cfg.epochs == 0 {
            break;
        }
    }
    let (backbone, masks, allocations) = best.expect("at least one evaluation ran");
    Ok(DressTrainResult { backbone, masks, allocations, row_sizes, trace })
}
