//! Adaptive loss-aware quantization: α-domain pruning, projection-based
//! optimization of bases and coordinates, the STE loss-aware baseline, and
//! multi-bit activation quantization — all driven by one AMSGrad framework.
//!
//! The loss increment around the current point is modeled per group as the
//! diagonal quadratic `f = gᵀ(ŵ−ŵ⁰) + ½(ŵ−ŵ⁰)ᵀH(ŵ−ŵ⁰)` with `g = lr·m̂`
//! and `H = diag(√v̂_max)` taken from the optimizer moments; pruning costs
//! and projection targets both come from this model.

mod act;
mod project;

pub use act::{act_quantize, ActQuantizer};
pub use project::{candidate_sign, enumerate_candidates, project_row, RowProjector};

use crate::error::{Error, Result};
use crate::exec;
use crate::mbq::{avg_bitwidth, partition_indices, GroupedLayer, GroupingStructure, QuantGroup};
use crate::model::{
    loss_and_accuracy, loss_and_grads, BatchStream, Grads, LabeledBatch, Linear, MlpModel,
};
use crate::numerics::{solve_spd_small, AmsGradHyper, AmsGradState, Tensor};

/// Regularizer keeping the coordinate-refresh system invertible.
pub const COORD_REFRESH_LAMBDA: f64 = 1e-6;

/// One quantized layer: grouped multi-bit weights plus a full-precision
/// bias.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantLayer {
    pub grouped: GroupedLayer,
    pub bias: Vec<f64>,
}

/// The whole model in multi-bit form.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantModel {
    pub layers: Vec<QuantLayer>,
}

impl QuantModel {
    /// Sketch every layer of a dense model (initialization step).
    pub fn sketch(model: &MlpModel, structures: &[GroupingStructure], i_max: usize, sigma: f64) -> Result<Self> {
        if structures.len() != model.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} structures for {} layers",
                structures.len(),
                model.layers.len()
            )));
        }
        let layers = model
            .layers
            .iter()
            .zip(structures)
            .map(|(l, &s)| {
                Ok(QuantLayer {
                    grouped: GroupedLayer::sketch(&l.weight, s, i_max, sigma)?,
                    bias: l.bias.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(QuantModel { layers })
    }

    /// Dense model with reconstructed weights (the forward-pass view).
    pub fn to_model(&self) -> Result<MlpModel> {
        let layers = self
            .layers
            .iter()
            .map(|l| Ok(Linear { weight: l.grouped.reconstruct()?, bias: l.bias.clone() }))
            .collect::<Result<Vec<_>>>()?;
        Ok(MlpModel { layers })
    }

    pub fn total_alpha_count(&self) -> usize {
        self.layers.iter().map(|l| l.grouped.total_alpha_count()).sum()
    }

    pub fn group_count(&self) -> usize {
        self.layers.iter().map(|l| l.grouped.groups.len()).sum()
    }

    pub fn avg_bitwidth_per_layer(&self) -> Vec<f64> {
        self.layers.iter().map(|l| avg_bitwidth(&l.grouped)).collect()
    }

    pub fn avg_bitwidth(&self) -> f64 {
        let groups = self.group_count();
        if groups == 0 {
            return 0.0;
        }
        self.total_alpha_count() as f64 / groups as f64
    }

    /// All coordinates in canonical (layer, group, slot) order.
    pub fn alpha_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_alpha_count());
        for l in &self.layers {
            for g in &l.grouped.groups {
                out.extend_from_slice(g.coords());
            }
        }
        out
    }

    /// Per-layer α counts in canonical order (for the layerwise preselect).
    pub fn alpha_counts_per_layer(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.grouped.total_alpha_count()).collect()
    }

    /// Chain-rule gradient `∂ℓ/∂α = Bᵀ·∂ℓ/∂ŵ` per group, concatenated in
    /// canonical order.
    pub fn alpha_grads(&self, grads: &Grads) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.total_alpha_count());
        for (l, layer) in self.layers.iter().enumerate() {
            let gw = grads.weights[l].data();
            let idx = partition_indices(&layer.grouped.shape, layer.grouped.structure)?;
            for (g, gi) in layer.grouped.groups.iter().zip(&idx) {
                let local: Vec<f64> = gi.iter().map(|&i| gw[i]).collect();
                for col in g.basis() {
                    let s: f64 = col.to_signs().iter().zip(&local).map(|(a, b)| a * b).sum();
                    out.push(s);
                }
            }
        }
        Ok(out)
    }

    /// Overwrite coordinates from a canonical-order vector, flipping basis
    /// columns to keep α > 0. Returns the flat indices that flipped.
    pub fn set_alpha_vector(&mut self, values: &[f64]) -> Vec<usize> {
        let mut flipped = Vec::new();
        let mut off = 0;
        for l in &mut self.layers {
            for g in &mut l.grouped.groups {
                let b = g.bitwidth();
                g.coords_mut().copy_from_slice(&values[off..off + b]);
                for i in 0..b {
                    if g.coords()[i] < 0.0 {
                        g.flip_column(i);
                        flipped.push(off + i);
                    }
                }
                off += b;
            }
        }
        debug_assert_eq!(off, values.len());
        flipped
    }

    /// Remove the coordinates marked false in canonical order (and their
    /// basis columns).
    pub fn retain_alphas(&mut self, keep: &[bool]) {
        let mut off = 0;
        for l in &mut self.layers {
            for g in &mut l.grouped.groups {
                let b = g.bitwidth();
                for i in (0..b).rev() {
                    if !keep[off + i] {
                        g.remove_coord(i);
                    }
                }
                off += b;
            }
        }
        debug_assert_eq!(off, keep.len());
    }
}

/// AMSGrad state over the concatenated α vector of all layers; its
/// dimension tracks the current (post-pruning) coordinate count.
pub struct AlphaMomentum {
    pub state: AmsGradState,
}

impl AlphaMomentum {
    pub fn new(qm: &QuantModel, hyper: AmsGradHyper) -> Self {
        AlphaMomentum { state: AmsGradState::new(qm.total_alpha_count(), hyper) }
    }
}

/// Modeled loss increase if a single coordinate is zeroed:
/// `f = −g·α + ½·H·α²`.
pub fn alpha_cost(g: f64, h: f64, alpha: f64) -> f64 {
    -g * alpha + 0.5 * h * alpha * alpha
}

/// Pruning schedule: total surviving α counts after each outer round.
#[derive(Clone, Debug)]
pub struct PruneSchedule {
    pub targets: Vec<usize>,
    pub iters_per_round: usize,
    pub preselect_percent: f64,
}

impl PruneSchedule {
    /// Geometric schedule `M^{r+1} = round(M^r·(1−ratio))` for `rounds`
    /// rounds.
    pub fn geometric(m0: usize, ratio: f64, rounds: usize, iters: usize, k_percent: f64) -> Self {
        let mut targets = Vec::with_capacity(rounds);
        let mut m = m0 as f64;
        for _ in 0..rounds {
            m = (m * (1.0 - ratio)).round();
            targets.push(m as usize);
        }
        PruneSchedule { targets, iters_per_round: iters, preselect_percent: k_percent }
    }

    /// Geometric schedule clamped at the count matching a target average
    /// bitwidth; stops once the target is reached.
    pub fn to_avg_bitwidth(
        m0: usize,
        groups: usize,
        target_bits: f64,
        ratio: f64,
        iters: usize,
        k_percent: f64,
    ) -> Self {
        let floor = (target_bits * groups as f64).round() as usize;
        let mut targets = Vec::new();
        let mut m = m0;
        while m > floor {
            m = ((m as f64 * (1.0 - ratio)).round() as usize).max(floor);
            targets.push(m);
        }
        PruneSchedule { targets, iters_per_round: iters, preselect_percent: k_percent }
    }
}

/// Candidate selection for one pruning iteration: per-layer ascending sort
/// keeps the top `k%` cheapest coordinates, then a global resort picks the
/// `remove_count` cheapest overall. Returns flat canonical indices.
pub fn select_prune_candidates(
    costs: &[f64],
    layer_counts: &[usize],
    k_percent: f64,
    remove_count: usize,
) -> Vec<usize> {
    let mut pool: Vec<usize> = Vec::new();
    let mut off = 0;
    for &count in layer_counts {
        let mut idx: Vec<usize> = (off..off + count).collect();
        idx.sort_by(|&a, &b| costs[a].partial_cmp(&costs[b]).unwrap().then(a.cmp(&b)));
        let keep = ((count as f64 * k_percent / 100.0).ceil() as usize).clamp(1.min(count), count);
        pool.extend_from_slice(&idx[..keep]);
        off += count;
    }
    if pool.len() < remove_count {
        // widen to every coordinate so the quota can be met
        pool = (0..costs.len()).collect();
    }
    pool.sort_by(|&a, &b| costs[a].partial_cmp(&costs[b]).unwrap().then(a.cmp(&b)));
    pool.truncate(remove_count.min(pool.len()));
    pool
}

/// One execution of the pruning step: `iters` training iterations, each
/// removing `M_p = round((M₀−M_T)/iters)` coordinates (the final iteration
/// catches up so the total count ends ≤ `m_target`). Basis columns vanish
/// with their coordinates; no sparse tensors appear.
#[allow(clippy::too_many_arguments)]
pub fn prune_alpha_round(
    qm: &mut QuantModel,
    mom: &mut AlphaMomentum,
    data: &LabeledBatch,
    stream: &mut BatchStream,
    m_target: i64,
    iters: usize,
    k_percent: f64,
    lr: f64,
) -> Result<()> {
    if m_target < 0 {
        return Err(Error::TargetInfeasible { target: m_target });
    }
    let m_target = m_target as usize;
    let m0 = qm.total_alpha_count();
    if m0 <= m_target {
        return Ok(());
    }
    let m_p = ((m0 - m_target) as f64 / iters as f64).round() as usize;
    for t in 1..=iters {
        let current = qm.total_alpha_count();
        if current <= m_target {
            break;
        }
        let batch = data.subset(&stream.next_indices());
        let dense = qm.to_model()?;
        let (_, grads) = loss_and_grads(&dense, &batch)?;
        mom.state.update_moments(&qm.alpha_grads(&grads)?)?;
        let g: Vec<f64> = mom.state.first_moment_hat().iter().map(|m| lr * m).collect();
        let h = mom.state.curvature_diag();
        let alphas = qm.alpha_vector();
        let costs: Vec<f64> = (0..alphas.len()).map(|i| alpha_cost(g[i], h[i], alphas[i])).collect();
        // M_p per iteration, clamped so the final iteration lands exactly
        // on the target
        let remaining = current - m_target;
        let remove = if t == iters { remaining } else { m_p.min(remaining) };
        if remove == 0 {
            continue;
        }
        let victims = select_prune_candidates(&costs, &qm.alpha_counts_per_layer(), k_percent, remove);
        let mut keep = vec![true; current];
        for &v in &victims {
            keep[v] = false;
        }
        qm.retain_alphas(&keep);
        mom.state.retain(&keep);
    }
    Ok(())
}

/// Per-iteration probe data from [`optimize_bases`]: the worst modeled
/// objective after projection across all groups, and the λ-slack the
/// regularized coordinate refresh is entitled to.
#[derive(Clone, Copy, Debug)]
pub struct ProjectionCheck {
    pub max_objective_after: f64,
    pub lambda_slack: f64,
}

struct GroupProjection {
    columns: Vec<Vec<f64>>,
    coords: Vec<f64>,
    objective_after: f64,
    alpha_norm_sq_before: f64,
}

fn project_group(
    group: &QuantGroup,
    indices: &[usize],
    w_hat: &[f64],
    g: &[f64],
    h: &[f64],
    target_base: &[f64],
    lambda: f64,
) -> GroupProjection {
    let i_g = group.bitwidth();
    let projector = RowProjector::new(group.coords());
    let n = group.len();
    let mut columns: Vec<Vec<f64>> = (0..i_g).map(|_| vec![0.0; n]).collect();
    for (j, &wi) in indices.iter().enumerate() {
        let target = target_base[wi] - g[wi] / h[wi];
        let (c, _) = projector.nearest(target);
        for (b, col) in columns.iter_mut().enumerate() {
            col[j] = candidate_sign(c, i_g, b);
        }
    }
    // coordinate refresh: (BᵀHB + λI)·α = Bᵀ(H·target_base − g) on the
    // group's slice
    let mut mat = vec![0.0; i_g * i_g];
    let mut rhs = vec![0.0; i_g];
    for (j, &wi) in indices.iter().enumerate() {
        let hj = h[wi];
        for a in 0..i_g {
            rhs[a] += columns[a][j] * (hj * target_base[wi] - g[wi]);
            for b in a..i_g {
                mat[a * i_g + b] += hj * columns[a][j] * columns[b][j];
            }
        }
    }
    for a in 0..i_g {
        mat[a * i_g + a] += lambda;
        for b in 0..a {
            mat[a * i_g + b] = mat[b * i_g + a];
        }
    }
    let alpha_before = group.coords().to_vec();
    let coords = match solve_spd_small(&mat, &rhs) {
        Ok(a) => a,
        Err(_) => alpha_before.clone(),
    };
    // modeled objective at the new (B, α), relative to the old ŵ
    let mut objective = 0.0;
    for (j, &wi) in indices.iter().enumerate() {
        let new_w: f64 = (0..i_g).map(|a| columns[a][j] * coords[a]).sum();
        let d = new_w - w_hat[wi];
        objective += g[wi] * d + 0.5 * h[wi] * d * d;
    }
    GroupProjection {
        columns,
        coords,
        objective_after: objective,
        alpha_norm_sq_before: alpha_before.iter().map(|a| a * a).sum(),
    }
}

#[allow(clippy::too_many_arguments)]
fn optimize_bases_impl(
    qm: &mut QuantModel,
    wstates: &mut [AmsGradState],
    bias_states: &mut [AmsGradState],
    data: &LabeledBatch,
    stream: &mut BatchStream,
    iters: usize,
    lr: f64,
    lambda: f64,
    mut shadow: Option<&mut MlpModel>,
    mut probe: Option<&mut Vec<ProjectionCheck>>,
) -> Result<()> {
    for _ in 0..iters {
        let batch = data.subset(&stream.next_indices());
        let dense = qm.to_model()?;
        let (_, grads) = loss_and_grads(&dense, &batch)?;
        let mut worst = f64::NEG_INFINITY;
        let mut slack = 0.0f64;
        for (l, layer) in qm.layers.iter_mut().enumerate() {
            wstates[l].update_moments(grads.weights[l].data())?;
            let g: Vec<f64> = wstates[l].first_moment_hat().iter().map(|m| lr * m).collect();
            let h = wstates[l].curvature_diag();
            let w_hat = dense.layers[l].weight.data().to_vec();
            // Plain projection targets reference ŵ; the STE variant
            // references the full-precision shadow instead.
            let target_base: Vec<f64> = match shadow.as_deref_mut() {
                Some(sh) => sh.layers[l].weight.data().to_vec(),
                None => w_hat.clone(),
            };
            let idx = partition_indices(&layer.grouped.shape, layer.grouped.structure)?;
            let jobs: Vec<(usize, &QuantGroup, &Vec<usize>)> = layer
                .grouped
                .groups
                .iter()
                .zip(&idx)
                .enumerate()
                .filter(|(_, (g, _))| g.bitwidth() > 0)
                .map(|(i, (g, gi))| (i, g, gi))
                .collect();
            let results = exec::map(&jobs, |&(_, group, gi)| {
                project_group(group, gi, &w_hat, &g, &h, &target_base, lambda)
            });
            for res in &results {
                worst = worst.max(res.objective_after);
                slack = slack.max(0.5 * lambda * res.alpha_norm_sq_before);
            }
            let updates: Vec<(usize, GroupProjection)> =
                jobs.iter().map(|j| j.0).zip(results).collect();
            for (gidx, res) in updates {
                let group = &mut layer.grouped.groups[gidx];
                for (i, col) in res.columns.iter().enumerate() {
                    group.set_column(i, col)?;
                }
                group.coords_mut().copy_from_slice(&res.coords);
                group.normalize_signs();
            }
            // STE: advance the full-precision shadow by a plain AMSGrad step
            if let Some(sh) = shadow.as_deref_mut() {
                let delta = wstates[l].delta(lr);
                for (w, d) in sh.layers[l].weight.data_mut().iter_mut().zip(&delta) {
                    *w += d;
                }
            }
            // biases stay full precision and take a plain step
            let bdelta = bias_states[l].step(&grads.biases[l], lr)?;
            for (b, d) in layer.bias.iter_mut().zip(&bdelta) {
                *b += d;
            }
            if let Some(sh) = shadow.as_deref_mut() {
                sh.layers[l].bias.clone_from(&layer.bias);
            }
        }
        if let Some(p) = probe.as_deref_mut() {
            p.push(ProjectionCheck { max_objective_after: worst, lambda_slack: slack });
        }
    }
    Ok(())
}

/// Optimize the binary bases (with the coordinate-refresh speedup): each
/// iteration rebuilds every row of every basis as the enumerated minimizer
/// of the modeled objective against targets `ŵ − g/H`, then refreshes α in
/// closed form. Groups run in parallel within an iteration.
pub fn optimize_bases(
    qm: &mut QuantModel,
    data: &LabeledBatch,
    stream: &mut BatchStream,
    iters: usize,
    lr: f64,
    lambda: f64,
    probe: Option<&mut Vec<ProjectionCheck>>,
) -> Result<()> {
    let hyper = AmsGradHyper::default();
    let mut wstates: Vec<AmsGradState> =
        qm.layers.iter().map(|l| AmsGradState::new(l.grouped.weight_count(), hyper)).collect();
    let mut bias_states: Vec<AmsGradState> =
        qm.layers.iter().map(|l| AmsGradState::new(l.bias.len(), hyper)).collect();
    optimize_bases_impl(qm, &mut wstates, &mut bias_states, data, stream, iters, lr, lambda, None, probe)
}

/// AMSGrad steps on the coordinates only (no projection updating), with an
/// L2 pull toward zero; negative coordinates are resolved by flipping
/// their basis column.
pub fn optimize_coords(
    qm: &mut QuantModel,
    mom: &mut AlphaMomentum,
    data: &LabeledBatch,
    stream: &mut BatchStream,
    iters: usize,
    lr: f64,
    l2: f64,
) -> Result<()> {
    let hyper = mom.state.hyper();
    let mut bias_states: Vec<AmsGradState> =
        qm.layers.iter().map(|l| AmsGradState::new(l.bias.len(), hyper)).collect();
    for _ in 0..iters {
        let batch = data.subset(&stream.next_indices());
        let dense = qm.to_model()?;
        let (_, grads) = loss_and_grads(&dense, &batch)?;
        let mut agrads = qm.alpha_grads(&grads)?;
        let alphas = qm.alpha_vector();
        for (ga, a) in agrads.iter_mut().zip(&alphas) {
            *ga += l2 * a;
        }
        let delta = mom.state.step(&agrads, lr)?;
        let new_alphas: Vec<f64> = alphas.iter().zip(&delta).map(|(a, d)| a + d).collect();
        for flat in qm.set_alpha_vector(&new_alphas) {
            mom.state.negate_entry(flat);
        }
        for (l, layer) in qm.layers.iter_mut().enumerate() {
            let bdelta = bias_states[l].step(&grads.biases[l], lr)?;
            for (b, d) in layer.bias.iter_mut().zip(&bdelta) {
                *b += d;
            }
        }
    }
    Ok(())
}

/// State for the STE-with-loss-aware baseline: full-precision shadow
/// weights plus the AMSGrad moments driving both the shadow step and the
/// loss-aware projection.
pub struct SteState {
    pub shadow: MlpModel,
    wstates: Vec<AmsGradState>,
    bias_states: Vec<AmsGradState>,
}

impl SteState {
    pub fn new(shadow: MlpModel) -> Self {
        let hyper = AmsGradHyper::default();
        let wstates = shadow.layers.iter().map(|l| AmsGradState::new(l.weight.len(), hyper)).collect();
        let bias_states = shadow.layers.iter().map(|l| AmsGradState::new(l.bias.len(), hyper)).collect();
        SteState { shadow, wstates, bias_states }
    }
}

/// One STE-with-loss-aware step: forward at ŵ, straight-through gradient
/// onto the shadow weights, plain AMSGrad shadow update, then rows
/// projected against shadow-based targets and coordinates refreshed in
/// closed form.
pub fn ste_loss_aware_step(
    st: &mut SteState,
    qm: &mut QuantModel,
    data: &LabeledBatch,
    stream: &mut BatchStream,
    lr: f64,
    lambda: f64,
) -> Result<()> {
    optimize_bases_impl(
        qm,
        &mut st.wstates,
        &mut st.bias_states,
        data,
        stream,
        1,
        lr,
        lambda,
        Some(&mut st.shadow),
        None,
    )
}

/// Per-round trace of the full pipeline.
#[derive(Clone, Debug)]
pub struct AlqRoundRecord {
    pub round: usize,
    pub avg_bits_per_layer: Vec<f64>,
    pub avg_bits: f64,
    pub loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

/// Pipeline configuration; see [`alq_pipeline`].
#[derive(Clone, Debug)]
pub struct AlqConfig {
    pub structures: Vec<GroupingStructure>,
    pub i_max: usize,
    pub sigma: f64,
    pub schedule: PruneSchedule,
    pub base_iters: usize,
    pub coord_iters: usize,
    pub final_base_iters: usize,
    pub final_coord_iters: usize,
    pub lr: f64,
    pub l2_alpha: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Reset optimizer moments at phase boundaries (pruning vs
    /// optimization); the α moments always survive pruning itself.
    pub reset_moments_between_phases: bool,
}

impl AlqConfig {
    pub fn new(structures: Vec<GroupingStructure>, schedule: PruneSchedule) -> Self {
        AlqConfig {
            structures,
            i_max: 8,
            sigma: 1.0,
            schedule,
            base_iters: 200,
            coord_iters: 100,
            final_base_iters: 300,
            final_coord_iters: 150,
            lr: 1e-3,
            l2_alpha: 1e-6,
            batch_size: 128,
            seed: 1,
            reset_moments_between_phases: true,
        }
    }
}

/// The full pipeline: structured sketching, then alternating rounds of
/// α-domain pruning and base/coordinate optimization, then a final
/// optimization stretch. Deterministic per seed.
pub fn alq_pipeline(
    model: &MlpModel,
    train: &LabeledBatch,
    val: &LabeledBatch,
    test: &LabeledBatch,
    cfg: &AlqConfig,
) -> Result<(QuantModel, Vec<AlqRoundRecord>)> {
    let mut qm = QuantModel::sketch(model, &cfg.structures, cfg.i_max, cfg.sigma)?;
    let mut stream = BatchStream::new(train.len(), cfg.batch_size, cfg.seed);
    let mut trace = Vec::new();
    let record = |qm: &QuantModel, round: usize, trace: &mut Vec<AlqRoundRecord>| -> Result<()> {
        let dense = qm.to_model()?;
        let (loss, val_acc) = loss_and_accuracy(&dense, val)?;
        let (_, test_acc) = loss_and_accuracy(&dense, test)?;
        trace.push(AlqRoundRecord {
            round,
            avg_bits_per_layer: qm.avg_bitwidth_per_layer(),
            avg_bits: qm.avg_bitwidth(),
            loss,
            val_acc,
            test_acc,
        });
        Ok(())
    };
    record(&qm, 0, &mut trace)?;
    let hyper = AmsGradHyper::default();
    let mut mom = AlphaMomentum::new(&qm, hyper);
    for (r, &target) in cfg.schedule.targets.iter().enumerate() {
        prune_alpha_round(
            &mut qm,
            &mut mom,
            train,
            &mut stream,
            target as i64,
            cfg.schedule.iters_per_round,
            cfg.schedule.preselect_percent,
            cfg.lr,
        )?;
        optimize_bases(&mut qm, train, &mut stream, cfg.base_iters, cfg.lr, COORD_REFRESH_LAMBDA, None)?;
        if cfg.reset_moments_between_phases {
            mom = AlphaMomentum::new(&qm, hyper);
        }
        optimize_coords(&mut qm, &mut mom, train, &mut stream, cfg.coord_iters, cfg.lr, cfg.l2_alpha)?;
        record(&qm, r + 1, &mut trace)?;
    }
    optimize_bases(&mut qm, train, &mut stream, cfg.final_base_iters, cfg.lr, COORD_REFRESH_LAMBDA, None)?;
    if cfg.reset_moments_between_phases {
        mom = AlphaMomentum::new(&qm, hyper);
    }
    optimize_coords(&mut qm, &mut mom, train, &mut stream, cfg.final_coord_iters, cfg.lr, cfg.l2_alpha)?;
    record(&qm, cfg.schedule.targets.len() + 1, &mut trace)?;
    Ok((qm, trace))
}

/// Quantized-activation forward pass: hidden activations replaced by their
/// codebook values, the output layer left unquantized.
pub fn forward_act_quant(
    model: &MlpModel,
    inputs: &Tensor,
    quantizers: &[ActQuantizer],
) -> Result<Tensor> {
    let nl = model.layers.len();
    if quantizers.len() + 1 != nl {
        return Err(Error::ShapeMismatch(format!(
            "{} quantizers for {} hidden activations",
            quantizers.len(),
            nl - 1
        )));
    }
    let mut x = inputs.clone();
    for (l, layer) in model.layers.iter().enumerate() {
        let mut y = x.matmul_nt(&layer.weight)?;
        y.add_row_vec(&layer.bias)?;
        x = if l + 1 < nl {
            let relu = y.map(|v| v.max(0.0));
            let (q, _) = quantizers[l].quantize(relu.data());
            Tensor::from_vec(relu.shape(), q)?
        } else {
            y
        };
    }
    Ok(x)
}
