use crate::error::Result;
use crate::model::data::LabeledBatch;
use crate::model::mlp::{loss_and_accuracy, loss_and_grads, Grads, MlpModel};
use crate::numerics::{seeded_rng, AmsGradHyper, AmsGradState};
use rand::Rng;

/// Step-decay learning-rate schedule: `initial · factor^(step/every)`.
#[derive(Clone, Copy, Debug)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule { initial: lr, decay_factor: 1.0, decay_every: usize::MAX }
    }

    pub fn at(&self, step: usize) -> f64 {
        if self.decay_every == usize::MAX || self.decay_every == 0 {
            return self.initial;
        }
        self.initial * self.decay_factor.powi((step / self.decay_every) as i32)
    }
}

/// Seeded epoch-shuffled mini-batch index stream. The sequence of batches
/// is a pure function of (seed, n, batch_size).
pub struct BatchStream {
    n: usize,
    batch_size: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: crate::numerics::Rng64,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        assert!(n > 0 && batch_size > 0);
        let mut s = BatchStream {
            n,
            batch_size: batch_size.min(n),
            order: (0..n).collect(),
            cursor: 0,
            rng: seeded_rng(seed),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        for i in (1..self.n).rev() {
            let j = self.rng.gen_range(0..=i);
            self.order.swap(i, j);
        }
        self.cursor = 0;
    }

    /// Next mini-batch of indices; reshuffles at epoch boundaries. Short
    /// final batches are emitted as-is.
    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.cursor >= self.n {
            self.reshuffle();
        }
        let end = (self.cursor + self.batch_size).min(self.n);
        let idx = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        idx
    }

    /// Batches per epoch.
    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }
}

/// AMSGrad over every parameter tensor of an MLP.
pub struct ModelOptimizer {
    states: Vec<(AmsGradState, AmsGradState)>,
    step: usize,
    pub schedule: LrSchedule,
}

impl ModelOptimizer {
    pub fn new(model: &MlpModel, schedule: LrSchedule, hyper: AmsGradHyper) -> Self {
        let states = model
            .layers
            .iter()
            .map(|l| (AmsGradState::new(l.weight.len(), hyper), AmsGradState::new(l.bias.len(), hyper)))
            .collect();
        ModelOptimizer { states, step: 0, schedule }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// One update step. When `mask` is given, only parameters whose mask
    /// entry is true receive their increment; the rest stay bitwise
    /// untouched. Returns the applied per-layer increments when `record`
    /// is set (weights then biases per layer, in mask order of the model).
    pub fn step_model(
        &mut self,
        model: &mut MlpModel,
        grads: &Grads,
        mask: Option<&[Vec<bool>]>,
        record: bool,
    ) -> Result<Option<Vec<Vec<f64>>>> {
        let lr = self.schedule.at(self.step);
        self.step += 1;
        let mut recorded = if record { Some(Vec::new()) } else { None };
        for (l, layer) in model.layers.iter_mut().enumerate() {
            let (wstate, bstate) = &mut self.states[l];
            let mut wdelta = wstate.step(grads.weights[l].data(), lr)?;
            let mut bdelta = bstate.step(&grads.biases[l], lr)?;
            if let Some(masks) = mask {
                let wm = &masks[2 * l];
                let bm = &masks[2 * l + 1];
                for (d, &keep) in wdelta.iter_mut().zip(wm) {
                    if !keep {
                        *d = 0.0;
                    }
                }
                for (d, &keep) in bdelta.iter_mut().zip(bm) {
                    if !keep {
                        *d = 0.0;
                    }
                }
            }
            for (w, d) in layer.weight.data_mut().iter_mut().zip(&wdelta) {
                if *d != 0.0 {
                    *w += d;
                }
            }
            for (b, d) in layer.bias.iter_mut().zip(&bdelta) {
                if *d != 0.0 {
                    *b += d;
                }
            }
            if let Some(rec) = recorded.as_mut() {
                rec.push(wdelta);
                rec.push(bdelta);
            }
        }
        Ok(recorded)
    }
}

/// Training configuration for the plain (dense, full-updating) loop.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    /// Evaluate every this many steps (0 = only at the end).
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn new(steps: usize, batch_size: usize, lr: f64, seed: u64) -> Self {
        TrainConfig {
            steps,
            batch_size,
            schedule: LrSchedule::constant(lr),
            seed,
            eval_every: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TraceRow {
    pub step: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub eval_acc: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

/// Vanilla dense training: deterministic given the seed. `eval` is the
/// held-out batch used for the trace (pass the training data itself when
/// no holdout is wanted).
pub fn train(
    model: &mut MlpModel,
    data: &LabeledBatch,
    eval: &LabeledBatch,
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    let mut stream = BatchStream::new(data.len(), cfg.batch_size, cfg.seed);
    let mut opt = ModelOptimizer::new(model, cfg.schedule, AmsGradHyper::default());
    let mut trace = TrainTrace::default();
    let mut last_loss = f64::NAN;
    for step in 0..cfg.steps {
        let idx = stream.next_indices();
        let batch = data.subset(&idx);
        let (loss, grads) = loss_and_grads(model, &batch)?;
        last_loss = loss;
        opt.step_model(model, &grads, None, false)?;
        if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 {
            let (el, ea) = loss_and_accuracy(model, eval)?;
            trace.rows.push(TraceRow { step: step + 1, train_loss: loss, eval_loss: el, eval_acc: ea });
        }
    }
    let (el, ea) = loss_and_accuracy(model, eval)?;
    trace.rows.push(TraceRow { step: cfg.steps, train_loss: last_loss, eval_loss: el, eval_acc: ea });
    Ok(trace)
}
