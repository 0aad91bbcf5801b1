//! Fast acceptance-style checks runnable on any machine in well under a
//! minute. Exit code 4 signals a failed check.

use edgepress::alq::{alpha_cost, enumerate_candidates, project_row};
use edgepress::bitexec::{multibit_matvec, pm1_dot, PackedVector, QuantizedActivation};
use edgepress::dpu::{
    combine, comm_cost, decode_payload, encode_payload, shannon_bits, should_reinit, top_k_mask,
    PayloadHeader, UpdatePayload,
};
use edgepress::dress::loss_weights;
use edgepress::error::Result;
use edgepress::mbq::{error_bound, sketch_group, GroupedLayer, GroupingStructure};
use edgepress::model::{loss_and_grads, LabeledBatch, MlpModel};
use edgepress::numerics::{finite_diff_grad, numerical_rank, seeded_rng, Tensor};
use rand::Rng;

type Check = (&'static str, fn() -> std::result::Result<(), String>);

fn sketch_bounds_and_rank() -> std::result::Result<(), String> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = seeded_rng(1001);
    let mut checked = 0;
    for &n in &[8usize, 16, 32] {
        for _ in 0..334 {
            let w: Vec<f64> = (0..n).map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            }).collect();
            let g = sketch_group(&w, 8, 0.0);
            let rec = g.reconstruct();
            let eps: Vec<f64> = w.iter().zip(&rec).map(|(a, b)| a - b).collect();
            let resid: f64 = eps.iter().map(|v| v * v).sum();
            let bound = error_bound(&w, g.bitwidth(), 0.0);
            if resid > bound + 1e-12 {
                return Err(format!("residual {resid} exceeds bound {bound} at n={n}"));
            }
            for i in 0..g.bitwidth() {
                let col = g.basis_column(i);
                let d: f64 = col.iter().zip(&eps).map(|(a, b)| a * b).sum();
                if d.abs() > 1e-9 {
                    return Err(format!("|Bᵀε| = {} at n={n}", d.abs()));
                }
            }
            if numerical_rank(&g.basis_matrix(), 1e-9) != g.bitwidth() {
                return Err(format!("rank deficit at n={n}"));
            }
            checked += 1;
        }
    }
    if checked < 1000 {
        return Err(format!("only {checked} groups checked"));
    }
    Ok(())
}

fn bitwise_kernels() -> std::result::Result<(), String> {
    let mut rng = seeded_rng(1002);
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=130);
        let sa: Vec<f64> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let sb: Vec<f64> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let a = PackedVector::from_signs(&sa).unwrap();
        let b = PackedVector::from_signs(&sb).unwrap();
        let naive: f64 = sa.iter().zip(&sb).map(|(x, y)| x * y).sum();
        if pm1_dot(&a, &b).map_err(|e| e.to_string())? != naive as i64 {
            return Err(format!("pm1_dot mismatch at n={n}"));
        }
    }
    for trial in 0..20 {
        let (rows, cols) = (8, 64);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = Tensor::from_vec(&[rows, cols], data).unwrap();
        let layer = GroupedLayer::sketch(&w, GroupingStructure::Channelwise, 3, 0.0)
            .map_err(|e| e.to_string())?;
        let gammas: Vec<f64> = (0..2).map(|_| rng.gen_range(0.05..1.0)).collect();
        let columns: Vec<PackedVector> = (0..2)
            .map(|_| {
                let s: Vec<f64> =
                    (0..cols).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
                PackedVector::from_signs(&s).unwrap()
            })
            .collect();
        let act = QuantizedActivation::new(rng.gen_range(-0.5..0.5), gammas, columns).unwrap();
        let x_hat = act.reconstruct();
        let dense = layer.reconstruct().unwrap().matvec(&x_hat).unwrap();
        let bitwise = multibit_matvec(&layer, &act).map_err(|e| e.to_string())?;
        for (d, b) in dense.iter().zip(&bitwise) {
            if (d - b).abs() / d.abs().max(1e-9) > 1e-6 {
                return Err(format!("matvec mismatch in trial {trial}: {d} vs {b}"));
            }
        }
    }
    Ok(())
}

fn projection_optimality() -> std::result::Result<(), String> {
    let mut rng = seeded_rng(1003);
    for _ in 0..10_000 {
        let i_g = rng.gen_range(1..=4);
        let alpha: Vec<f64> = (0..i_g).map(|_| rng.gen_range(0.01..1.0)).collect();
        let target = rng.gen_range(-2.5..2.5);
        let (_, v) = project_row(&alpha, target);
        let vals = enumerate_candidates(&alpha);
        let best = vals.iter().map(|c| (c - target).abs()).fold(f64::INFINITY, f64::min);
        if (v - target).abs() != best {
            return Err(format!("projection distance {} vs enumerated {best}", (v - target).abs()));
        }
    }
    Ok(())
}

fn gradient_oracle() -> std::result::Result<(), String> {
    let model = MlpModel::new(&[8, 6, 4], 1004);
    let mut rng = seeded_rng(1005);
    let data: Vec<f64> = (0..5 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..5).map(|_| rng.gen_range(0..4)).collect();
    let batch = LabeledBatch::new(Tensor::from_vec(&[5, 8], data).unwrap(), labels).unwrap();
    let (_, grads) = loss_and_grads(&model, &batch).map_err(|e| e.to_string())?;
    let flat = model.flatten_params();
    let theta = Tensor::from_vec(&[flat.len()], flat).unwrap();
    let fd = finite_diff_grad(
        |t| {
            let mut m = model.clone();
            m.unflatten_params(t.data()).unwrap();
            loss_and_grads(&m, &batch).unwrap().0
        },
        &theta,
        1e-5,
    );
    let mut analytic = Vec::new();
    for l in 0..model.layers.len() {
        analytic.extend_from_slice(grads.weights[l].data());
        analytic.extend_from_slice(&grads.biases[l]);
    }
    let mut max_rel = 0.0f64;
    for (a, f) in analytic.iter().zip(fd.data()) {
        max_rel = max_rel.max((a - f).abs() / f.abs().max(1e-6));
    }
    if max_rel > 1e-4 {
        return Err(format!("max relative gradient error {max_rel}"));
    }
    Ok(())
}

fn dress_loss_weights() -> std::result::Result<(), String> {
    let ladder = [0.8, 0.9, 0.95, 0.98, 0.99];
    for (gamma, want) in [
        (0.5, [0.36, 0.26, 0.18, 0.12, 0.08]),
        (-1.0, [0.03, 0.05, 0.11, 0.27, 0.54]),
    ] {
        let pi = loss_weights(gamma, &ladder);
        for (p, w) in pi.iter().zip(&want) {
            if (p - w).abs() > 0.005 {
                return Err(format!("pi {p} vs published {w} at gamma {gamma}"));
            }
        }
    }
    Ok(())
}

fn codec_and_entropy() -> std::result::Result<(), String> {
    if shannon_bits(0.5) != 1.0 {
        return Err("S_x(0.5) != 1".into());
    }
    if (shannon_bits(0.01) - 0.0808).abs() > 5e-4 {
        return Err(format!("S_x(0.01) = {}", shannon_bits(0.01)));
    }
    let mut rng = seeded_rng(1006);
    for _ in 0..1000 {
        let n = rng.gen_range(1..2000);
        let density: f64 = rng.gen_range(0.0..0.5);
        let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(density)).collect();
        let count = mask.iter().filter(|&&b| b).count();
        let values: Vec<f64> = (0..count).map(|_| rng.gen_range(-1.0f32..1.0) as f64).collect();
        let p = UpdatePayload {
            header: PayloadHeader { round: 1, k: density as f32, value_bits: 32, reinit_seed: None },
            mask,
            values,
        };
        let bytes = encode_payload(&p).map_err(|e| e.to_string())?;
        let decoded = decode_payload(&bytes).map_err(|e| e.to_string())?;
        if decoded != p {
            return Err("payload roundtrip mismatch".into());
        }
    }
    let cost = comm_cost(0.01, 1_000_000, 32);
    let expect = 320_000.0 + shannon_bits(0.01) * 1e6;
    if (cost - expect).abs() > 1e-9 {
        return Err(format!("comm_cost {cost} vs formula {expect}"));
    }
    Ok(())
}

fn exhaustive_mask_oracle() -> std::result::Result<(), String> {
    // 20-weight diagonal quadratic: both selection rules must match the
    // exhaustive minimum over equal-size subsets
    let mut rng = seeded_rng(1007);
    let dim = 20usize;
    let curv: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.5..1.5)).collect();
    let target: Vec<f64> = (0..dim).map(|i| (i as f64 + 1.0) * 0.1).collect();
    // pruning side: costs from the diagonal model are additive, so the
    // best subset of size m is the m smallest costs
    let alphas: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.05..1.0)).collect();
    let g: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.01..0.01)).collect();
    let costs: Vec<f64> =
        (0..dim).map(|i| alpha_cost(g[i], curv[i], alphas[i])).collect();
    for m in 1..=3usize {
        let mut idx: Vec<usize> = (0..dim).collect();
        idx.sort_by(|&a, &b| costs[a].partial_cmp(&costs[b]).unwrap().then(a.cmp(&b)));
        let chosen_sum: f64 = idx[..m].iter().map(|&i| costs[i]).sum();
        let best = best_subset_sum(&costs, m);
        if (chosen_sum - best).abs() > 1e-12 {
            return Err(format!("prune subset {chosen_sum} vs exhaustive {best} at m={m}"));
        }
    }
    // DPU side: gradient-descend the quadratic, combine contributions,
    // compare the count-2 mask's post-rewind loss to the exhaustive best
    let loss = |w: &[f64]| -> f64 {
        w.iter().zip(&curv).zip(&target).map(|((wi, c), t)| 0.5 * c * (wi - t) * (wi - t)).sum()
    };
    let mut w = vec![0.0; dim];
    let mut c_local = vec![0.0; dim];
    for _ in 0..2000 {
        let grad: Vec<f64> = w.iter().zip(&curv).zip(&target).map(|((wi, c), t)| c * (wi - t)).collect();
        let step: Vec<f64> = grad.iter().map(|g| -0.01 * g).collect();
        for i in 0..dim {
            c_local[i] -= grad[i] * step[i];
            w[i] += step[i];
        }
    }
    let delta: Vec<f64> = w.clone();
    let c_global: Vec<f64> = delta.iter().map(|d| d * d).collect();
    let (c, _) = combine(&c_global, &c_local);
    let mask = top_k_mask(&c, 2);
    let rewound = |m: &[bool]| -> Vec<f64> {
        (0..dim).map(|i| if m[i] { w[i] } else { 0.0 }).collect()
    };
    let chosen_loss = loss(&rewound(&mask));
    let mut best = f64::INFINITY;
    for a in 0..dim {
        for b in a + 1..dim {
            let mut m = vec![false; dim];
            m[a] = true;
            m[b] = true;
            best = best.min(loss(&rewound(&m)));
        }
    }
    if chosen_loss > best + 1e-9 {
        return Err(format!("combined mask loss {chosen_loss} vs exhaustive best {best}"));
    }
    Ok(())
}

fn reinit_policy() -> std::result::Result<(), String> {
    if !should_reinit(2001, 1000) || should_reinit(2000, 1000) || should_reinit(999, 1000) {
        return Err("truth table violated".into());
    }
    let mut rng = seeded_rng(1008);
    for _ in 0..1000 {
        let last = rng.gen_range(1..10_000usize);
        let a = rng.gen_range(1..30_000usize);
        let b = a + rng.gen_range(0..5_000usize);
        if should_reinit(a, last) && !should_reinit(b, last) {
            return Err("not monotone".into());
        }
    }
    Ok(())
}

pub fn run() -> Result<bool> {
    let checks: Vec<Check> = vec![
        ("sketch-bounds-and-rank", sketch_bounds_and_rank),
        ("bitwise-kernels", bitwise_kernels),
        ("projection-optimality", projection_optimality),
        ("gradient-oracle", gradient_oracle),
        ("dress-loss-weights", dress_loss_weights),
        ("codec-and-entropy", codec_and_entropy),
        ("exhaustive-mask-oracle", exhaustive_mask_oracle),
        ("reinit-policy", reinit_policy),
    ];
    let mut all_ok = true;
    for (name, check) in checks {
        let start = std::time::Instant::now();
        match check() {
            Ok(()) => println!("SELFTEST {name:<26} ok ({:.2}s)", start.elapsed().as_secs_f64()),
            Err(msg) => {
                all_ok = false;
                println!("SELFTEST {name:<26} FAIL: {msg}");
            }
        }
    }
    Ok(all_ok)
}

fn best_subset_sum(costs: &[f64], m: usize) -> f64 {
    fn rec(costs: &[f64], start: usize, m: usize, acc: f64, best: &mut f64) {
        if m == 0 {
            *best = best.min(acc);
            return;
        }
        for i in start..costs.len() {
            rec(costs, i + 1, m - 1, acc + costs[i], best);
        }
    }
    let mut best = f64::INFINITY;
    rec(costs, 0, m, 0.0, &mut best);
    best
}
