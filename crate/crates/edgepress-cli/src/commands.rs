use crate::data;
use edgepress::alq::{alq_pipeline, AlqConfig, PruneSchedule, QuantModel};
use edgepress::dpu::{multi_round_sim, Arm, SimConfig};
use edgepress::dress::{
    build_dress_csr, csr_cost, dress_train, loss_weights, DressConfig, SparsityLadder,
};
use edgepress::error::{Error, Result};
use edgepress::io::{
    format_float, load_dense_model, load_mbn1, save_dcsr1, save_dense_model, save_mbn1, CsvTable,
    ExperimentConfig,
};
use edgepress::mbq::{
    avg_bitwidth, error_bound, partition, storage_ratio, GroupingStructure,
};
use edgepress::model::{loss_and_accuracy, train, MlpModel, TrainConfig};
use edgepress::report::{
    dpu_trace_from_csv, dpu_trace_to_csv, render_dpu_summary, summarize_dpu, summarize_final_rows,
    DPU_TRACE_HEADER,
};
use std::fs;
use std::path::{Path, PathBuf};

fn prepare_out_dir(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("config_resolved.txt"), cfg.render())?;
    Ok(())
}

fn parse_structure(s: &str) -> Result<GroupingStructure> {
    let s = s.trim();
    if let Some(rest) = s.strip_prefix("subchannelwise(").and_then(|r| r.strip_suffix(')')) {
        let n: usize = rest.parse().map_err(|_| Error::Config(format!("bad structure '{s}'")))?;
        return Ok(GroupingStructure::Subchannelwise(n));
    }
    if let Some(rest) = s.strip_prefix("rowchunk(").and_then(|r| r.strip_suffix(')')) {
        let n: usize = rest.parse().map_err(|_| Error::Config(format!("bad structure '{s}'")))?;
        return Ok(GroupingStructure::RowChunk(n));
    }
    match s {
        "channelwise" => Ok(GroupingStructure::Channelwise),
        "kernelwise" => Ok(GroupingStructure::Kernelwise),
        "pointwise" => Ok(GroupingStructure::Pointwise),
        other => Err(Error::Config(format!("unknown structure '{other}'"))),
    }
}

fn parse_structures(cfg: &ExperimentConfig, layers: usize) -> Result<Vec<GroupingStructure>> {
    let raw = cfg.str_or("structure", "channelwise");
    let parts: Vec<&str> = raw.split(';').collect();
    let parsed: Result<Vec<GroupingStructure>> = parts.iter().map(|p| parse_structure(p)).collect();
    let parsed = parsed?;
    if parsed.len() == 1 {
        Ok(vec![parsed[0]; layers])
    } else if parsed.len() == layers {
        Ok(parsed)
    } else {
        Err(Error::Config(format!(
            "{} structures for {layers} layers",
            parsed.len()
        )))
    }
}

/// Per-layer sketch report: bitwidths, compression, residuals and the
/// decay-bound check.
fn sketch_report(qm: &QuantModel, dense: &MlpModel) -> Result<String> {
    let mut out = String::from(
        "layer  structure        n     groups  avg_bits  storage_ratio  max_resid_sq  max_ortho  bound_violations\n",
    );
    for (l, layer) in qm.layers.iter().enumerate() {
        let g = &layer.grouped;
        let n = g.structure.group_size(&g.shape)?;
        let views = partition(&dense.layers[l].weight, g.structure)?;
        let mut max_resid = 0.0f64;
        let mut max_ortho = 0.0f64;
        let mut violations = 0usize;
        for (group, w) in g.groups.iter().zip(&views) {
            let rec = group.reconstruct();
            let eps: Vec<f64> = w.iter().zip(&rec).map(|(a, b)| a - b).collect();
            let resid: f64 = eps.iter().map(|v| v * v).sum();
            max_resid = max_resid.max(resid);
            for i in 0..group.bitwidth() {
                let col = group.basis_column(i);
                let d: f64 = col.iter().zip(&eps).map(|(a, b)| a * b).sum();
                max_ortho = max_ortho.max(d.abs());
            }
            if resid > error_bound(w, group.bitwidth(), 0.0) + 1e-9 {
                violations += 1;
            }
        }
        let bits = avg_bitwidth(g);
        let ratio = if bits > 0.0 { storage_ratio(g.weight_count(), n, bits) } else { f64::INFINITY };
        out.push_str(&format!(
            "{l:<6} {:<16} {n:<5} {:<7} {bits:<9.3} {ratio:<14.3} {:<13.3e} {:<10.3e} {violations}\n",
            g.structure.to_string(),
            g.groups.len(),
            max_resid,
            max_ortho,
        ));
    }
    Ok(out)
}

pub fn cmd_sketch(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    cfg.ensure_known_keys(&["model", "structure", "i_max", "sigma", "out", "seed"])?;
    prepare_out_dir(cfg, out_dir)?;
    let model_path = PathBuf::from(cfg.require_str("model")?);
    let dense = load_dense_model(&fs::read(&model_path)?)?;
    let structures = parse_structures(cfg, dense.layers.len())?;
    let i_max = cfg.usize_or("i_max", 8)?;
    let sigma = cfg.f64_or("sigma", 1.0)?;
    let qm = QuantModel::sketch(&dense, &structures, i_max, sigma)?;
    let out_path = out_dir.join(cfg.str_or("out", "quantized.mbn1"));
    fs::write(&out_path, save_mbn1(&qm)?)?;
    let report = sketch_report(&qm, &dense)?;
    fs::write(out_dir.join("sketch_report.txt"), &report)?;
    println!("{report}");
    println!("wrote {}", out_path.display());
    Ok(())
}

pub fn cmd_alq(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let mut allowed = vec![
        "dims",
        "structure",
        "i_max",
        "sigma",
        "baseline_epochs",
        "batch_size",
        "lr",
        "target_bits",
        "prune_ratio",
        "prune_iters",
        "k_percent",
        "base_iters",
        "coord_iters",
        "final_base_iters",
        "final_coord_iters",
        "l2_alpha",
        "resume_mbn",
    ];
    allowed.extend_from_slice(&data::DATA_KEYS);
    cfg.ensure_known_keys(&allowed)?;
    prepare_out_dir(cfg, out_dir)?;
    let ds = data::resolve(cfg)?;
    let dims = data::model_dims(cfg, &ds)?;
    let seed = cfg.u64_or("seed", 1)?;
    let batch = cfg.usize_or("batch_size", 128)?;
    let lr = cfg.f64_or("lr", 1e-3)?;

    // stage 0: dense baseline (full updating)
    let mut dense = MlpModel::new(&dims, seed);
    let epochs = cfg.usize_or("baseline_epochs", 10)?;
    let steps = epochs * ds.train.len().div_ceil(batch);
    let tc = TrainConfig { eval_every: 0, ..TrainConfig::new(steps, batch, lr, seed ^ 0x5eed) };
    train(&mut dense, &ds.train, &ds.val, &tc)?;
    fs::write(out_dir.join("baseline.mlp1"), save_dense_model(&dense))?;
    let (_, baseline_acc) = loss_and_accuracy(&dense, &ds.test)?;
    println!("dense baseline test accuracy: {baseline_acc:.4}");

    let structures = parse_structures(cfg, dense.layers.len())?;
    let i_max = cfg.usize_or("i_max", 8)?;
    let sigma = cfg.f64_or("sigma", 1.0)?;
    let start = match cfg.get_str("resume_mbn") {
        Some(path) => load_mbn1(&fs::read(path)?)?,
        None => QuantModel::sketch(&dense, &structures, i_max, sigma)?,
    };
    let m0 = start.total_alpha_count();
    let groups = start.group_count();
    let schedule = PruneSchedule {
        iters_per_round: cfg.usize_or("prune_iters", 150)?,
        preselect_percent: cfg.f64_or("k_percent", 1.0)?,
        ..PruneSchedule::to_avg_bitwidth(
            m0,
            groups,
            cfg.f64_or("target_bits", 2.0)?,
            cfg.f64_or("prune_ratio", 0.3)?,
            cfg.usize_or("prune_iters", 150)?,
            cfg.f64_or("k_percent", 1.0)?,
        )
    };
    let mut acfg = AlqConfig::new(structures, schedule);
    acfg.i_max = i_max;
    acfg.sigma = sigma;
    acfg.batch_size = batch;
    acfg.lr = lr;
    acfg.seed = seed ^ 0xa19;
    acfg.base_iters = cfg.usize_or("base_iters", 200)?;
    acfg.coord_iters = cfg.usize_or("coord_iters", 100)?;
    acfg.final_base_iters = cfg.usize_or("final_base_iters", 300)?;
    acfg.final_coord_iters = cfg.usize_or("final_coord_iters", 150)?;
    acfg.l2_alpha = cfg.f64_or("l2_alpha", 1e-6)?;
    let (qm, trace) = alq_pipeline(&dense, &ds.train, &ds.val, &ds.test, &acfg)?;
    fs::write(out_dir.join("quantized.mbn1"), save_mbn1(&qm)?)?;

    let layer_count = qm.layers.len();
    let mut header: Vec<String> = vec!["round".into()];
    header.extend((0..layer_count).map(|l| format!("avg_bits_l{l}")));
    header.extend(["avg_bits", "loss", "val_acc", "test_acc"].map(String::from));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = CsvTable::new(&header_refs);
    for r in &trace {
        let mut row = vec![r.round.to_string()];
        row.extend(r.avg_bits_per_layer.iter().map(|b| format_float(*b)));
        row.push(format_float(r.avg_bits));
        row.push(format_float(r.loss));
        row.push(format_float(r.val_acc));
        row.push(format_float(r.test_acc));
        table.push(row);
    }
    fs::write(out_dir.join("alq_trace.csv"), table.render())?;

    let last = trace.last().unwrap();
    for (l, layer) in qm.layers.iter().enumerate() {
        let g = &layer.grouped;
        let bits = avg_bitwidth(g);
        let n = g.structure.group_size(&g.shape)?;
        let ratio = if bits > 0.0 { storage_ratio(g.weight_count(), n, bits) } else { f64::INFINITY };
        println!("layer {l}: avg_bits {bits:.3}, storage_ratio {ratio:.2}");
    }
    println!(
        "quantized avg_bits {:.3}, test accuracy {:.4} (baseline {:.4})",
        last.avg_bits, last.test_acc, baseline_acc
    );
    Ok(())
}

pub fn cmd_dress(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let mut allowed = vec![
        "dims",
        "levels",
        "gamma",
        "pretrain_epochs",
        "epochs",
        "batch_size",
        "lr",
        "row_sizes",
    ];
    allowed.extend_from_slice(&data::DATA_KEYS);
    cfg.ensure_known_keys(&allowed)?;
    prepare_out_dir(cfg, out_dir)?;
    let ds = data::resolve(cfg)?;
    let dims = data::model_dims(cfg, &ds)?;
    let seed = cfg.u64_or("seed", 1)?;
    let batch = cfg.usize_or("batch_size", 128)?;
    let lr = cfg.f64_or("lr", 1e-3)?;
    let levels = cfg.f64_list_or("levels", &[0.5, 0.75, 0.875])?;
    let gamma = cfg.f64_or("gamma", 0.5)?;

    // stage 1: dense pre-training
    let mut model = MlpModel::new(&dims, seed);
    let epochs = cfg.usize_or("pretrain_epochs", 4)?;
    let steps = epochs * ds.train.len().div_ceil(batch);
    let tc = TrainConfig::new(steps, batch, lr, seed ^ 0xd1);
    train(&mut model, &ds.train, &ds.val, &tc)?;

    // stage 2: joint subnet training
    let row_sizes = match cfg.get_str("row_sizes") {
        Some(_) => Some(cfg.usize_list_or("row_sizes", &[])?),
        None => None,
    };
    let dcfg = DressConfig {
        ladder: SparsityLadder::new(levels.clone(), gamma),
        epochs: cfg.usize_or("epochs", 4)?,
        batch_size: batch,
        lr,
        seed: seed ^ 0xd2,
        row_sizes,
    };
    let res = dress_train(&model, &ds.train, &ds.val, &dcfg)?;
    fs::write(out_dir.join("backbone.mlp1"), save_dense_model(&res.backbone))?;

    // export: per-layer prefix CSR built from the per-layer allocations
    let mut csr_layers = Vec::new();
    for (l, layer) in res.backbone.layers.iter().enumerate() {
        let level_sparsities: Vec<f64> = res.allocations.iter().map(|a| a[l]).collect();
        let masks: Vec<Vec<bool>> = res.masks.iter().map(|m| m[l].clone()).collect();
        csr_layers.push(build_dress_csr(
            layer.weight.data(),
            res.row_sizes[l],
            &level_sparsities,
            &masks,
        )?);
    }
    fs::write(out_dir.join("subnets.dcsr1"), save_dcsr1(&csr_layers)?)?;

    let pi = loss_weights(gamma, &levels);
    println!("loss weights: {:?}", pi.iter().map(|p| (p * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    let mut total_shared = 0usize;
    let mut total_independent = 0usize;
    for (l, csr) in csr_layers.iter().enumerate() {
        let cost = csr_cost(csr, 8)?;
        total_shared += cost.index_entries;
        total_independent += cost.independent_index_entries;
        println!(
            "layer {l}: rows {} x {}, shared index entries {} vs independent {}",
            csr.rows, csr.row_size, cost.index_entries, cost.independent_index_entries
        );
    }
    println!("total index entries: shared {total_shared} vs independent {total_independent}");

    let k = levels.len();
    let mut header: Vec<String> = vec!["epoch".into(), "seed".into()];
    header.extend((0..k).map(|i| format!("val_acc_s{i}")));
    header.push("avg_val_acc".into());
    header.push("reallocated".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = CsvTable::new(&header_refs);
    for r in &res.trace {
        let mut row = vec![r.epoch.to_string(), seed.to_string()];
        row.extend(r.per_subnet_val_acc.iter().map(|a| format_float(*a)));
        row.push(format_float(r.avg_val_acc));
        row.push(if r.reallocated { "true".into() } else { "false".into() });
        table.push(row);
    }
    fs::write(out_dir.join("dress_trace.csv"), table.render())?;

    // final per-subnet test accuracy
    for (i, m) in res.masks.iter().enumerate() {
        let mut sub = res.backbone.clone();
        for (l, layer) in sub.layers.iter_mut().enumerate() {
            for (w, &keep) in layer.weight.data_mut().iter_mut().zip(&m[l]) {
                if !keep {
                    *w = 0.0;
                }
            }
        }
        let (_, acc) = loss_and_accuracy(&sub, &ds.test)?;
        println!("subnet s={:.3}: test accuracy {acc:.4}", levels[i]);
    }
    Ok(())
}

pub fn cmd_dpu(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let mut allowed = vec![
        "dims", "d1", "delta", "rounds", "k", "arms", "seeds", "epochs", "batch_size", "lr",
        "value_bits",
    ];
    allowed.extend_from_slice(&data::DATA_KEYS);
    cfg.ensure_known_keys(&allowed)?;
    prepare_out_dir(cfg, out_dir)?;
    let ds = data::resolve(cfg)?;
    let dims = data::model_dims(cfg, &ds)?;
    let arms: Vec<Arm> = cfg
        .str_or("arms", "DPU,GCPU,RPU,PRUNE,FULL")
        .split(',')
        .map(Arm::parse)
        .collect::<Result<_>>()?;
    let seeds: Vec<u64> = cfg
        .str_or("seeds", &cfg.u64_or("seed", 1)?.to_string())
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("bad seed '{s}'"))))
        .collect::<Result<_>>()?;
    let scfg = SimConfig {
        dims,
        d1: cfg.usize_or("d1", 1000)?,
        delta: cfg.usize_or("delta", 1000)?,
        rounds: cfg.usize_or("rounds", 10)?,
        k: cfg.f64_or("k", 0.1)?,
        arms,
        seeds,
        epochs_per_phase: cfg.usize_or("epochs", 3)?,
        batch_size: cfg.usize_or("batch_size", 128)?,
        lr: cfg.f64_or("lr", 1e-3)?,
        value_bits: cfg.u64_or("value_bits", 32)? as u8,
        val_fraction: cfg.f64_or("val_fraction", 0.1)?,
    };
    // the validation split is taken inside the simulator per seed; hand it
    // the full training pool
    let pool = ds.train.concat(&ds.val)?;
    let out = multi_round_sim(&pool, &ds.test, &scfg)?;
    let table = dpu_trace_to_csv(&out.rows);
    fs::write(out_dir.join("dpu_trace.csv"), table.render())?;
    let payload_dir = out_dir.join("payloads");
    fs::create_dir_all(&payload_dir)?;
    for p in &out.payloads {
        let name = format!("{}_s{}_r{}.dpu1", p.arm.to_string().to_lowercase(), p.seed, p.round);
        fs::write(payload_dir.join(name), &p.bytes)?;
    }
    for row in out.rows.iter().filter(|r| r.combined_fallback) {
        println!(
            "note: round {} seed {} fell back to global-only contributions",
            row.round, row.seed
        );
    }
    let summary = summarize_dpu(&out.rows)?;
    let rendered = render_dpu_summary(&summary);
    fs::write(out_dir.join("dpu_summary.txt"), &rendered)?;
    println!("{rendered}");
    Ok(())
}

pub fn cmd_report(_cfg: &ExperimentConfig, files: &[PathBuf], out_dir: &Path) -> Result<()> {
    if files.is_empty() {
        return Err(Error::Config("report needs at least one trace file".into()));
    }
    fs::create_dir_all(out_dir)?;
    for file in files {
        let text = fs::read_to_string(file)?;
        let table = CsvTable::parse(&text)?;
        println!("== {}", file.display());
        if table.header == DPU_TRACE_HEADER {
            let rows = dpu_trace_from_csv(&table)?;
            let rendered = render_dpu_summary(&summarize_dpu(&rows)?);
            fs::write(out_dir.join("report_summary.txt"), &rendered)?;
            println!("{rendered}");
        } else {
            let group = table.header.first().cloned().unwrap_or_default();
            let seed_col = if table.header.iter().any(|h| h == "seed") { "seed" } else { &group };
            let summary = summarize_final_rows(&table, &group, seed_col)?;
            let rendered = summary.render();
            fs::write(out_dir.join("report_summary.csv"), &rendered)?;
            println!("{rendered}");
        }
    }
    Ok(())
}
