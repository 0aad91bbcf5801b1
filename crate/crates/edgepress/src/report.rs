//! Trace schemas and cross-seed aggregation for the report command.

use crate::dpu::{Arm, SimRow};
use crate::error::{Error, Result};
use crate::io::{format_float, CsvTable};
use std::collections::BTreeMap;

pub const DPU_TRACE_HEADER: [&str; 9] = [
    "round",
    "arm",
    "seed",
    "val_acc",
    "test_acc",
    "deployed",
    "payload_bits",
    "cumulative_bits",
    "acc_diff_vs_full",
];

/// Render simulator rows into the fixed-schema CSV trace.
pub fn dpu_trace_to_csv(rows: &[SimRow]) -> CsvTable {
    let mut t = CsvTable::new(&DPU_TRACE_HEADER);
    for r in rows {
        t.push(vec![
            r.round.to_string(),
            r.arm.to_string(),
            r.seed.to_string(),
            format_float(r.val_acc),
            format_float(r.test_acc),
            if r.deployed { "true".into() } else { "false".into() },
            format_float(r.payload_bits),
            format_float(r.cumulative_bits),
            format_float(r.acc_diff_vs_full),
        ]);
    }
    t
}

/// Parse a trace back (schema-checked).
pub fn dpu_trace_from_csv(table: &CsvTable) -> Result<Vec<SimRow>> {
    if table.header != DPU_TRACE_HEADER {
        return Err(Error::Config(format!(
            "CSV schema mismatch: expected {:?}",
            DPU_TRACE_HEADER
        )));
    }
    let mut out = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        out.push(SimRow {
            round: row[0].parse().map_err(|_| Error::Config(format!("row {i}: bad round")))?,
            arm: Arm::parse(&row[1])?,
            seed: row[2].parse().map_err(|_| Error::Config(format!("row {i}: bad seed")))?,
            val_acc: table.f64_at(i, 3)?,
            test_acc: table.f64_at(i, 4)?,
            deployed: row[5] == "true",
            payload_bits: table.f64_at(i, 6)?,
            cumulative_bits: table.f64_at(i, 7)?,
            acc_diff_vs_full: table.f64_at(i, 8)?,
            combined_fallback: false,
        });
    }
    Ok(out)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One line of the multi-round summary: accuracy difference against full
/// updating (averaged over rounds, then over seeds) and the cumulative
/// communication cost as a ratio of full updating's.
#[derive(Clone, Debug)]
pub struct ArmSummary {
    pub arm: Arm,
    pub mean_acc_diff: f64,
    pub std_acc_diff: f64,
    pub mean_cost_ratio: f64,
    pub std_cost_ratio: f64,
    pub seeds: usize,
}

/// Aggregate a multi-round trace into per-arm summaries.
pub fn summarize_dpu(rows: &[SimRow]) -> Result<Vec<ArmSummary>> {
    let mut by_arm_seed: BTreeMap<(String, u64), Vec<&SimRow>> = BTreeMap::new();
    for r in rows {
        by_arm_seed.entry((r.arm.to_string(), r.seed)).or_default().push(r);
    }
    // cumulative cost of the FULL arm per seed, for the ratio denominator
    let mut full_cost: BTreeMap<u64, f64> = BTreeMap::new();
    for ((arm, seed), rs) in &by_arm_seed {
        if arm == "FULL" {
            let last = rs.iter().max_by_key(|r| r.round).unwrap();
            full_cost.insert(*seed, last.cumulative_bits);
        }
    }
    let mut arms: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((arm, seed), rs) in &by_arm_seed {
        let diffs: Vec<f64> = rs.iter().map(|r| r.acc_diff_vs_full).filter(|d| !d.is_nan()).collect();
        let (mean_diff, _) = mean_std(&diffs);
        let last = rs.iter().max_by_key(|r| r.round).unwrap();
        // cost of an arm relative to full updating; equal costs (including
        // the degenerate all-zero single-round case) give exactly 1
        let ratio = match full_cost.get(seed) {
            Some(&f) if last.cumulative_bits == f => 1.0,
            Some(&f) if f > 0.0 => last.cumulative_bits / f,
            _ => f64::NAN,
        };
        let e = arms.entry(arm.clone()).or_default();
        e.0.push(mean_diff);
        e.1.push(ratio);
    }
    let mut out = Vec::new();
    for (arm, (diffs, ratios)) in arms {
        let (mean_acc_diff, std_acc_diff) = mean_std(&diffs);
        let clean: Vec<f64> = ratios.iter().copied().filter(|r| !r.is_nan()).collect();
        let (mean_cost_ratio, std_cost_ratio) =
            if clean.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&clean) };
        out.push(ArmSummary {
            arm: Arm::parse(&arm)?,
            mean_acc_diff,
            std_acc_diff,
            mean_cost_ratio,
            std_cost_ratio,
            seeds: diffs.len(),
        });
    }
    Ok(out)
}

/// Render the summary in the accuracy-difference / cost-ratio table shape.
pub fn render_dpu_summary(summaries: &[ArmSummary]) -> String {
    let mut s = String::from("arm      acc_diff_mean  acc_diff_std  cost_ratio_mean  cost_ratio_std  seeds\n");
    for a in summaries {
        s.push_str(&format!(
            "{:<8} {:>+13.4} {:>13.4} {:>16.6} {:>15.6} {:>6}\n",
            a.arm.to_string(),
            a.mean_acc_diff,
            a.std_acc_diff,
            a.mean_cost_ratio,
            a.std_cost_ratio,
            a.seeds
        ));
    }
    s
}

/// Generic aggregation for accuracy-style traces (one row per epoch/round
/// per seed): mean/std of every numeric column at the final epoch of each
/// seed column group.
pub fn summarize_final_rows(table: &CsvTable, group_col: &str, seed_col: &str) -> Result<CsvTable> {
    let gcol = table.column(group_col)?;
    let scol = table.column(seed_col)?;
    // final group value per seed
    let mut finals: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (i, row) in table.rows.iter().enumerate() {
        let g: f64 = table.f64_at(i, gcol)?;
        let e = finals.entry(row[scol].clone()).or_insert((f64::NEG_INFINITY, 0));
        if g >= e.0 {
            *e = (g, i);
        }
    }
    let mut header = vec!["column".to_owned(), "mean".to_owned(), "std".to_owned(), "seeds".to_owned()];
    header.shrink_to_fit();
    let mut out = CsvTable { header, rows: Vec::new() };
    for (c, name) in table.header.iter().enumerate() {
        if c == gcol || c == scol {
            continue;
        }
        let mut vals = Vec::new();
        for &(_, i) in finals.values() {
            if let Ok(v) = table.f64_at(i, c) {
                if !v.is_nan() {
                    vals.push(v);
                }
            }
        }
        if vals.is_empty() {
            continue;
        }
        let (m, s) = mean_std(&vals);
        out.push(vec![name.clone(), format_float(m), format_float(s), vals.len().to_string()]);
    }
    Ok(out)
}
