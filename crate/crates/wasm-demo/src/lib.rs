//! Browser bindings: explore time-utility functions, compare scheduling
//! policies on the built-in workloads, and sweep batch sizes, all in-page.
//!
//! Each export returns a JSON string (plotting stays in plain JS on the
//! canvas side). Simulations run the same event loop as the CLI, so numbers
//! match `segserve run` for the same preset and seed.

use segserve::metrics::{category_mean_utility, compute_all_metrics};
use segserve::scheduler::SchedulerPolicy;
use segserve::simcore::{run, SimConfig};
use segserve::tuf::TimeUtilityFunction;
use segserve::workload::{builtin_library, Segmentation, WorkloadSpec};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn preset_workload(name: &str, seed: u64, duration_s: f64) -> Result<WorkloadSpec, String> {
    let (eps, tpe, pool, agents, default_duration, segmentation) = match name {
        "wid1" => (0.25, 8, (1..=8).collect::<Vec<_>>(), 25, 260.0, Segmentation::Skill),
        "wid2" => (0.25, 16, (1..=8).collect(), 42, 300.0, Segmentation::Skill),
        "wid3" => (0.1, 8, (9..=11).collect(), 40, 900.0, Segmentation::Skill),
        "chatbot" => (0.2, 4, vec![12, 13], 12, 120.0, Segmentation::Sentence),
        other => return Err(format!("unknown preset '{other}'")),
    };
    Ok(WorkloadSpec {
        events_per_second: eps,
        max_tasks_per_event: tpe,
        trace_pool: pool,
        agent_count: agents,
        duration_s: if duration_s > 0.0 { duration_s } else { default_duration },
        seed,
        segmentation,
        traces_path: None,
        profiles: None,
    })
}

fn config_for(preset: &str, policy: SchedulerPolicy, seed: u64, duration_s: f64) -> Result<SimConfig, String> {
    let workload = preset_workload(preset, seed, duration_s)?;
    let mut config = SimConfig::new(workload, policy);
    if preset == "chatbot" {
        config.max_segment_tokens = 40;
    }
    Ok(config)
}

fn policy_summary(preset: &str, policy: SchedulerPolicy, seed: u64, duration_s: f64) -> Result<serde_json::Value, String> {
    let config = config_for(preset, policy, seed, duration_s)?;
    let library = builtin_library();
    let log = run(&config, &library).map_err(|e| e.to_string())?;
    let (metrics, dropped) = compute_all_metrics(&log);
    let mean = |f: &dyn Fn(&segserve::RequestMetrics) -> f64| -> f64 {
        if metrics.is_empty() {
            0.0
        } else {
            metrics.iter().map(f).sum::<f64>() / metrics.len() as f64
        }
    };
    Ok(json!({
        "policy": policy.to_string(),
        "completed": metrics.len(),
        "dropped": dropped.len(),
        "mean_utility": mean(&|m| m.realized_utility),
        "mean_response_s": mean(&|m| m.response_time_s),
        "mean_waiting_s": mean(&|m| m.waiting_time_s),
        "total_utility": metrics.iter().map(|m| m.realized_utility).sum::<f64>(),
        "by_category": {
            "drone_normal": category_mean_utility(&metrics, "drone_normal"),
            "drone_urgent": category_mean_utility(&metrics, "drone_urgent"),
            "arm_complex": category_mean_utility(&metrics, "arm_complex"),
            "chatbot": category_mean_utility(&metrics, "chatbot"),
        },
    }))
}

/// Sample a TUF and its suspended-generation variant over `[0, t_max_s]`.
#[wasm_bindgen]
pub fn tuf_curve(beta: f64, alpha: f64, ert_s: f64, t_max_s: f64, points: u32) -> String {
    let tuf = match TimeUtilityFunction::new(beta, alpha, ert_s) {
        Ok(tuf) => tuf,
        Err(e) => return json!({ "error": e.to_string() }).to_string(),
    };
    let n = points.clamp(2, 4096);
    let mut t = Vec::with_capacity(n as usize);
    let mut utility = Vec::with_capacity(n as usize);
    let mut suspended = Vec::with_capacity(n as usize);
    for i in 0..n {
        let x = t_max_s * i as f64 / (n - 1) as f64;
        t.push(x);
        utility.push(tuf.eval(x));
        suspended.push(tuf.eval_suspended(x));
    }
    json!({ "t": t, "utility": utility, "suspended": suspended, "ert_s": ert_s }).to_string()
}

/// Run every scheduling policy on a workload preset with one seed and return
/// per-policy summaries for charting.
#[wasm_bindgen]
pub fn run_comparison(preset: &str, seed: u32, duration_s: f64) -> String {
    let mut rows = Vec::new();
    for policy in SchedulerPolicy::ALL {
        match policy_summary(preset, policy, seed as u64, duration_s) {
            Ok(row) => rows.push(row),
            Err(e) => return json!({ "error": e }).to_string(),
        }
    }
    json!({ "preset": preset, "seed": seed, "policies": rows }).to_string()
}

/// Sweep fixed batch sizes for the utility-density policy and the FCFS
/// batching baseline; returns one utility curve per policy.
#[wasm_bindgen]
pub fn batch_sweep(preset: &str, seed: u32, sizes_csv: &str, duration_s: f64) -> String {
    let sizes: Vec<u32> = sizes_csv
        .split(',')
        .filter_map(|s| s.trim().parse().ok())
        .filter(|s| *s >= 1)
        .collect();
    if sizes.is_empty() {
        return json!({ "error": "no valid batch sizes" }).to_string();
    }
    let library = builtin_library();
    let mut curves = Vec::new();
    for policy in [SchedulerPolicy::SegPud, SchedulerPolicy::FcfsBatch] {
        let mut points = Vec::new();
        for size in &sizes {
            let mut config = match config_for(preset, policy, seed as u64, duration_s) {
                Ok(c) => c,
                Err(e) => return json!({ "error": e }).to_string(),
            };
            config.fixed_batch_cap = Some(*size);
            let log = match run(&config, &library) {
                Ok(log) => log,
                Err(e) => return json!({ "error": e.to_string() }).to_string(),
            };
            let (metrics, dropped) = compute_all_metrics(&log);
            let mean_utility = if metrics.is_empty() {
                0.0
            } else {
                metrics.iter().map(|m| m.realized_utility).sum::<f64>() / metrics.len() as f64
            };
            points.push(json!({
                "batch_size": size,
                "mean_utility": mean_utility,
                "completed": metrics.len(),
                "dropped": dropped.len(),
            }));
        }
        curves.push(json!({ "policy": policy.to_string(), "points": points }));
    }
    json!({ "preset": preset, "seed": seed, "curves": curves }).to_string()
}
