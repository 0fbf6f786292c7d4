//! Event-log auditor: replays a log against the simulator's invariants.
//!
//! Checks clock monotonicity, GPU memory conservation (reconstructed from the
//! per-event residency deltas), the completion-time decomposition, text
//! fidelity of dispatched segments against the scripted plans, alternating
//! suspend/resume per request, agent serialization, and arrival-order
//! admission for the FCFS policies.

use crate::scheduler::SchedulerPolicy;
use crate::simcore::{EventLog, SimEventKind};
use crate::workload::{ScriptedPlan, TraceLibrary};
use std::collections::BTreeMap;

/// What the auditor needs to know about the run it checks.
pub struct AuditContext<'a> {
    pub library: &'a TraceLibrary,
    pub policy: SchedulerPolicy,
    pub gpu_memory_mb: f64,
    pub kv_mb_per_request: f64,
    pub network_latency_s: f64,
}

/// Audit outcome; `violations` is empty for a clean log.
#[derive(Debug, Default)]
pub struct AuditReport {
    pub events: usize,
    pub requests: usize,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

const EPS: f64 = 1e-6;

/// Run every invariant check over `log`.
pub fn audit_log(log: &EventLog, ctx: &AuditContext<'_>) -> AuditReport {
    let mut report = AuditReport {
        events: log.events.len(),
        ..Default::default()
    };
    check_monotone(log, &mut report);
    check_memory(log, ctx, &mut report);
    check_decomposition(log, &mut report);
    check_text_fidelity(log, ctx, &mut report);
    check_suspend_resume_alternation(log, &mut report);
    check_agent_serialization(log, ctx, &mut report);
    if matches!(
        ctx.policy,
        SchedulerPolicy::SegFcfs | SchedulerPolicy::FcfsBatch | SchedulerPolicy::StreamFcfs
    ) {
        check_fcfs_admission_order(log, &mut report);
    }
    report.requests = log.iter_kind(SimEventKind::Arrival).count();
    report
}

fn check_monotone(log: &EventLog, report: &mut AuditReport) {
    for (i, pair) in log.events.windows(2).enumerate() {
        if pair[1].time_s < pair[0].time_s - 1e-12 {
            report.violations.push(format!(
                "clock moved backwards at event {}: {} -> {}",
                i + 1,
                pair[0].time_s,
                pair[1].time_s
            ));
        }
    }
}

/// Reconstruct GPU residency from event deltas and compare against the
/// logged free-memory snapshots.
fn check_memory(log: &EventLog, ctx: &AuditContext<'_>, report: &mut AuditReport) {
    let mut resident: BTreeMap<u64, f64> = BTreeMap::new();
    let kv = ctx.kv_mb_per_request;
    let field = |p: &serde_json::Value, key: &str| p.get(key).and_then(|v| v.as_f64());
    for (i, e) in log.events.iter().enumerate() {
        let mut expect_snapshot = None;
        match e.kind {
            SimEventKind::Resume => {
                if let Some(evicted) = e.payload.get("evicted").and_then(|v| v.as_array()) {
                    for id in evicted.iter().filter_map(|v| v.as_u64()) {
                        if resident.remove(&id).is_none() {
                            report
                                .violations
                                .push(format!("event {i}: evicted non-resident request {id}"));
                        }
                    }
                }
                let from = e.payload.get("from").and_then(|v| v.as_str()).unwrap_or("");
                if from != "gpu" {
                    resident.insert(e.request_id.unwrap_or_default(), kv);
                }
                expect_snapshot = field(&e.payload, "free_gpu_mb");
            }
            SimEventKind::Suspend => {
                if e.payload.get("kv_dropped").and_then(|v| v.as_bool()) == Some(true) {
                    resident.remove(&e.request_id.unwrap_or_default());
                }
                expect_snapshot = field(&e.payload, "free_gpu_mb");
            }
            SimEventKind::SegmentDispatched => {
                if e.payload.get("end_of_plan").and_then(|v| v.as_bool()) == Some(true) {
                    resident.remove(&e.request_id.unwrap_or_default());
                }
                expect_snapshot = field(&e.payload, "free_gpu_mb");
            }
            SimEventKind::IterationDone => {
                expect_snapshot = field(&e.payload, "free_gpu_mb");
            }
            _ => {}
        }
        let used: f64 = resident.values().sum();
        let free = ctx.gpu_memory_mb - used;
        if free < -EPS || used > ctx.gpu_memory_mb + EPS {
            report.violations.push(format!(
                "event {i}: GPU memory over capacity ({used:.2} of {:.2} MB)",
                ctx.gpu_memory_mb
            ));
        }
        if let Some(snapshot) = expect_snapshot {
            if (snapshot - free).abs() > EPS {
                report.violations.push(format!(
                    "event {i} ({}): free memory snapshot {snapshot:.3} != reconstructed {free:.3}",
                    e.kind
                ));
            }
        }
    }
}

/// Completion time must equal the sum of per-segment waits and executions.
fn check_decomposition(log: &EventLog, report: &mut AuditReport) {
    let (metrics, _) = super::compute_all_metrics(log);
    for m in &metrics {
        let total: f64 = m
            .segment_waits_s
            .iter()
            .zip(m.segment_execs_s.iter())
            .map(|(w, e)| w + e)
            .sum();
        if (total - m.completion_time_s).abs() > 1e-9 {
            report.violations.push(format!(
                "request {}: completion {} != sum of waits+execs {}",
                m.request_id, m.completion_time_s, total
            ));
        }
    }
}

/// The dispatched segment texts must concatenate to the scripted plan text.
fn check_text_fidelity(log: &EventLog, ctx: &AuditContext<'_>, report: &mut AuditReport) {
    let mut trace_of: BTreeMap<u64, u32> = BTreeMap::new();
    let mut complete: BTreeMap<u64, bool> = BTreeMap::new();
    for e in log.iter_kind(SimEventKind::Arrival) {
        if let Some(id) = e.request_id {
            if let Some(t) = e.payload.get("trace_id").and_then(|v| v.as_u64()) {
                trace_of.insert(id, t as u32);
            }
        }
    }
    for e in log.iter_kind(SimEventKind::RequestComplete) {
        complete.insert(e.request_id.unwrap_or_default(), true);
    }
    let mut dispatched_text: BTreeMap<u64, String> = BTreeMap::new();
    for e in log.iter_kind(SimEventKind::SegmentDispatched) {
        let id = e.request_id.unwrap_or_default();
        if let Some(skills) = e.payload.get("skills").and_then(|v| v.as_array()) {
            let entry = dispatched_text.entry(id).or_default();
            for s in skills.iter().filter_map(|v| v.as_str()) {
                entry.push_str(s);
            }
        }
    }
    for (id, trace_id) in &trace_of {
        if complete.get(id) != Some(&true) {
            continue;
        }
        let Some(trace) = ctx.library.get(*trace_id) else {
            report
                .violations
                .push(format!("request {id}: unknown trace {trace_id}"));
            continue;
        };
        let expected = ScriptedPlan::from_trace(trace).full_text;
        let got = dispatched_text.get(id).cloned().unwrap_or_default();
        if got != expected {
            report.violations.push(format!(
                "request {id}: dispatched text diverges from plan ({} vs {} chars)",
                got.len(),
                expected.len()
            ));
        }
    }
}

/// Per request: admissions and suspensions alternate and segment indices
/// increase one by one, so a request never has two live segments.
fn check_suspend_resume_alternation(log: &EventLog, report: &mut AuditReport) {
    #[derive(Default)]
    struct Track {
        running: bool,
        next_segment: u32,
        dispatched: u32,
        finished: bool,
    }
    let mut tracks: BTreeMap<u64, Track> = BTreeMap::new();
    for (i, e) in log.events.iter().enumerate() {
        let Some(id) = e.request_id else { continue };
        let track = tracks.entry(id).or_default();
        match e.kind {
            SimEventKind::Resume => {
                let seg = e
                    .payload
                    .get("segment_index")
                    .and_then(|v| v.as_u64())
                    .unwrap_or_default() as u32;
                if track.running || track.finished {
                    report.violations.push(format!(
                        "event {i}: request {id} admitted while already active"
                    ));
                }
                if seg != track.next_segment {
                    report.violations.push(format!(
                        "event {i}: request {id} resumed segment {seg}, expected {}",
                        track.next_segment
                    ));
                }
                track.running = true;
            }
            SimEventKind::Suspend => {
                if !track.running {
                    report
                        .violations
                        .push(format!("event {i}: request {id} suspended while not running"));
                }
                track.running = false;
                track.next_segment += 1;
            }
            SimEventKind::SegmentDispatched => {
                let seg = e
                    .payload
                    .get("segment_index")
                    .and_then(|v| v.as_u64())
                    .unwrap_or_default() as u32;
                if seg != track.dispatched {
                    report.violations.push(format!(
                        "event {i}: request {id} dispatched segment {seg}, expected {}",
                        track.dispatched
                    ));
                }
                track.dispatched += 1;
                if e.payload.get("end_of_plan").and_then(|v| v.as_bool()) == Some(true) {
                    track.running = false;
                    track.finished = true;
                }
            }
            _ => {}
        }
    }
}

/// Actions on one agent must serialize, and an action starts no earlier than
/// its dispatch plus network latency (unless hidden behind the prior action).
fn check_agent_serialization(log: &EventLog, ctx: &AuditContext<'_>, report: &mut AuditReport) {
    let mut agent_busy_until: BTreeMap<u32, f64> = BTreeMap::new();
    let mut agent_open: BTreeMap<u32, u64> = BTreeMap::new();
    let mut dispatch_times: BTreeMap<(u64, u64), f64> = BTreeMap::new();
    let mut dispatch_count: BTreeMap<u64, u64> = BTreeMap::new();
    let mut start_count: BTreeMap<u64, u64> = BTreeMap::new();
    for (i, e) in log.events.iter().enumerate() {
        match e.kind {
            SimEventKind::SegmentDispatched => {
                let id = e.request_id.unwrap_or_default();
                let seg = dispatch_count.entry(id).or_default();
                dispatch_times.insert((id, *seg), e.time_s);
                *seg += 1;
            }
            SimEventKind::ActionStart => {
                let agent = e.agent_id.unwrap_or_default();
                let id = e.request_id.unwrap_or_default();
                if let Some(open) = agent_open.get(&agent) {
                    report.violations.push(format!(
                        "event {i}: agent {agent} starts request {id} while {open} is executing"
                    ));
                }
                agent_open.insert(agent, id);
                let seg = start_count.entry(id).or_default();
                let prior_free = agent_busy_until.get(&agent).copied().unwrap_or(f64::MIN);
                if let Some(dispatch) = dispatch_times.get(&(id, *seg)) {
                    let earliest = (dispatch + ctx.network_latency_s).max(prior_free);
                    if e.time_s < earliest - 1e-9 {
                        report.violations.push(format!(
                            "event {i}: action started {} before dispatch+network/prior end {}",
                            e.time_s, earliest
                        ));
                    }
                } else {
                    report
                        .violations
                        .push(format!("event {i}: action without a dispatch (request {id})"));
                }
                *seg += 1;
            }
            SimEventKind::ActionEnd => {
                let agent = e.agent_id.unwrap_or_default();
                agent_open.remove(&agent);
                agent_busy_until.insert(agent, e.time_s);
            }
            _ => {}
        }
    }
}

/// For the FCFS-family policies, first admissions must follow arrival order.
fn check_fcfs_admission_order(log: &EventLog, report: &mut AuditReport) {
    let mut arrival_order: Vec<u64> = Vec::new();
    for e in log.iter_kind(SimEventKind::Arrival) {
        arrival_order.push(e.request_id.unwrap_or_default());
    }
    let mut admission_order: Vec<u64> = Vec::new();
    for e in log.iter_kind(SimEventKind::Resume) {
        if e.payload.get("initial").and_then(|v| v.as_bool()) == Some(true) {
            admission_order.push(e.request_id.unwrap_or_default());
        }
    }
    let admitted: std::collections::BTreeSet<u64> = admission_order.iter().copied().collect();
    let expected: Vec<u64> = arrival_order
        .iter()
        .copied()
        .filter(|id| admitted.contains(id))
        .collect();
    if admission_order != expected {
        report.violations.push(format!(
            "FCFS admission order diverges from arrival order ({} admissions)",
            admission_order.len()
        ));
    }
}
