//! Latency and utility metrics derived from event logs.
//!
//! Three user-perceptible latencies per request: response time (arrival to
//! first action start), waiting time (the cumulative planning-induced gaps
//! between actions), and completion time. Realized utility evaluates the
//! request's TUF at its response time; the per-segment objective additionally
//! credits suspended segments through the zero-deadline variant.
//!
//! All functions are pure over immutable logs; TUF evaluation goes through
//! the `tuf` module and nothing else.

pub mod audit;

use crate::simcore::{EventLog, SimEvent, SimEventKind};
use crate::tuf::TimeUtilityFunction;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("request {0} did not complete in this log")]
    IncompleteRequest(u64),
    #[error("request {0} has malformed events: {1}")]
    MalformedRequest(u64, String),
}

/// Per-request latencies and utilities.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestMetrics {
    pub request_id: u64,
    pub trace_id: u32,
    pub category: String,
    /// W(s0): arrival to the first action start.
    pub response_time_s: f64,
    /// Sum of per-segment waits.
    pub waiting_time_s: f64,
    /// Arrival to the last action end.
    pub completion_time_s: f64,
    /// TUF evaluated at the response time.
    pub realized_utility: f64,
    /// First-segment TUF plus suspended-variant terms for later segments.
    pub realized_segment_utility: f64,
    pub segment_waits_s: Vec<f64>,
    pub segment_execs_s: Vec<f64>,
    pub tuf: TimeUtilityFunction,
}

fn arrival_tuf(event: &SimEvent) -> Option<TimeUtilityFunction> {
    serde_json::from_value(event.payload.get("tuf")?.clone()).ok()
}

/// Compute the metrics of one completed request.
pub fn compute_request_metrics(
    log: &EventLog,
    request_id: u64,
) -> Result<RequestMetrics, MetricsError> {
    let mut arrival: Option<&SimEvent> = None;
    let mut starts: Vec<f64> = Vec::new();
    let mut ends: Vec<f64> = Vec::new();
    let mut complete = false;
    for e in log.events.iter().filter(|e| e.request_id == Some(request_id)) {
        match e.kind {
            SimEventKind::Arrival => arrival = Some(e),
            SimEventKind::ActionStart => starts.push(e.time_s),
            SimEventKind::ActionEnd => ends.push(e.time_s),
            SimEventKind::RequestComplete => complete = true,
            _ => {}
        }
    }
    if !complete {
        return Err(MetricsError::IncompleteRequest(request_id));
    }
    let arrival = arrival.ok_or_else(|| {
        MetricsError::MalformedRequest(request_id, "missing arrival".into())
    })?;
    if starts.len() != ends.len() || starts.is_empty() {
        return Err(MetricsError::MalformedRequest(
            request_id,
            format!("{} starts vs {} ends", starts.len(), ends.len()),
        ));
    }
    let tuf = arrival_tuf(arrival).ok_or_else(|| {
        MetricsError::MalformedRequest(request_id, "arrival payload lacks tuf".into())
    })?;

    let arrival_s = arrival.time_s;
    let mut segment_waits_s = Vec::with_capacity(starts.len());
    let mut segment_execs_s = Vec::with_capacity(starts.len());
    for (k, (&start, &end)) in starts.iter().zip(ends.iter()).enumerate() {
        let wait = if k == 0 {
            start - arrival_s
        } else {
            (start - ends[k - 1]).max(0.0)
        };
        segment_waits_s.push(wait);
        segment_execs_s.push(end - start);
    }
    let response_time_s = segment_waits_s[0];
    let waiting_time_s = segment_waits_s.iter().sum();
    let completion_time_s = ends.last().unwrap() - arrival_s;
    let realized_utility = tuf.eval(response_time_s);
    let realized_segment_utility = tuf.eval(response_time_s)
        + segment_waits_s[1..]
            .iter()
            .map(|w| tuf.eval_suspended(*w))
            .sum::<f64>();

    let trace_id = arrival
        .payload
        .get("trace_id")
        .and_then(|v| v.as_u64())
        .unwrap_or_default() as u32;
    let category = arrival
        .payload
        .get("category")
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .to_string();

    Ok(RequestMetrics {
        request_id,
        trace_id,
        category,
        response_time_s,
        waiting_time_s,
        completion_time_s,
        realized_utility,
        realized_segment_utility,
        segment_waits_s,
        segment_execs_s,
        tuf,
    })
}

/// Metrics for every completed request plus the ids dropped at the cutoff.
pub fn compute_all_metrics(log: &EventLog) -> (Vec<RequestMetrics>, Vec<u64>) {
    let mut completed = Vec::new();
    let mut dropped = Vec::new();
    for e in log.iter_kind(SimEventKind::Arrival) {
        let id = e.request_id.expect("arrival has a request");
        match compute_request_metrics(log, id) {
            Ok(m) => completed.push(m),
            Err(MetricsError::IncompleteRequest(_)) => dropped.push(id),
            Err(err) => panic!("malformed log for request {id}: {err}"),
        }
    }
    (completed, dropped)
}

/// One row of the aggregate table: means over a task type.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub policy: String,
    pub wid: String,
    pub task_type: String,
    pub n: usize,
    pub mean_utility: f64,
    pub mean_response_s: f64,
    pub mean_waiting_s: f64,
    pub dropped: usize,
}

/// Aggregate report: per-type rows plus realized objective totals.
#[derive(Debug, Clone)]
pub struct AggregateReport {
    pub rows: Vec<AggregateRow>,
    /// Sum of realized utilities over completed requests.
    pub total_utility: f64,
    /// Sum of the per-segment objective over completed requests.
    pub total_segment_utility: f64,
    pub completed: usize,
    pub dropped: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Group completed requests by trace id ("task type") and report means.
/// Incomplete requests are excluded from means and counted per type in the
/// `dropped` column; a final `overall` row spans every completed request.
pub fn aggregate(
    metrics: &[RequestMetrics],
    dropped_trace_ids: &[u32],
    policy: &str,
    wid: &str,
) -> AggregateReport {
    let mut by_type: BTreeMap<u32, Vec<&RequestMetrics>> = BTreeMap::new();
    for m in metrics {
        by_type.entry(m.trace_id).or_default().push(m);
    }
    let mut dropped_by_type: BTreeMap<u32, usize> = BTreeMap::new();
    for id in dropped_trace_ids {
        *dropped_by_type.entry(*id).or_default() += 1;
    }
    let mut rows = Vec::new();
    let mut type_ids: Vec<u32> = by_type.keys().copied().collect();
    type_ids.extend(dropped_by_type.keys().copied());
    type_ids.sort_unstable();
    type_ids.dedup();
    for t in type_ids {
        let group = by_type.get(&t).map(Vec::as_slice).unwrap_or(&[]);
        rows.push(AggregateRow {
            policy: policy.into(),
            wid: wid.into(),
            task_type: t.to_string(),
            n: group.len(),
            mean_utility: mean(group.iter().map(|m| m.realized_utility)),
            mean_response_s: mean(group.iter().map(|m| m.response_time_s)),
            mean_waiting_s: mean(group.iter().map(|m| m.waiting_time_s)),
            dropped: dropped_by_type.get(&t).copied().unwrap_or(0),
        });
    }
    let dropped_total: usize = dropped_by_type.values().sum();
    rows.push(AggregateRow {
        policy: policy.into(),
        wid: wid.into(),
        task_type: "overall".into(),
        n: metrics.len(),
        mean_utility: mean(metrics.iter().map(|m| m.realized_utility)),
        mean_response_s: mean(metrics.iter().map(|m| m.response_time_s)),
        mean_waiting_s: mean(metrics.iter().map(|m| m.waiting_time_s)),
        dropped: dropped_total,
    });
    AggregateReport {
        rows,
        total_utility: metrics.iter().map(|m| m.realized_utility).sum(),
        total_segment_utility: metrics.iter().map(|m| m.realized_segment_utility).sum(),
        completed: metrics.len(),
        dropped: dropped_total,
    }
}

/// Mean realized utility over requests of one category (e.g. urgent drones).
pub fn category_mean_utility(metrics: &[RequestMetrics], category: &str) -> Option<f64> {
    let group: Vec<f64> = metrics
        .iter()
        .filter(|m| m.category == category)
        .map(|m| m.realized_utility)
        .collect();
    if group.is_empty() {
        None
    } else {
        Some(group.iter().sum::<f64>() / group.len() as f64)
    }
}

/// Mean waiting time over requests of one trace id.
pub fn trace_mean_waiting(metrics: &[RequestMetrics], trace_id: u32) -> Option<f64> {
    let group: Vec<f64> = metrics
        .iter()
        .filter(|m| m.trace_id == trace_id)
        .map(|m| m.waiting_time_s)
        .collect();
    if group.is_empty() {
        None
    } else {
        Some(group.iter().sum::<f64>() / group.len() as f64)
    }
}

/// Serialize aggregate rows as the canonical metrics CSV.
pub fn rows_to_csv(rows: &[AggregateRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "policy",
        "wid",
        "task_type",
        "n",
        "mean_utility",
        "mean_response_s",
        "mean_waiting_s",
        "dropped",
    ])
    .expect("header");
    for r in rows {
        w.write_record([
            r.policy.clone(),
            r.wid.clone(),
            r.task_type.clone(),
            r.n.to_string(),
            format!("{:.6}", r.mean_utility),
            format!("{:.6}", r.mean_response_s),
            format!("{:.6}", r.mean_waiting_s),
            r.dropped.to_string(),
        ])
        .expect("record");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::SchedulerPolicy;
    use crate::simcore::{run, SimConfig};
    use crate::workload::{builtin_library, Segmentation, WorkloadSpec};
    use serde_json::json;

    fn synthetic_log(events: Vec<(f64, SimEventKind, u64, serde_json::Value)>) -> EventLog {
        EventLog {
            events: events
                .into_iter()
                .map(|(time_s, kind, request_id, payload)| SimEvent {
                    time_s,
                    kind,
                    request_id: Some(request_id),
                    agent_id: Some(0),
                    payload,
                })
                .collect(),
            non_quiescent: false,
        }
    }

    fn arrival_payload() -> serde_json::Value {
        json!({
            "trace_id": 1,
            "category": "drone_normal",
            "tuf": { "beta": 1.0, "alpha": -2.0, "ert_s": 1.0 },
        })
    }

    #[test]
    fn single_segment_definitions() {
        let log = synthetic_log(vec![
            (0.0, SimEventKind::Arrival, 7, arrival_payload()),
            (0.5, SimEventKind::ActionStart, 7, json!({})),
            (2.5, SimEventKind::ActionEnd, 7, json!({})),
            (2.5, SimEventKind::RequestComplete, 7, json!({})),
        ]);
        let m = compute_request_metrics(&log, 7).unwrap();
        assert_eq!(m.response_time_s, 0.5);
        assert_eq!(m.waiting_time_s, 0.5);
        assert_eq!(m.completion_time_s, 2.5);
        assert_eq!(m.realized_utility, 1.0);
    }

    #[test]
    fn zero_gap_segments_keep_waiting_equal_to_response() {
        let log = synthetic_log(vec![
            (0.0, SimEventKind::Arrival, 1, arrival_payload()),
            (0.3, SimEventKind::ActionStart, 1, json!({})),
            (1.3, SimEventKind::ActionEnd, 1, json!({})),
            // Second segment generated early: starts exactly at the prior end.
            (1.3, SimEventKind::ActionStart, 1, json!({})),
            (2.0, SimEventKind::ActionEnd, 1, json!({})),
            (2.0, SimEventKind::RequestComplete, 1, json!({})),
        ]);
        let m = compute_request_metrics(&log, 1).unwrap();
        assert_eq!(m.waiting_time_s, m.response_time_s);
        assert_eq!(m.segment_waits_s, vec![0.3, 0.0]);
    }

    #[test]
    fn utility_cutoff_at_response_1_5s() {
        let log = synthetic_log(vec![
            (0.0, SimEventKind::Arrival, 1, arrival_payload()),
            (1.5, SimEventKind::ActionStart, 1, json!({})),
            (2.0, SimEventKind::ActionEnd, 1, json!({})),
            (2.0, SimEventKind::RequestComplete, 1, json!({})),
        ]);
        let m = compute_request_metrics(&log, 1).unwrap();
        assert!((m.realized_utility - 0.0).abs() < 1e-12);
    }

    #[test]
    fn incomplete_request_is_an_error() {
        let log = synthetic_log(vec![(0.0, SimEventKind::Arrival, 1, arrival_payload())]);
        assert!(matches!(
            compute_request_metrics(&log, 1),
            Err(MetricsError::IncompleteRequest(1))
        ));
    }

    #[test]
    fn completion_decomposes_into_waits_plus_execs() {
        let workload = WorkloadSpec {
            events_per_second: 0.25,
            max_tasks_per_event: 8,
            trace_pool: (1..=8).collect(),
            agent_count: 25,
            duration_s: 120.0,
            seed: 77,
            segmentation: Segmentation::Skill,
            traces_path: None,
            profiles: None,
        };
        let config = SimConfig::new(workload, SchedulerPolicy::SegPud);
        let log = run(&config, &builtin_library()).unwrap();
        let (metrics, dropped) = compute_all_metrics(&log);
        assert!(dropped.is_empty());
        assert!(!metrics.is_empty());
        for m in &metrics {
            let total: f64 = m
                .segment_waits_s
                .iter()
                .zip(m.segment_execs_s.iter())
                .map(|(w, e)| w + e)
                .sum();
            assert!(
                (total - m.completion_time_s).abs() < 1e-9,
                "request {}: {} vs {}",
                m.request_id,
                total,
                m.completion_time_s
            );
            assert!(m.response_time_s <= m.waiting_time_s + 1e-12);
            assert!(m.realized_utility <= m.tuf.beta);
        }
    }

    #[test]
    fn aggregate_groups_by_type_with_overall_row() {
        let log = synthetic_log(vec![
            (0.0, SimEventKind::Arrival, 1, arrival_payload()),
            (0.5, SimEventKind::ActionStart, 1, json!({})),
            (1.0, SimEventKind::ActionEnd, 1, json!({})),
            (1.0, SimEventKind::RequestComplete, 1, json!({})),
        ]);
        let (metrics, _) = compute_all_metrics(&log);
        let report = aggregate(&metrics, &[2, 2], "seg-pud", "wid1");
        // One singleton type row, one row for the dropped type, one overall.
        assert_eq!(report.rows.len(), 3);
        assert_eq!(report.rows[0].task_type, "1");
        assert_eq!(report.rows[0].n, 1);
        assert_eq!(report.rows[0].mean_utility, 1.0);
        assert_eq!(report.rows[1].task_type, "2");
        assert_eq!(report.rows[1].dropped, 2);
        assert_eq!(report.rows.last().unwrap().task_type, "overall");
        assert_eq!(report.dropped, 2);
        let csv = rows_to_csv(&report.rows);
        assert!(csv.starts_with("policy,wid,task_type,n,"));
    }

    #[test]
    fn identical_requests_have_zero_spread() {
        let mut events = Vec::new();
        for id in 0..3u64 {
            events.push((0.0, SimEventKind::Arrival, id, arrival_payload()));
            events.push((0.4, SimEventKind::ActionStart, id, json!({})));
            events.push((1.4, SimEventKind::ActionEnd, id, json!({})));
            events.push((1.4, SimEventKind::RequestComplete, id, json!({})));
        }
        let log = synthetic_log(events);
        let (metrics, _) = compute_all_metrics(&log);
        let report = aggregate(&metrics, &[], "p", "w");
        let row = &report.rows[0];
        assert_eq!(row.n, 3);
        for m in &metrics {
            assert!((m.response_time_s - row.mean_response_s).abs() < 1e-12);
        }
    }
}
