//! Brute-force verification on tiny instances.
//!
//! Enumerates every feasible single-server schedule of a handful of segmented
//! requests on a discrete tick grid, scores each schedule with the
//! per-segment utility objective, and checks that no objective maximizer is
//! Pareto-dominated with respect to per-request completion times and
//! first-segment utilities. Instances are deliberately desk-sized: the
//! underlying scheduling problem is NP-hard, so exhaustive search is the only
//! trustworthy referee.
//!
//! Schedules can also be replayed through the simulation loop at batch size 1
//! with zero overheads, tying the enumerator's objective to the metrics
//! pipeline computed from an event log.

use crate::simcore::{run_scripted, EventLog, ScriptedRun, SimError};
use crate::tuf::{TimeUtilityFunction, UrgencyClass};
use crate::workload::{ExecProfile, SkillCall, TaskCategory, TaskTrace};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard bounds keeping enumeration tractable.
pub const MAX_REQUESTS: usize = 3;
pub const MAX_SEGMENTS: usize = 3;
pub const MAX_HORIZON_TICKS: u32 = 64;
const DEFAULT_SCHEDULE_CAP: u64 = 2_000_000;
/// Objective maximizers tracked for the domination scan.
const ARGMAX_TRACK_CAP: usize = 32;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance too large: {0}")]
    InstanceTooLarge(String),
    #[error("infeasible schedule: {0}")]
    InfeasibleSchedule(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// One segment: generation occupies the server, execution occupies the robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSegment {
    pub gen_ticks: u32,
    pub exec_ticks: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRequest {
    pub arrival_tick: u32,
    pub segments: Vec<OracleSegment>,
    pub tuf: TimeUtilityFunction,
}

/// A tiny scheduling instance on a discrete tick grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyInstance {
    pub requests: Vec<OracleRequest>,
    pub horizon_ticks: u32,
    /// Tick duration in seconds (TUFs evaluate on seconds).
    pub tick_s: f64,
}

/// Generation start ticks, `starts[r][k]` per request and segment.
pub type Schedule = Vec<Vec<u32>>;

impl TinyInstance {
    pub fn validate(&self) -> Result<(), OracleError> {
        if self.requests.is_empty() {
            return Err(OracleError::InvalidInstance("no requests".into()));
        }
        if self.requests.len() > MAX_REQUESTS {
            return Err(OracleError::InstanceTooLarge(format!(
                "{} requests (max {MAX_REQUESTS})",
                self.requests.len()
            )));
        }
        if self.horizon_ticks > MAX_HORIZON_TICKS {
            return Err(OracleError::InstanceTooLarge(format!(
                "horizon {} ticks (max {MAX_HORIZON_TICKS})",
                self.horizon_ticks
            )));
        }
        if self.tick_s.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(OracleError::InvalidInstance("tick_s must be > 0".into()));
        }
        for (r, req) in self.requests.iter().enumerate() {
            if req.segments.is_empty() {
                return Err(OracleError::InvalidInstance(format!("request {r} has no segments")));
            }
            if req.segments.len() > MAX_SEGMENTS {
                return Err(OracleError::InstanceTooLarge(format!(
                    "request {r} has {} segments (max {MAX_SEGMENTS})",
                    req.segments.len()
                )));
            }
            for s in &req.segments {
                if s.gen_ticks == 0 {
                    return Err(OracleError::InvalidInstance(format!(
                        "request {r} has a zero-tick generation"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Any TUF with a positive slope violates the monotonicity hypothesis of
    /// the optimality argument; domination counterexamples are then allowed.
    pub fn hypothesis_violated(&self) -> bool {
        self.requests.iter().any(|r| r.tuf.alpha > 0.0)
    }

    /// Whether every request's TUF is strictly declining at every realizable
    /// first-segment wait (the wait is at least the first generation time, so
    /// a deadline shorter than that keeps all schedules off the plateau).
    /// Off the plateau a first-wait change cancels exactly against the
    /// suspended-segment terms and the optimality claim is provable; on the
    /// plateau a maximizer can trade a free first-wait for completion time
    /// and end up dominated.
    pub fn strictness_applies(&self) -> bool {
        self.requests.iter().all(|r| {
            r.tuf.alpha < 0.0
                && r.tuf.ert_s < r.segments[0].gen_ticks as f64 * self.tick_s
        })
    }

    /// Per-request waits, completions, and first-segment utilities under a
    /// schedule, plus the per-segment objective value. Allocation-free: the
    /// enumeration calls this once per feasible schedule.
    fn evaluate(&self, schedule: &Schedule) -> ScheduleValue {
        let mut value = ScheduleValue {
            objective: 0.0,
            completions: [0.0; MAX_REQUESTS],
            first_utilities: [0.0; MAX_REQUESTS],
            n: self.requests.len(),
        };
        for (r, req) in self.requests.iter().enumerate() {
            let mut action_end = f64::NEG_INFINITY;
            let mut prev_end = 0.0f64;
            for (k, seg) in req.segments.iter().enumerate() {
                let gen_end = (schedule[r][k] + seg.gen_ticks) as f64;
                let start = if k == 0 { gen_end } else { gen_end.max(prev_end) };
                let wait_ticks = if k == 0 {
                    start - req.arrival_tick as f64
                } else {
                    (start - prev_end).max(0.0)
                };
                let wait_s = wait_ticks * self.tick_s;
                let u = if k == 0 {
                    value.first_utilities[r] = req.tuf.eval(wait_s);
                    value.first_utilities[r]
                } else {
                    req.tuf.eval_suspended(wait_s)
                };
                value.objective += u;
                action_end = start + seg.exec_ticks as f64;
                prev_end = action_end;
            }
            value.completions[r] = (action_end - req.arrival_tick as f64) * self.tick_s;
        }
        value
    }

    /// Check server feasibility of an explicit schedule.
    pub fn check_feasible(&self, schedule: &Schedule) -> Result<(), OracleError> {
        if schedule.len() != self.requests.len() {
            return Err(OracleError::InfeasibleSchedule("wrong request count".into()));
        }
        let mut busy: Vec<(u32, u32)> = Vec::new();
        for (r, req) in self.requests.iter().enumerate() {
            if schedule[r].len() != req.segments.len() {
                return Err(OracleError::InfeasibleSchedule(format!(
                    "request {r}: wrong segment count"
                )));
            }
            let mut prev_gen_end = req.arrival_tick;
            for (k, seg) in req.segments.iter().enumerate() {
                let start = schedule[r][k];
                if start < prev_gen_end {
                    return Err(OracleError::InfeasibleSchedule(format!(
                        "request {r} segment {k} starts at {start} before {prev_gen_end}"
                    )));
                }
                let end = start + seg.gen_ticks;
                if end > self.horizon_ticks {
                    return Err(OracleError::InfeasibleSchedule(format!(
                        "request {r} segment {k} ends past the horizon"
                    )));
                }
                busy.push((start, end));
                prev_gen_end = end;
            }
        }
        busy.sort_unstable();
        for pair in busy.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(OracleError::InfeasibleSchedule(format!(
                    "server overlap: [{}, {}) and [{}, {})",
                    pair[0].0, pair[0].1, pair[1].0, pair[1].1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct ScheduleValue {
    objective: f64,
    completions: [f64; MAX_REQUESTS],
    first_utilities: [f64; MAX_REQUESTS],
    n: usize,
}

impl ScheduleValue {
    fn completion_sum(&self) -> f64 {
        self.completions[..self.n].iter().sum()
    }

    fn utility_sum(&self) -> f64 {
        self.first_utilities[..self.n].iter().sum()
    }
}

/// Visit every feasible schedule: non-preemptive segments on one server,
/// segment k+1 generated after segment k, idle time permitted. Returns the
/// number visited, or an error once `cap` is exceeded.
pub fn for_each_schedule(
    inst: &TinyInstance,
    cap: u64,
    mut visit: impl FnMut(&Schedule),
) -> Result<u64, OracleError> {
    inst.validate()?;
    let mut schedule: Schedule = inst.requests.iter().map(|_| Vec::new()).collect();
    let mut count = 0u64;
    dfs(inst, &mut schedule, 0, cap, &mut count, &mut visit)?;
    Ok(count)
}

fn dfs(
    inst: &TinyInstance,
    schedule: &mut Schedule,
    server_free: u32,
    cap: u64,
    count: &mut u64,
    visit: &mut impl FnMut(&Schedule),
) -> Result<(), OracleError> {
    if schedule
        .iter()
        .zip(inst.requests.iter())
        .all(|(s, r)| s.len() == r.segments.len())
    {
        *count += 1;
        if *count > cap {
            return Err(OracleError::InstanceTooLarge(format!(
                "more than {cap} feasible schedules"
            )));
        }
        visit(schedule);
        return Ok(());
    }
    for r in 0..inst.requests.len() {
        let k = schedule[r].len();
        if k == inst.requests[r].segments.len() {
            continue;
        }
        let req = &inst.requests[r];
        let earliest = if k == 0 {
            req.arrival_tick.max(server_free)
        } else {
            (schedule[r][k - 1] + req.segments[k - 1].gen_ticks).max(server_free)
        };
        let g = req.segments[k].gen_ticks;
        if earliest + g > inst.horizon_ticks {
            continue;
        }
        for start in earliest..=(inst.horizon_ticks - g) {
            schedule[r].push(start);
            dfs(inst, schedule, start + g, cap, count, visit)?;
            schedule[r].pop();
        }
    }
    Ok(())
}

/// Per-segment utility objective (first segment via the request TUF, later
/// segments via the suspended variant) of a feasible schedule.
pub fn objective_eq_segments(inst: &TinyInstance, schedule: &Schedule) -> Result<f64, OracleError> {
    inst.check_feasible(schedule)?;
    Ok(inst.evaluate(schedule).objective)
}

/// A Pareto-domination counterexample: a feasible schedule that improves the
/// criteria vector of an objective maximizer.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub argmax: Schedule,
    pub dominator: Schedule,
}

/// Result of the exhaustive Pareto check.
#[derive(Debug)]
pub struct ParetoReport {
    pub schedules: u64,
    pub max_objective: f64,
    /// The canonical objective maximizer: smallest total completion time,
    /// then largest total first-segment utility, then lexicographic.
    pub best: Schedule,
    /// Objective maximizers tracked (capped; `argmax_total` counts all).
    pub argmax: Vec<Schedule>,
    pub argmax_total: u64,
    pub counterexamples: Vec<Counterexample>,
    /// Tied maximizers dominated by other schedules (informational: plateau
    /// ties permit this without contradicting optimality).
    pub dominated_ties: usize,
    /// Whether a non-monotone TUF voids the optimality guarantee.
    pub hypothesis_violated: bool,
    /// Whether the strict-decline condition held, making the guarantee
    /// provable; counterexamples on plateau instances flag the theorem's
    /// boundary rather than an implementation fault.
    pub strictness_applies: bool,
}

impl ParetoReport {
    pub fn is_pareto_optimal(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

/// Enumerate all schedules, find the objective maximizers, and verify the
/// optimum is Pareto-undominated in (per-request completion time,
/// first-segment utility).
///
/// TUF plateaus produce objective ties, and a tied maximizer can be dominated
/// by a schedule that converts a free (plateau) first-segment wait into a
/// smaller completion time. That never contradicts the optimality claim: ties
/// are broken exactly the way the bi-criteria restatement of the problem
/// prescribes, minimizing total completion and maximizing first-segment
/// utility. A counterexample is therefore a feasible schedule dominating the
/// canonical maximizer `best`. Dominated non-canonical ties are counted
/// separately as `dominated_ties`.
pub fn pareto_check(inst: &TinyInstance) -> Result<ParetoReport, OracleError> {
    pareto_check_capped(inst, DEFAULT_SCHEDULE_CAP)
}

pub fn pareto_check_capped(inst: &TinyInstance, cap: u64) -> Result<ParetoReport, OracleError> {
    const TIE_EPS: f64 = 1e-9;
    let mut max_objective = f64::NEG_INFINITY;
    let mut argmax: Vec<(Schedule, ScheduleValue)> = Vec::new();
    let mut argmax_total = 0u64;
    let mut best: Option<(Schedule, ScheduleValue)> = None;
    let schedules = for_each_schedule(inst, cap, |schedule| {
        let value = inst.evaluate(schedule);
        if value.objective > max_objective + TIE_EPS {
            max_objective = value.objective;
            argmax.clear();
            argmax_total = 0;
            best = None;
        }
        if (value.objective - max_objective).abs() <= TIE_EPS {
            argmax_total += 1;
            if argmax.len() < ARGMAX_TRACK_CAP {
                argmax.push((schedule.clone(), value));
            }
            let replace = match &best {
                None => true,
                Some((b_sched, b_value)) => {
                    let key = (value.completion_sum(), -value.utility_sum());
                    let b_key = (b_value.completion_sum(), -b_value.utility_sum());
                    key < b_key || (key == b_key && schedule < b_sched)
                }
            };
            if replace {
                best = Some((schedule.clone(), value));
            }
        }
    })?;
    let (best_schedule, best_value) = best.expect("at least one feasible schedule");

    let mut counterexamples = Vec::new();
    let mut dominated_ties_set = vec![false; argmax.len()];
    for_each_schedule(inst, cap, |candidate| {
        let value = inst.evaluate(candidate);
        if dominates(&value, &best_value) {
            counterexamples.push(Counterexample {
                argmax: best_schedule.clone(),
                dominator: candidate.clone(),
            });
        }
        for (i, (_, max_value)) in argmax.iter().enumerate() {
            if !dominated_ties_set[i] && dominates(&value, max_value) {
                dominated_ties_set[i] = true;
            }
        }
    })?;

    Ok(ParetoReport {
        schedules,
        max_objective,
        best: best_schedule,
        argmax: argmax.into_iter().map(|(s, _)| s).collect(),
        argmax_total,
        counterexamples,
        dominated_ties: dominated_ties_set.iter().filter(|d| **d).count(),
        hypothesis_violated: inst.hypothesis_violated(),
        strictness_applies: inst.strictness_applies(),
    })
}

/// `a` dominates `b` when it is no worse on every request's completion time
/// and first-segment utility, and strictly better somewhere.
fn dominates(a: &ScheduleValue, b: &ScheduleValue) -> bool {
    const EPS: f64 = 1e-12;
    let mut strict = false;
    for (ca, cb) in a.completions[..a.n].iter().zip(b.completions[..b.n].iter()) {
        if *ca > cb + EPS {
            return false;
        }
        if *ca < cb - EPS {
            strict = true;
        }
    }
    for (ua, ub) in a.first_utilities[..a.n]
        .iter()
        .zip(b.first_utilities[..b.n].iter())
    {
        if *ua < ub - EPS {
            return false;
        }
        if *ua > ub + EPS {
            strict = true;
        }
    }
    strict
}

/// Draw a random valid instance within the enumeration bounds. The schedule
/// count is probed first; oversized draws are rejected and retried.
pub fn random_instance(rng: &mut impl Rng) -> TinyInstance {
    const COUNT_CAP: u64 = 80_000;
    loop {
        let n_requests = *[1, 2, 2, 3, 3, 3].get(rng.random_range(0..6)).unwrap();
        let requests: Vec<OracleRequest> = (0..n_requests)
            .map(|_| {
                let segments: Vec<OracleSegment> = (0..rng.random_range(1..=3))
                    .map(|_| OracleSegment {
                        gen_ticks: rng.random_range(1..=3),
                        exec_ticks: rng.random_range(0..=4),
                    })
                    .collect();
                let beta = rng.random_range(0.5..3.0);
                let alpha = -rng.random_range(0.5..8.0);
                // Deadline below the first generation time keeps every
                // schedule off the plateau, where the guarantee is provable.
                let first_gen: u32 = segments[0].gen_ticks;
                let ert_s = rng.random_range(0.0..first_gen as f64 * 0.01 * 0.95);
                OracleRequest {
                    arrival_tick: rng.random_range(0..=4),
                    segments,
                    tuf: TimeUtilityFunction::new(beta, alpha, ert_s).expect("valid TUF"),
                }
            })
            .collect();
        let total_gen: u32 = requests
            .iter()
            .flat_map(|r| r.segments.iter().map(|s| s.gen_ticks))
            .sum();
        let max_arrival = requests.iter().map(|r| r.arrival_tick).max().unwrap_or(0);
        let slack = rng.random_range(1..=3);
        let horizon_ticks = (total_gen + max_arrival + slack).min(MAX_HORIZON_TICKS);
        let inst = TinyInstance {
            requests,
            horizon_ticks,
            tick_s: 0.01,
        };
        if for_each_schedule(&inst, COUNT_CAP, |_| {}).is_ok() {
            return inst;
        }
    }
}

/// Load instances from a JSON array file.
pub fn load_instances(path: impl AsRef<std::path::Path>) -> Result<Vec<TinyInstance>, OracleError> {
    let content = std::fs::read_to_string(path)
        .map_err(|e| OracleError::InvalidInstance(e.to_string()))?;
    serde_json::from_str(&content).map_err(|e| OracleError::InvalidInstance(e.to_string()))
}

// --- Replay through the simulator ---------------------------------------------

/// Build a scripted trace whose segments each hold one skill with a constant
/// execution time: segment k of `(gen_ticks, exec_ticks)` becomes a skill of
/// `gen_ticks` tokens executing for `exec_ticks * tick_s` seconds.
pub fn segmented_trace(
    trace_id: u32,
    segments: &[(u32, u32)],
    urgency: UrgencyClass,
    tick_s: f64,
) -> TaskTrace {
    let plan = segments
        .iter()
        .enumerate()
        .map(|(k, (gen_ticks, exec_ticks))| {
            let name = format!("a{trace_id}x{k}");
            let text = format!("{name}({});", "0".repeat(*gen_ticks as usize));
            SkillCall {
                name,
                params: vec![],
                token_count: *gen_ticks,
                exec_profile: ExecProfile::Constant {
                    mean_s: *exec_ticks as f64 * tick_s,
                },
                text: Some(text),
            }
        })
        .collect();
    TaskTrace {
        trace_id,
        category: TaskCategory::DroneNormal,
        prompt_tokens: 1,
        plan,
        urgency,
    }
}

/// Replay a schedule through the simulation loop (batch 1, zero overheads)
/// and return the event log for the metrics pipeline.
pub fn replay_through_sim(inst: &TinyInstance, schedule: &Schedule) -> Result<EventLog, OracleError> {
    inst.check_feasible(schedule)?;
    let traces: Vec<TaskTrace> = inst
        .requests
        .iter()
        .enumerate()
        .map(|(r, req)| {
            let segments: Vec<(u32, u32)> = req
                .segments
                .iter()
                .map(|s| (s.gen_ticks, s.exec_ticks))
                .collect();
            segmented_trace(
                r as u32 + 1,
                &segments,
                UrgencyClass {
                    kind: crate::tuf::UrgencyKind::Normal,
                    tuf: req.tuf,
                },
                inst.tick_s,
            )
        })
        .collect();
    let run = ScriptedRun {
        traces,
        arrival_s: inst
            .requests
            .iter()
            .map(|r| r.arrival_tick as f64 * inst.tick_s)
            .collect(),
        starts: schedule
            .iter()
            .map(|segs| segs.iter().map(|t| *t as f64 * inst.tick_s).collect())
            .collect(),
        tick_s: inst.tick_s,
    };
    Ok(run_scripted(&run)?)
}

/// The earliest-start (no added idle) schedule, one convenient feasible point.
pub fn greedy_schedule(inst: &TinyInstance) -> Schedule {
    let mut schedule: Schedule = inst.requests.iter().map(|_| Vec::new()).collect();
    let mut server_free = 0u32;
    loop {
        let mut best: Option<(u32, usize)> = None;
        for (r, req) in inst.requests.iter().enumerate() {
            let k = schedule[r].len();
            if k == req.segments.len() {
                continue;
            }
            let earliest = if k == 0 {
                req.arrival_tick.max(server_free)
            } else {
                (schedule[r][k - 1] + req.segments[k - 1].gen_ticks).max(server_free)
            };
            if best.is_none_or(|(t, _)| earliest < t) {
                best = Some((earliest, r));
            }
        }
        let Some((start, r)) = best else { break };
        let k = schedule[r].len();
        schedule[r].push(start);
        server_free = start + inst.requests[r].segments[k].gen_ticks;
    }
    schedule
}
