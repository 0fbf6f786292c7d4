//! Utility-accrual scheduling over initial and suspended generations.
//!
//! Priorities follow a potential-utility-density rule: the utility a segment
//! would realize if its generation started now, normalized by the estimated
//! generation time and scaled down by the remaining slack before its
//! deadline. First segments evaluate the request's own TUF on estimated
//! waiting since arrival; suspended segments evaluate the zero-deadline
//! variant on waiting past the estimated end of the preceding action, so a
//! segment whose robot is still busy scores the full plateau and ramps up as
//! the action nears completion.
//!
//! Admission into the batch is latency-guided: a candidate joins only if the
//! most urgent running generation can still finish its segment within its
//! remaining budget at the enlarged batch size, and only if its context fits
//! in GPU memory.

use crate::engine::{Engine, GenStatus};
use crate::tuf::TimeUtilityFunction;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("unknown policy '{0}' (expected seg-pud, seg-fcfs, seg-edf, fcfs-batch, stream-fcfs)")]
    UnknownPolicy(String),
}

/// Scheduling policy under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerPolicy {
    /// Segmented generation with potential-utility-density priorities.
    SegPud,
    /// Segmented generation, first-come first-served by request arrival.
    SegFcfs,
    /// Segmented generation, earliest deadline first. Suspended segments keep
    /// the request's initial deadline (arrival + ERT), so a request's later
    /// segments inherit its original urgency rather than the execution-aware
    /// deadline the utility-density policy uses.
    SegEdf,
    /// Whole-plan generation in arrival order up to a fixed batch size; the
    /// agent receives the plan only when generation finishes.
    FcfsBatch,
    /// Whole-plan generation in arrival order, but completed skills are
    /// dispatched immediately as they appear.
    StreamFcfs,
}

impl SchedulerPolicy {
    pub const ALL: [SchedulerPolicy; 5] = [
        SchedulerPolicy::SegPud,
        SchedulerPolicy::SegFcfs,
        SchedulerPolicy::SegEdf,
        SchedulerPolicy::FcfsBatch,
        SchedulerPolicy::StreamFcfs,
    ];

    /// Whether generations suspend at segment boundaries.
    pub fn suspends(&self) -> bool {
        matches!(
            self,
            SchedulerPolicy::SegPud | SchedulerPolicy::SegFcfs | SchedulerPolicy::SegEdf
        )
    }

    /// Whether completed skills are dispatched before the plan finishes.
    pub fn streams(&self) -> bool {
        !matches!(self, SchedulerPolicy::FcfsBatch)
    }

    /// Whether admission uses the latency-guided rule by default (the
    /// fixed-batch baselines always use the plain cap).
    pub fn adaptive_admission(&self) -> bool {
        self.suspends()
    }
}

impl fmt::Display for SchedulerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SchedulerPolicy::SegPud => "seg-pud",
            SchedulerPolicy::SegFcfs => "seg-fcfs",
            SchedulerPolicy::SegEdf => "seg-edf",
            SchedulerPolicy::FcfsBatch => "fcfs-batch",
            SchedulerPolicy::StreamFcfs => "stream-fcfs",
        };
        f.write_str(s)
    }
}

impl FromStr for SchedulerPolicy {
    type Err = SchedulerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "seg-pud" | "segpud" | "pud" => Ok(SchedulerPolicy::SegPud),
            "seg-fcfs" | "segfcfs" => Ok(SchedulerPolicy::SegFcfs),
            "seg-edf" | "segedf" | "edf" => Ok(SchedulerPolicy::SegEdf),
            "fcfs-batch" | "fcfsbatch" | "fcfs" => Ok(SchedulerPolicy::FcfsBatch),
            "stream-fcfs" | "streamfcfs" | "stream" => Ok(SchedulerPolicy::StreamFcfs),
            other => Err(SchedulerError::UnknownPolicy(other.into())),
        }
    }
}

/// Tunables of the scheduler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerParams {
    /// Estimated generation time of one segment, seconds.
    pub gen_estimate_s: f64,
    /// Per-trace overrides of the segment generation estimate.
    pub gen_estimate_overrides: BTreeMap<u32, f64>,
    /// Slack floor keeping priorities finite past deadlines, seconds.
    pub epsilon_l_s: f64,
    /// Floor of the priority denominator G*L, seconds squared.
    pub denominator_floor: f64,
    /// Tokens averaged for the recent generation-speed estimate.
    pub speed_window_tokens: u32,
    /// Batch cap for the fixed-size baselines and sweeps.
    pub max_batch_size: u32,
}

impl Default for SchedulerParams {
    fn default() -> Self {
        Self {
            gen_estimate_s: 0.09,
            gen_estimate_overrides: BTreeMap::new(),
            epsilon_l_s: 0.001,
            denominator_floor: 1e-6,
            speed_window_tokens: 5,
            max_batch_size: 16,
        }
    }
}

impl SchedulerParams {
    pub fn gen_estimate_for(&self, trace_id: u32) -> f64 {
        *self
            .gen_estimate_overrides
            .get(&trace_id)
            .unwrap_or(&self.gen_estimate_s)
    }
}

/// A queued (initial or suspended) generation awaiting admission.
#[derive(Debug, Clone, PartialEq)]
pub struct QueuedTask {
    pub request_id: u64,
    pub agent_id: u32,
    /// Segment to generate next; 0 for an initial generation.
    pub segment_index: u32,
    /// Arrival time of the request (not of this segment).
    pub arrival_time_s: f64,
    /// Absolute deadline: arrival + ERT for the first segment, the estimated
    /// end of the preceding action for later ones.
    pub deadline_s: f64,
    pub tuf: TimeUtilityFunction,
    /// Estimated generation time of this segment, seconds.
    pub gen_estimate_s: f64,
    /// Estimated absolute end of the preceding dispatched action (k > 0).
    pub prev_action_end_estimate_s: Option<f64>,
    /// Cached priority; recomputed before every fetch.
    pub priority: f64,
}

impl QueuedTask {
    /// Task for a request's first segment.
    pub fn initial(
        request_id: u64,
        agent_id: u32,
        arrival_time_s: f64,
        tuf: TimeUtilityFunction,
        gen_estimate_s: f64,
    ) -> Self {
        Self {
            request_id,
            agent_id,
            segment_index: 0,
            arrival_time_s,
            deadline_s: arrival_time_s + tuf.ert_s,
            tuf,
            gen_estimate_s,
            prev_action_end_estimate_s: None,
            priority: 0.0,
        }
    }

    /// Task for segment `k + 1` after segment `k` completed; its deadline is
    /// the estimated end of the actions dispatched so far.
    pub fn successor(&self, segment_index: u32, prev_action_end_estimate_s: f64) -> Self {
        Self {
            segment_index,
            deadline_s: prev_action_end_estimate_s,
            prev_action_end_estimate_s: Some(prev_action_end_estimate_s),
            priority: 0.0,
            ..self.clone()
        }
    }
}

/// Estimated waiting time of the task's segment if its generation starts at
/// `now`: generation plus network delay measured from the request arrival
/// (first segment) or from the estimated end of the preceding action (later
/// segments, possibly negative).
pub fn estimated_waiting(task: &QueuedTask, now: f64, network_latency_s: f64) -> f64 {
    let ready = now + task.gen_estimate_s + network_latency_s;
    match task.prev_action_end_estimate_s {
        None => ready - task.arrival_time_s,
        Some(prev_end) => ready - prev_end,
    }
}

/// Remaining time until the expected completion of this segment's generation,
/// floored to keep priorities finite past the deadline.
pub fn slack(task: &QueuedTask, now: f64, epsilon_l_s: f64) -> f64 {
    (task.deadline_s - now - task.gen_estimate_s).max(epsilon_l_s)
}

/// Potential utility density of generating the segment now.
pub fn priority(task: &QueuedTask, now: f64, network_latency_s: f64, params: &SchedulerParams) -> f64 {
    let waiting = estimated_waiting(task, now, network_latency_s);
    let numerator = if task.segment_index == 0 {
        task.tuf.eval(waiting)
    } else {
        task.tuf.eval_suspended(waiting)
    };
    let denominator =
        (task.gen_estimate_s * slack(task, now, params.epsilon_l_s)).max(params.denominator_floor);
    numerator / denominator
}

/// Priority queue over queued tasks with policy-dependent ordering.
#[derive(Debug)]
pub struct TaskQueue {
    policy: SchedulerPolicy,
    tasks: Vec<QueuedTask>,
}

impl TaskQueue {
    pub fn new(policy: SchedulerPolicy) -> Self {
        Self {
            policy,
            tasks: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn push(&mut self, task: QueuedTask) {
        self.tasks.push(task);
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueuedTask> {
        self.tasks.iter()
    }

    /// Recompute every cached priority at `now` and restore the policy order
    /// (head at index 0). Ties break on earlier arrival, then lower id.
    pub fn update_all_priorities(
        &mut self,
        now: f64,
        network_latency_s: f64,
        params: &SchedulerParams,
    ) {
        for task in &mut self.tasks {
            task.priority = priority(task, now, network_latency_s, params);
        }
        let policy = self.policy;
        self.tasks.sort_by(|a, b| {
            let key = match policy {
                SchedulerPolicy::SegPud => b.priority.total_cmp(&a.priority),
                SchedulerPolicy::SegEdf => {
                    let (da, db) = (
                        a.arrival_time_s + a.tuf.ert_s,
                        b.arrival_time_s + b.tuf.ert_s,
                    );
                    da.total_cmp(&db)
                }
                SchedulerPolicy::SegFcfs
                | SchedulerPolicy::FcfsBatch
                | SchedulerPolicy::StreamFcfs => std::cmp::Ordering::Equal,
            };
            key.then(a.arrival_time_s.total_cmp(&b.arrival_time_s))
                .then(a.request_id.cmp(&b.request_id))
        });
    }

    pub fn peek(&self) -> Option<&QueuedTask> {
        self.tasks.first()
    }

    pub fn pop(&mut self) -> Option<QueuedTask> {
        if self.tasks.is_empty() {
            None
        } else {
            Some(self.tasks.remove(0))
        }
    }

    /// Remove the first task matching `pred`, ignoring the policy order.
    /// Used by scripted replays that admit by scheduled start time.
    pub fn pop_matching(&mut self, pred: impl Fn(&QueuedTask) -> bool) -> Option<QueuedTask> {
        let idx = self.tasks.iter().position(pred)?;
        Some(self.tasks.remove(idx))
    }
}

/// Outcome of the latency-guided admission check.
#[derive(Debug, Clone, PartialEq)]
pub enum AdmitDecision {
    Admit,
    /// Admitting would risk the most urgent running generation's budget.
    RefuseLatency {
        protected_request: u64,
        wcet_ms: f64,
        budget_ms: f64,
    },
    /// The candidate's context does not fit in GPU memory.
    RefuseMemory,
}

impl AdmitDecision {
    pub fn admitted(&self) -> bool {
        matches!(self, AdmitDecision::Admit)
    }
}

/// Decide whether `candidate` may join the batch at `now`.
///
/// The worst case for the most urgent running generation is its remaining
/// segment token budget times its recent per-token latency, scaled by the
/// iteration-latency growth from one more batch member, plus the candidate's
/// prefill lump if it has not prefilled yet.
///
/// A running generation whose budget is already blown at the current batch
/// size is beyond protection: refusing admissions cannot save its deadline
/// and only starves the queue, so the check applies to the most urgent
/// generation that can still finish in time.
pub fn admit_decision(
    engine: &Engine,
    params: &SchedulerParams,
    candidate: &QueuedTask,
    now: f64,
) -> AdmitDecision {
    if !engine.can_fit(candidate.request_id) {
        return AdmitDecision::RefuseMemory;
    }
    let batch = engine.batch_len();
    if batch == 0 {
        return AdmitDecision::Admit;
    }

    let wcet_at = |gen: &crate::engine::GenerationState, members: usize| -> f64 {
        let remaining_tokens = engine
            .max_segment_tokens
            .saturating_sub(gen.tokens_in_current_segment) as f64;
        let speed_ms = gen
            .recent_speed_ms_per_token(params.speed_window_tokens)
            .unwrap_or_else(|| engine.decode_iteration_ms(batch));
        let growth = engine.decode_iteration_ms(members) / engine.decode_iteration_ms(batch);
        remaining_tokens * speed_ms * growth
    };

    let protected = engine
        .running_ids()
        .iter()
        .filter_map(|id| engine.state(*id))
        .filter(|g| wcet_at(g, batch) <= (g.deadline_s - now) * 1000.0)
        .min_by(|a, b| {
            a.deadline_s
                .total_cmp(&b.deadline_s)
                .then(a.request_id.cmp(&b.request_id))
        });
    let Some(protected) = protected else {
        return AdmitDecision::Admit;
    };

    let candidate_prefill_ms = match engine.state(candidate.request_id) {
        Some(g) if g.status == GenStatus::Queued => {
            engine.cost().prefill_ms_per_prompt_token * g.prompt_tokens as f64
        }
        _ => 0.0,
    };
    let wcet_ms = wcet_at(protected, batch + 1) + candidate_prefill_ms;
    let budget_ms = (protected.deadline_s - now) * 1000.0;
    if wcet_ms <= budget_ms {
        AdmitDecision::Admit
    } else {
        AdmitDecision::RefuseLatency {
            protected_request: protected.request_id,
            wcet_ms,
            budget_ms,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::EngineCostModel;
    use crate::tuf::UrgencyClass;
    use crate::workload::builtin_library;

    fn params() -> SchedulerParams {
        SchedulerParams::default()
    }

    fn normal_task(id: u64, arrival: f64) -> QueuedTask {
        QueuedTask::initial(id, 0, arrival, UrgencyClass::normal().tuf, 0.09)
    }

    #[test]
    fn priority_matches_hand_computation() {
        // Pre-deadline first segment: numerator 1, denominator 0.09 * 0.86.
        let mut task = normal_task(1, 0.0);
        task.deadline_s = 0.95; // slack at t=0: 0.95 - 0.09 = 0.86
        let p = priority(&task, 0.0, 0.0, &params());
        assert!((p - 1.0 / (0.09 * 0.86)).abs() < 1e-9);
        assert!((p - 12.92).abs() < 0.01);
    }

    #[test]
    fn estimated_waiting_first_and_later_segments() {
        let task = normal_task(1, 10.0);
        // At arrival: generation estimate plus network latency.
        assert!((estimated_waiting(&task, 10.0, 0.008) - 0.098).abs() < 1e-12);
        assert!((estimated_waiting(&task, 11.0, 0.008) - 1.098).abs() < 1e-12);

        let later = task.successor(1, 13.0);
        // Previous action ends 2 s after now: negative waiting, clipped by
        // the suspended TUF when evaluated.
        let w = estimated_waiting(&later, 11.0, 0.008);
        assert!((w - (-1.902)).abs() < 1e-12);
        assert_eq!(later.tuf.eval_suspended(w), later.tuf.beta);
    }

    #[test]
    fn slack_floors_at_epsilon() {
        let mut task = normal_task(1, 0.0);
        task.deadline_s = 1.0;
        assert!((slack(&task, 0.0, 0.001) - 0.91).abs() < 1e-12);
        assert!((slack(&task, 1.0, 0.001) - 0.001).abs() < 1e-15);
        task.deadline_s = 0.2;
        assert!((slack(&task, 0.0, 0.001) - 0.11).abs() < 1e-12);
    }

    #[test]
    fn suspended_numerator_clips_at_beta() {
        let task = normal_task(1, 0.0).successor(1, 5.0);
        // Far-future action end: estimated waiting is negative.
        let p = priority(&task, 0.0, 0.008, &params());
        let expected = 1.0 / (0.09 * (5.0 - 0.0 - 0.09));
        assert!((p - expected).abs() < 1e-9);
    }

    #[test]
    fn beta_scales_priority_pre_deadline() {
        let a = QueuedTask::initial(1, 0, 0.0, TimeUtilityFunction::new(1.0, -2.0, 1.0).unwrap(), 0.09);
        let b = QueuedTask::initial(2, 0, 0.0, TimeUtilityFunction::new(2.0, -4.0, 1.0).unwrap(), 0.09);
        let pa = priority(&a, 0.0, 0.008, &params());
        let pb = priority(&b, 0.0, 0.008, &params());
        assert!((pb / pa - 2.0).abs() < 1e-9);
    }

    #[test]
    fn utility_dominance_orders_priorities() {
        // Identical G, L, and waiting; pointwise-dominating TUF wins.
        let lo = QueuedTask::initial(1, 0, 0.0, TimeUtilityFunction::new(1.0, -2.0, 1.0).unwrap(), 0.09);
        let hi = QueuedTask::initial(2, 0, 0.0, TimeUtilityFunction::new(2.0, -2.0, 1.0).unwrap(), 0.09);
        for t in [0.0, 0.5, 1.2, 3.0] {
            assert!(
                priority(&hi, t, 0.008, &params()) >= priority(&lo, t, 0.008, &params()),
                "dominance violated at t={t}"
            );
        }
    }

    #[test]
    fn queue_orderings_per_policy() {
        let p = params();
        let mut fcfs = TaskQueue::new(SchedulerPolicy::SegFcfs);
        fcfs.push(normal_task(2, 2.0));
        fcfs.push(normal_task(1, 1.0));
        fcfs.update_all_priorities(2.0, 0.008, &p);
        assert_eq!(fcfs.peek().unwrap().request_id, 1);

        let mut edf = TaskQueue::new(SchedulerPolicy::SegEdf);
        let mut urgent = QueuedTask::initial(7, 0, 0.0, UrgencyClass::urgent().tuf, 0.09);
        urgent.deadline_s = 0.2;
        let mut slow = normal_task(3, 0.0);
        slow.deadline_s = 1.0;
        edf.push(slow);
        edf.push(urgent);
        edf.update_all_priorities(0.0, 0.008, &p);
        assert_eq!(edf.peek().unwrap().request_id, 7);

        let mut pud = TaskQueue::new(SchedulerPolicy::SegPud);
        pud.push(normal_task(1, 0.0));
        pud.push(QueuedTask::initial(2, 0, 0.0, UrgencyClass::urgent().tuf, 0.09));
        pud.update_all_priorities(0.0, 0.008, &p);
        assert_eq!(pud.peek().unwrap().request_id, 2, "urgent outranks normal");
    }

    #[test]
    fn order_flips_as_deadline_passes() {
        let p = params();
        let mut queue = TaskQueue::new(SchedulerPolicy::SegPud);
        // Urgent task: huge priority while salvageable, negative once its
        // utility goes negative.
        queue.push(QueuedTask::initial(1, 0, 0.0, UrgencyClass::urgent().tuf, 0.09));
        queue.push(normal_task(2, 0.0));
        queue.update_all_priorities(0.05, 0.008, &p);
        assert_eq!(queue.peek().unwrap().request_id, 1);
        // Past the urgent cutoff its numerator is negative; the normal task
        // (still pre-deadline) moves ahead.
        queue.update_all_priorities(0.6, 0.008, &p);
        assert_eq!(queue.peek().unwrap().request_id, 2);
    }

    #[test]
    fn empty_queue_update_is_noop() {
        let mut queue = TaskQueue::new(SchedulerPolicy::SegPud);
        queue.update_all_priorities(1.0, 0.008, &params());
        assert!(queue.pop().is_none());
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("seg-pud".parse::<SchedulerPolicy>().unwrap(), SchedulerPolicy::SegPud);
        assert_eq!("FCFS-Batch".parse::<SchedulerPolicy>().unwrap(), SchedulerPolicy::FcfsBatch);
        assert!(matches!(
            "lifo".parse::<SchedulerPolicy>(),
            Err(SchedulerError::UnknownPolicy(_))
        ));
    }

    fn engine_with_running(g: u32, tokens_done: u32, deadline: f64) -> Engine {
        let lib = builtin_library();
        let mut cost = EngineCostModel::default();
        cost.batch_slowdown_gamma = g as f64 / 100.0;
        cost.prefill_ms_per_prompt_token = 0.0;
        let mut engine = Engine::new(cost, 10, false);
        engine.register(1, 0, lib.get(9).unwrap().clone());
        engine.register(2, 1, lib.get(1).unwrap().clone());
        engine.start(1, deadline).unwrap();
        let mut now = 0.0;
        for _ in 0..tokens_done {
            now += engine.step_iteration(now).step_ms / 1000.0;
        }
        engine
    }

    #[test]
    fn admission_worst_case_vs_budget() {
        // Protected generation: 3 of 10 tokens done, speed 21.77 ms/token
        // (plus detok), gamma = 0. WCET = 7 * speed = ~152.4 ms <= 200 ms.
        let engine = engine_with_running(0, 3, 0.2);
        let p = params();
        // Suspended-style candidate (no prefill lump): model it as segment 1.
        let candidate = normal_task(2, 0.0).successor(1, 0.0);
        let now = 0.0;
        match admit_decision(&engine, &p, &candidate, now) {
            AdmitDecision::Admit => {}
            other => panic!("expected admission, got {other:?}"),
        }

        // With batch interference, one more member pushes the worst case
        // past the budget: 152.4 * 1.3 = ~198 ms > 180 ms.
        let engine = engine_with_running(30, 3, 0.18);
        match admit_decision(&engine, &p, &candidate, now) {
            AdmitDecision::RefuseLatency { wcet_ms, budget_ms, .. } => {
                assert!((wcet_ms - 7.0 * (21.77 + 0.0035) * 1.3).abs() < 0.5, "wcet {wcet_ms}");
                assert!((budget_ms - 180.0).abs() < 1e-9);
            }
            other => panic!("expected latency refusal, got {other:?}"),
        }
    }

    #[test]
    fn admission_skips_unsalvageable_generations() {
        // Budget 100 ms cannot fit the 152 ms worst case even without the
        // candidate; refusing admissions cannot save it, so it is skipped
        // and the batch admits.
        let engine = engine_with_running(0, 3, 0.1);
        let candidate = normal_task(2, 0.0).successor(1, 0.0);
        assert!(admit_decision(&engine, &params(), &candidate, 0.0).admitted());
    }

    #[test]
    fn admission_empty_engine_always_admits() {
        let lib = builtin_library();
        let mut engine = Engine::new(EngineCostModel::default(), 10, false);
        engine.register(2, 0, lib.get(1).unwrap().clone());
        let decision = admit_decision(&engine, &params(), &normal_task(2, 0.0), 0.0);
        assert!(decision.admitted());
    }

    #[test]
    fn admission_checks_memory() {
        let lib = builtin_library();
        let mut cost = EngineCostModel::default();
        cost.gpu_memory_mb = 200.0;
        let mut engine = Engine::new(cost, 10, false);
        engine.register(1, 0, lib.get(1).unwrap().clone());
        engine.register(2, 1, lib.get(1).unwrap().clone());
        engine.start(1, f64::INFINITY).unwrap();
        let decision = admit_decision(&engine, &params(), &normal_task(2, 0.0), 0.0);
        assert_eq!(decision, AdmitDecision::RefuseMemory);
    }
}
