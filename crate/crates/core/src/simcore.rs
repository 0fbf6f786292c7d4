//! Deterministic discrete-event simulation loop.
//!
//! Binds the workload generator, the batched engine, the scheduler queue, and
//! the robot-executor agents. The canonical output is the time-sorted
//! [`EventLog`]; every metric derives from it.
//!
//! Simultaneous events process in a fixed precedence order (action ends free
//! agents before iteration results, which precede new arrivals), then by
//! request id, so identical configurations replay byte-identically.

use crate::engine::{Engine, EngineCostModel, EngineError, SkillMatcher, StopRule};
use crate::scheduler::{
    admit_decision, AdmitDecision, QueuedTask, SchedulerParams, SchedulerPolicy, TaskQueue,
};
use crate::tuf::UrgencyKind;
use crate::workload::{
    ArrivalEvent, ExecMode, SkillCall, TaskCategory, TaskTrace, TraceLibrary, WorkloadError,
    WorkloadSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, BTreeMap};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("event log parse error: {0}")]
    LogParse(String),
}

/// Full configuration of one simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub workload: WorkloadSpec,
    pub cost: EngineCostModel,
    /// Token cap per segment; hitting it forces a boundary so the remaining
    /// token bound used by admission control stays sound.
    pub max_segment_tokens: u32,
    /// Drop contexts at suspension and pay a full re-prefill on resume.
    pub kv_cache_disabled: bool,
    pub scheduler: SchedulerParams,
    pub policy: SchedulerPolicy,
    /// Fixed batch cap; `None` selects the policy default (latency-guided
    /// admission for the segmented policies, `scheduler.max_batch_size` for
    /// the FCFS baselines).
    pub fixed_batch_cap: Option<u32>,
    /// Extra simulated time after the arrival window before the run is cut
    /// off as non-quiescent.
    pub drain_s: f64,
}

impl SimConfig {
    pub fn new(workload: WorkloadSpec, policy: SchedulerPolicy) -> Self {
        Self {
            workload,
            cost: EngineCostModel::default(),
            max_segment_tokens: 10,
            kv_cache_disabled: false,
            scheduler: SchedulerParams::default(),
            policy,
            fixed_batch_cap: None,
            drain_s: 120.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.workload
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        self.cost
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        if self.max_segment_tokens == 0 {
            return Err(SimError::Config("max_segment_tokens must be >= 1".into()));
        }
        if let Some(0) = self.fixed_batch_cap {
            return Err(SimError::Config("fixed batch cap must be >= 1".into()));
        }
        if let Some(p) = &self.workload.profiles {
            for tuf in [p.normal.as_ref(), p.urgent.as_ref()].into_iter().flatten() {
                crate::tuf::TimeUtilityFunction::new(tuf.beta, tuf.alpha, tuf.ert_s)
                    .map_err(|e| SimError::Config(e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Simulated-time cutoff.
    pub fn cap_s(&self) -> f64 {
        self.workload.duration_s + self.drain_s
    }
}

/// Engine-side configuration file: the cost model fields at top level plus
/// engine and scheduler knobs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineFileConfig {
    #[serde(flatten)]
    pub cost: EngineCostModel,
    pub max_segment_tokens: Option<u32>,
    pub kv_cache_disabled: Option<bool>,
    pub scheduler: Option<SchedulerParams>,
}

impl EngineFileConfig {
    /// Overlay this file onto a config.
    pub fn apply(&self, config: &mut SimConfig) {
        config.cost = self.cost.clone();
        if let Some(cap) = self.max_segment_tokens {
            config.max_segment_tokens = cap;
        }
        if let Some(disabled) = self.kv_cache_disabled {
            config.kv_cache_disabled = disabled;
        }
        if let Some(sched) = &self.scheduler {
            config.scheduler = sched.clone();
        }
    }
}

/// Event kinds recorded in the canonical log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimEventKind {
    Arrival,
    IterationDone,
    SegmentDispatched,
    ActionStart,
    ActionEnd,
    RequestComplete,
    Suspend,
    Resume,
    AdmissionRefused,
}

impl fmt::Display for SimEventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SimEventKind::Arrival => "arrival",
            SimEventKind::IterationDone => "iteration_done",
            SimEventKind::SegmentDispatched => "segment_dispatched",
            SimEventKind::ActionStart => "action_start",
            SimEventKind::ActionEnd => "action_end",
            SimEventKind::RequestComplete => "request_complete",
            SimEventKind::Suspend => "suspend",
            SimEventKind::Resume => "resume",
            SimEventKind::AdmissionRefused => "admission_refused",
        };
        f.write_str(s)
    }
}

impl FromStr for SimEventKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "arrival" => SimEventKind::Arrival,
            "iteration_done" => SimEventKind::IterationDone,
            "segment_dispatched" => SimEventKind::SegmentDispatched,
            "action_start" => SimEventKind::ActionStart,
            "action_end" => SimEventKind::ActionEnd,
            "request_complete" => SimEventKind::RequestComplete,
            "suspend" => SimEventKind::Suspend,
            "resume" => SimEventKind::Resume,
            "admission_refused" => SimEventKind::AdmissionRefused,
            other => return Err(SimError::LogParse(format!("unknown event kind '{other}'"))),
        })
    }
}

/// One timestamped record in the event log.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub time_s: f64,
    pub kind: SimEventKind,
    pub request_id: Option<u64>,
    pub agent_id: Option<u32>,
    pub payload: serde_json::Value,
}

/// The canonical simulation output.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    pub events: Vec<SimEvent>,
    /// The wall cap was reached with work still pending; the log is partial.
    pub non_quiescent: bool,
}

impl EventLog {
    pub fn iter_kind(&self, kind: SimEventKind) -> impl Iterator<Item = &SimEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// Serialize as CSV `(time_s, kind, request_id, agent_id, payload)`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["time_s", "kind", "request_id", "agent_id", "payload"])
            .expect("header");
        for e in &self.events {
            w.write_record([
                format!("{}", e.time_s),
                e.kind.to_string(),
                e.request_id.map(|r| r.to_string()).unwrap_or_default(),
                e.agent_id.map(|a| a.to_string()).unwrap_or_default(),
                e.payload.to_string(),
            ])
            .expect("record");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn from_csv(content: &str) -> Result<Self, SimError> {
        let mut reader = csv::Reader::from_reader(content.as_bytes());
        let mut events = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| SimError::LogParse(e.to_string()))?;
            let field = |n: usize| record.get(n).unwrap_or_default();
            let parse_err = |what: &str| SimError::LogParse(format!("line {}: {what}", i + 2));
            events.push(SimEvent {
                time_s: field(0).parse().map_err(|_| parse_err("bad time"))?,
                kind: field(1).parse()?,
                request_id: if field(2).is_empty() {
                    None
                } else {
                    Some(field(2).parse().map_err(|_| parse_err("bad request id"))?)
                },
                agent_id: if field(3).is_empty() {
                    None
                } else {
                    Some(field(3).parse().map_err(|_| parse_err("bad agent id"))?)
                },
                payload: serde_json::from_str(field(4))
                    .map_err(|e| parse_err(&format!("bad payload: {e}")))?,
            });
        }
        Ok(Self {
            events,
            non_quiescent: false,
        })
    }
}

// --- Internal event heap -----------------------------------------------------

#[derive(Debug)]
enum Pending {
    ActionEnd {
        request_id: u64,
        segment_index: u32,
        duration_s: f64,
        final_segment: bool,
    },
    ActionStart {
        request_id: u64,
        segment_index: u32,
    },
    EngineStep,
    Arrival {
        request_id: u64,
    },
    /// Scripted-replay wakeup at a scheduled generation start.
    Wake,
}

impl Pending {
    /// Precedence at equal times: free agents, then engine results, then new
    /// demand.
    fn precedence(&self) -> u8 {
        match self {
            Pending::ActionEnd { .. } => 0,
            Pending::ActionStart { .. } => 1,
            Pending::EngineStep => 2,
            Pending::Arrival { .. } => 3,
            Pending::Wake => 4,
        }
    }

    fn request_id(&self) -> u64 {
        match self {
            Pending::ActionEnd { request_id, .. }
            | Pending::ActionStart { request_id, .. }
            | Pending::Arrival { request_id } => *request_id,
            Pending::EngineStep | Pending::Wake => u64::MAX,
        }
    }
}

struct HeapEvent {
    time_s: f64,
    seq: u64,
    pending: Pending,
}

impl PartialEq for HeapEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEvent {}
impl PartialOrd for HeapEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we pop the earliest event.
        other
            .time_s
            .total_cmp(&self.time_s)
            .then(other.pending.precedence().cmp(&self.pending.precedence()))
            .then(other.pending.request_id().cmp(&self.pending.request_id()))
            .then(other.seq.cmp(&self.seq))
    }
}

// --- Runtime state ------------------------------------------------------------

struct AgentState {
    busy_until_s: f64,
}

struct RequestRuntime {
    agent_id: u32,
    trace_id: u32,
    category: TaskCategory,
    base_task: QueuedTask,
    exec_rng: ChaCha8Rng,
    /// Segments handed to the agent so far.
    dispatched_segments: u32,
    /// Estimated end of the last dispatched action (minimum-mode chain).
    est_action_end_s: f64,
    completed: bool,
}

enum AdmissionMode {
    /// Latency-guided admission (the adaptive default for segmented policies).
    Adaptive,
    /// Plain cap on batch size.
    FixedCap(u32),
    /// Replay mode: admit each segment at its scheduled start time.
    Scripted(BTreeMap<(u64, u32), f64>),
}

struct Simulation<'a> {
    policy: SchedulerPolicy,
    stop_rule: StopRule,
    admission: AdmissionMode,
    params: SchedulerParams,
    net_s: f64,
    max_segment_tokens: u32,
    cap_s: f64,
    exec_model: &'a crate::workload::ExecutionTimeModel,
    engine: Engine,
    queue: TaskQueue,
    agents: Vec<AgentState>,
    requests: BTreeMap<u64, RequestRuntime>,
    heap: BinaryHeap<HeapEvent>,
    seq: u64,
    inflight: Option<crate::engine::StepOutcome>,
    log: Vec<SimEvent>,
    completed: usize,
    arrived: usize,
    total_requests: usize,
}

/// Run one simulation to quiescence (or the time cap) and return its log.
pub fn run(config: &SimConfig, library: &TraceLibrary) -> Result<EventLog, SimError> {
    config.validate()?;
    let arrivals = library.compose(&config.workload)?;
    run_with_arrivals(config, library, &arrivals)
}

/// Run with an explicit arrival sequence instead of composing one; used for
/// isolated single-request measurements and tests.
pub fn run_with_arrivals(
    config: &SimConfig,
    library: &TraceLibrary,
    arrivals: &[ArrivalEvent],
) -> Result<EventLog, SimError> {
    config.validate()?;
    let stop_rule = match (config.policy, config.workload.segmentation) {
        (SchedulerPolicy::FcfsBatch, _) => StopRule::None,
        (_, crate::workload::Segmentation::Skill) => {
            StopRule::SkillPattern(SkillMatcher::new(&library.skill_names()))
        }
        (_, crate::workload::Segmentation::Sentence) => StopRule::Sentence,
        (_, crate::workload::Segmentation::Paragraph) => StopRule::Paragraph,
    };
    let admission = match (config.policy.adaptive_admission(), config.fixed_batch_cap) {
        (true, None) => AdmissionMode::Adaptive,
        (_, Some(cap)) => AdmissionMode::FixedCap(cap),
        (false, None) => AdmissionMode::FixedCap(config.scheduler.max_batch_size),
    };
    let mut sim = Simulation::new(config, library, arrivals, stop_rule, admission)?;
    Ok(sim.run())
}

impl<'a> Simulation<'a> {
    fn new(
        config: &SimConfig,
        library: &'a TraceLibrary,
        arrivals: &[ArrivalEvent],
        stop_rule: StopRule,
        admission: AdmissionMode,
    ) -> Result<Self, SimError> {
        let mut engine = Engine::new(
            config.cost.clone(),
            config.max_segment_tokens,
            config.kv_cache_disabled,
        );
        let mut heap = BinaryHeap::new();
        let mut requests = BTreeMap::new();
        let mut seq = 0u64;
        for (i, arrival) in arrivals.iter().enumerate() {
            let request_id = i as u64;
            let mut trace = library
                .get(arrival.trace_id)
                .ok_or(WorkloadError::UnknownTrace(arrival.trace_id))?
                .clone();
            if let Some(profiles) = &config.workload.profiles {
                let replacement = match trace.urgency.kind {
                    UrgencyKind::Normal => profiles.normal,
                    UrgencyKind::Urgent => profiles.urgent,
                };
                if let Some(tuf) = replacement {
                    trace.urgency.tuf = tuf;
                }
            }
            let base_task = QueuedTask::initial(
                request_id,
                arrival.agent_id,
                arrival.time_s,
                trace.urgency.tuf,
                config.scheduler.gen_estimate_for(trace.trace_id),
            );
            requests.insert(
                request_id,
                RequestRuntime {
                    agent_id: arrival.agent_id,
                    trace_id: trace.trace_id,
                    category: trace.category,
                    base_task,
                    exec_rng: ChaCha8Rng::seed_from_u64(
                        config.workload.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(request_id + 1)),
                    ),
                    dispatched_segments: 0,
                    est_action_end_s: f64::NEG_INFINITY,
                    completed: false,
                },
            );
            engine.register(request_id, arrival.agent_id, trace);
            heap.push(HeapEvent {
                time_s: arrival.time_s,
                seq,
                pending: Pending::Arrival { request_id },
            });
            seq += 1;
        }
        let agents = (0..config.workload.agent_count)
            .map(|_| AgentState {
                busy_until_s: f64::NEG_INFINITY,
            })
            .collect();
        let total_requests = arrivals.len();
        Ok(Self {
            policy: config.policy,
            stop_rule,
            admission,
            params: config.scheduler.clone(),
            net_s: config.cost.network_latency_s(),
            max_segment_tokens: config.max_segment_tokens,
            cap_s: config.cap_s(),
            exec_model: library.model(),
            engine,
            queue: TaskQueue::new(config.policy),
            agents,
            requests,
            heap,
            seq,
            inflight: None,
            log: Vec::new(),
            completed: 0,
            arrived: 0,
            total_requests,
        })
    }

    fn push(&mut self, time_s: f64, pending: Pending) {
        self.heap.push(HeapEvent {
            time_s,
            seq: self.seq,
            pending,
        });
        self.seq += 1;
    }

    fn log(
        &mut self,
        time_s: f64,
        kind: SimEventKind,
        request_id: Option<u64>,
        agent_id: Option<u32>,
        payload: serde_json::Value,
    ) {
        self.log.push(SimEvent {
            time_s,
            kind,
            request_id,
            agent_id,
            payload,
        });
    }

    fn run(&mut self) -> EventLog {
        let mut truncated = false;
        while let Some(event) = self.heap.pop() {
            let now = event.time_s;
            if now > self.cap_s {
                truncated = true;
                break;
            }
            match event.pending {
                Pending::Arrival { request_id } => self.on_arrival(request_id, now),
                Pending::EngineStep => self.on_engine_step(now),
                Pending::ActionStart {
                    request_id,
                    segment_index,
                } => {
                    let agent = self.requests[&request_id].agent_id;
                    self.log(
                        now,
                        SimEventKind::ActionStart,
                        Some(request_id),
                        Some(agent),
                        json!({ "segment_index": segment_index }),
                    );
                }
                Pending::ActionEnd {
                    request_id,
                    segment_index,
                    duration_s,
                    final_segment,
                } => self.on_action_end(request_id, segment_index, duration_s, final_segment, now),
                Pending::Wake => self.schedule_point(now),
            }
        }
        let non_quiescent = truncated && self.completed < self.total_requests;
        EventLog {
            events: std::mem::take(&mut self.log),
            non_quiescent,
        }
    }

    fn on_arrival(&mut self, request_id: u64, now: f64) {
        let runtime = &self.requests[&request_id];
        let payload = json!({
            "trace_id": runtime.trace_id,
            "category": runtime.category.to_string(),
            "tuf": runtime.base_task.tuf,
        });
        let agent = runtime.agent_id;
        let task = runtime.base_task.clone();
        self.arrived += 1;
        self.log(now, SimEventKind::Arrival, Some(request_id), Some(agent), payload);
        self.queue.push(task);
        if self.inflight.is_none() {
            self.schedule_point(now);
        }
    }

    /// An iteration completed: log it, run the stop checker on every emission,
    /// then admit from the queue and launch the next iteration.
    fn on_engine_step(&mut self, now: f64) {
        let outcome = self.inflight.take().expect("engine step without iteration");
        self.log(
            now,
            SimEventKind::IterationDone,
            None,
            None,
            json!({
                "batch": outcome.emissions.iter().map(|e| e.request_id).collect::<Vec<_>>(),
                "step_ms": outcome.step_ms,
                "free_gpu_mb": self.engine.free_gpu_memory_mb(),
            }),
        );
        for emission in &outcome.emissions {
            let request_id = emission.request_id;
            let mut boundary =
                self.engine
                    .check_boundary(request_id, &self.stop_rule, &emission.fragment);
            if boundary.is_none() && self.policy.suspends() {
                let gen = self.engine.state(request_id).expect("running state");
                if gen.tokens_in_current_segment >= self.max_segment_tokens {
                    boundary = Some(self.engine.force_boundary(request_id));
                }
            }
            if let Some(boundary) = boundary {
                self.on_boundary(request_id, boundary, now);
            }
        }
        self.schedule_point(now);
    }

    fn on_boundary(&mut self, request_id: u64, boundary: crate::engine::SegmentBoundary, now: f64) {
        let segment_index = self.requests[&request_id].dispatched_segments;
        if boundary.end_of_plan {
            self.engine.finish(request_id).expect("finish running generation");
        } else if self.policy.suspends() {
            let receipt = self.engine.suspend(request_id, now).expect("suspend running");
            let gen_tokens = self.engine.state(request_id).map(|g| g.tokens_emitted_total);
            self.log(
                now,
                SimEventKind::Suspend,
                Some(request_id),
                None,
                json!({
                    "segment_index": segment_index,
                    "kv_mb": receipt.kv_size_mb,
                    "kv_dropped": self.engine.kv_cache_disabled,
                    "tokens": gen_tokens,
                    "snapshot_bytes": receipt.snapshot_bytes,
                    "free_gpu_mb": self.engine.free_gpu_memory_mb(),
                }),
            );
        }
        // Dispatch the completed skills for execution.
        let skills = boundary.skills.clone();
        let agent_id = self.requests[&request_id].agent_id;
        self.log(
            now,
            SimEventKind::SegmentDispatched,
            Some(request_id),
            Some(agent_id),
            json!({
                "segment_index": segment_index,
                "skills": skills.iter().map(|s| s.rendered_text()).collect::<Vec<_>>(),
                "end_of_plan": boundary.end_of_plan,
                "forced": boundary.forced,
                "free_gpu_mb": self.engine.free_gpu_memory_mb(),
            }),
        );
        self.dispatch_to_agent(request_id, &skills, now, boundary.end_of_plan);

        // Re-queue the remainder of a suspended generation with an
        // execution-aware deadline.
        if !boundary.end_of_plan && self.policy.suspends() {
            let min_exec: f64 = self
                .exec_model
                .estimate_segment(&skills)
                .expect("library skills are known");
            let runtime = self.requests.get_mut(&request_id).expect("request exists");
            runtime.est_action_end_s = runtime.est_action_end_s.max(now) + min_exec;
            let successor = runtime
                .base_task
                .successor(segment_index + 1, runtime.est_action_end_s);
            self.queue.push(successor);
        }
    }

    fn dispatch_to_agent(&mut self, request_id: u64, skills: &[SkillCall], now: f64, last: bool) {
        let runtime = self.requests.get_mut(&request_id).expect("request exists");
        let segment_index = runtime.dispatched_segments;
        runtime.dispatched_segments += 1;
        let mut duration_s = 0.0;
        for skill in skills {
            duration_s += self
                .exec_model
                .sample(skill, ExecMode::Sample, &mut runtime.exec_rng)
                .expect("library skills are known");
        }
        let agent = &mut self.agents[runtime.agent_id as usize];
        // Network latency hides behind a still-running previous action.
        let start_s = (now + self.net_s).max(agent.busy_until_s);
        agent.busy_until_s = start_s + duration_s;
        self.push(
            start_s,
            Pending::ActionStart {
                request_id,
                segment_index,
            },
        );
        self.push(
            start_s + duration_s,
            Pending::ActionEnd {
                request_id,
                segment_index,
                duration_s,
                final_segment: last,
            },
        );
    }

    fn on_action_end(
        &mut self,
        request_id: u64,
        segment_index: u32,
        duration_s: f64,
        final_segment: bool,
        now: f64,
    ) {
        let agent = self.requests[&request_id].agent_id;
        self.log(
            now,
            SimEventKind::ActionEnd,
            Some(request_id),
            Some(agent),
            json!({ "segment_index": segment_index, "duration_s": duration_s }),
        );
        if final_segment {
            let runtime = self.requests.get_mut(&request_id).expect("request exists");
            runtime.completed = true;
            self.completed += 1;
            self.log(
                now,
                SimEventKind::RequestComplete,
                Some(request_id),
                Some(agent),
                json!({ "segments": segment_index + 1 }),
            );
        }
    }

    /// A scheduling point: refresh priorities, admit from the queue head while
    /// the admission rule allows, then launch the next iteration.
    fn schedule_point(&mut self, now: f64) {
        if self.inflight.is_some() {
            // Mid-iteration wake (scripted replay drift guard); the pending
            // step will reschedule.
            return;
        }
        self.queue.update_all_priorities(now, self.net_s, &self.params);
        let mut restore_total_ms = 0.0;
        loop {
            // Scripted replays admit whichever queued segment is due now,
            // regardless of the policy order.
            let scripted_due = match &self.admission {
                AdmissionMode::Scripted(starts) => {
                    if self.engine.batch_len() > 0 {
                        break;
                    }
                    let due = self.queue.pop_matching(|t| {
                        starts
                            .get(&(t.request_id, t.segment_index))
                            .is_some_and(|s| *s <= now + 1e-9)
                    });
                    match due {
                        Some(task) => Some(task),
                        None => break,
                    }
                }
                _ => None,
            };
            let (decision, head_id) = if let Some(task) = &scripted_due {
                (AdmitDecision::Admit, task.request_id)
            } else {
                let Some(head) = self.queue.peek() else { break };
                let decision = match &self.admission {
                    AdmissionMode::Adaptive => {
                        admit_decision(&self.engine, &self.params, head, now)
                    }
                    AdmissionMode::FixedCap(cap) => {
                        if self.engine.batch_len() >= *cap as usize {
                            break;
                        } else if self.engine.can_fit(head.request_id) {
                            AdmitDecision::Admit
                        } else {
                            AdmitDecision::RefuseMemory
                        }
                    }
                    AdmissionMode::Scripted(_) => unreachable!("handled above"),
                };
                (decision, head.request_id)
            };
            match decision {
                AdmitDecision::Admit => {
                    let task = match scripted_due {
                        Some(task) => task,
                        None => self.queue.pop().expect("peeked head"),
                    };
                    let initial = task.segment_index == 0;
                    let from = match self.engine.state(task.request_id).map(|g| g.kv_location) {
                        _ if initial => "new",
                        Some(crate::engine::KvLocation::Gpu) => "gpu",
                        Some(crate::engine::KvLocation::Host) => "host",
                        _ => "none",
                    };
                    let charge = if initial {
                        self.engine.start(task.request_id, task.deadline_s)
                    } else {
                        self.engine.resume(task.request_id, task.deadline_s)
                    }
                    .expect("admission was checked");
                    restore_total_ms += charge.restore_ms;
                    self.log(
                        now,
                        SimEventKind::Resume,
                        Some(task.request_id),
                        None,
                        json!({
                            "segment_index": task.segment_index,
                            "initial": initial,
                            "from": from,
                            "restore_ms": charge.restore_ms,
                            "evicted": charge.evicted,
                            "free_gpu_mb": self.engine.free_gpu_memory_mb(),
                            "priority": task.priority,
                            "deadline_s": task.deadline_s,
                        }),
                    );
                }
                AdmitDecision::RefuseLatency {
                    protected_request,
                    wcet_ms,
                    budget_ms,
                } => {
                    self.log(
                        now,
                        SimEventKind::AdmissionRefused,
                        Some(head_id),
                        None,
                        json!({
                            "reason": "latency",
                            "protected_request": protected_request,
                            "wcet_ms": wcet_ms,
                            "budget_ms": budget_ms,
                        }),
                    );
                    break;
                }
                AdmitDecision::RefuseMemory => {
                    self.log(
                        now,
                        SimEventKind::AdmissionRefused,
                        Some(head_id),
                        None,
                        json!({
                            "reason": "memory",
                            "free_gpu_mb": self.engine.free_gpu_memory_mb(),
                        }),
                    );
                    break;
                }
            }
        }
        if self.engine.batch_len() > 0 {
            let start_s = now + restore_total_ms / 1000.0;
            let outcome = self.engine.step_iteration(start_s);
            let done_s = start_s + outcome.step_ms / 1000.0;
            self.inflight = Some(outcome);
            self.push(done_s, Pending::EngineStep);
        }
    }
}

// --- Scripted replay ----------------------------------------------------------

/// A fully scripted run: per-request arrival times and per-segment generation
/// start times on a single-server engine with zero overheads. Used to replay
/// brute-force schedules through the same event loop.
#[derive(Debug, Clone)]
pub struct ScriptedRun {
    /// One trace per request, in request-id order.
    pub traces: Vec<TaskTrace>,
    pub arrival_s: Vec<f64>,
    /// `starts[r][k]` = scheduled generation start of request r's segment k.
    pub starts: Vec<Vec<f64>>,
    pub tick_s: f64,
}

/// Replay a scripted schedule through the simulation loop at batch size 1
/// with zero network, detokenization, prefill, and restore costs.
pub fn run_scripted(run: &ScriptedRun) -> Result<EventLog, SimError> {
    let library = TraceLibrary::from_traces(run.traces.clone())?;
    let cost = EngineCostModel {
        decode_ms_per_token: run.tick_s * 1000.0,
        prefill_ms_per_prompt_token: 0.0,
        batch_slowdown_gamma: 0.0,
        kv_mb_per_request: 1.0,
        gpu_memory_mb: 1e9,
        swap_restore_ms: 0.0,
        reprefill_ms: 0.001,
        detok_ms_per_token: 0.0,
        network_latency_ms: 0.0,
    };
    let mut starts = BTreeMap::new();
    let mut wakes = Vec::new();
    for (r, segs) in run.starts.iter().enumerate() {
        for (k, start) in segs.iter().enumerate() {
            starts.insert((r as u64, k as u32), *start);
            wakes.push(*start);
        }
    }
    let horizon = wakes.iter().copied().fold(0.0f64, f64::max) + 1.0;
    let workload = WorkloadSpec {
        events_per_second: 1.0,
        max_tasks_per_event: 1,
        trace_pool: run.traces.iter().map(|t| t.trace_id).collect(),
        agent_count: run.traces.len().max(1) as u32,
        duration_s: horizon,
        seed: 0,
        segmentation: crate::workload::Segmentation::Skill,
        traces_path: None,
        profiles: None,
    };
    let mut config = SimConfig::new(workload, SchedulerPolicy::SegPud);
    config.cost = cost;
    config.max_segment_tokens = u32::MAX;
    config.drain_s = 1e6;
    let arrivals: Vec<ArrivalEvent> = run
        .arrival_s
        .iter()
        .enumerate()
        .map(|(r, t)| ArrivalEvent {
            time_s: *t,
            agent_id: r as u32,
            trace_id: run.traces[r].trace_id,
        })
        .collect();
    let stop_rule = StopRule::SkillPattern(SkillMatcher::new(&library.skill_names()));
    let mut sim = Simulation::new(
        &config,
        &library,
        &arrivals,
        stop_rule,
        AdmissionMode::Scripted(starts),
    )?;
    for wake in wakes {
        sim.push(wake, Pending::Wake);
    }
    Ok(sim.run())
}
