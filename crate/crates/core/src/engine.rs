//! Simulated LLM inference engine.
//!
//! Token-granular continuous batching over scripted plans: every running
//! generation advances one token per iteration, iteration latency follows a
//! calibrated cost model (per-token decode time, linear batch interference,
//! prefill charged as a lump on a generation's first iteration), and the
//! content-aware stop checker delimits segments. Suspended generations keep
//! their KV cache and token snapshot; contexts are evicted to host memory
//! oldest-first only when an admission needs GPU memory, and pay a fixed
//! restore cost on resume.

use crate::workload::{ScriptedPlan, SkillCall, TaskTrace};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use thiserror::Error;

/// Fixed accounting size of a token-id snapshot: survey of a tuple-of-ints
/// runtime representation, 40-byte header plus 8 bytes per token id.
const SNAPSHOT_HEADER_BYTES: u64 = 40;
const SNAPSHOT_BYTES_PER_TOKEN: u64 = 8;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("request {0} not registered")]
    UnknownRequest(u64),
    #[error("out of GPU memory: need {need_mb:.2} MB, available {available_mb:.2} MB")]
    OutOfMemory { need_mb: f64, available_mb: f64 },
    #[error("invalid cost model: {0}")]
    InvalidCostModel(String),
    #[error("request {0} is in state {1:?}, expected {2:?}")]
    WrongState(u64, GenStatus, GenStatus),
}

/// Calibrated latency and memory parameters of the simulated engine.
///
/// Times are milliseconds, memory is megabytes. Defaults reflect an 8B-class
/// model in half precision on a single 24 GB consumer GPU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineCostModel {
    /// Per-token decode latency at batch size 1.
    pub decode_ms_per_token: f64,
    /// Prefill cost per prompt token, charged on the first iteration.
    pub prefill_ms_per_prompt_token: f64,
    /// Linear iteration-latency growth per extra batch member.
    pub batch_slowdown_gamma: f64,
    /// KV cache footprint of one request's context.
    pub kv_mb_per_request: f64,
    /// GPU memory available for KV contexts.
    pub gpu_memory_mb: f64,
    /// Host-to-GPU context restore cost for an evicted context.
    pub swap_restore_ms: f64,
    /// Full re-prefill cost when context caching is disabled.
    pub reprefill_ms: f64,
    /// Incremental detokenization cost per emitted token.
    pub detok_ms_per_token: f64,
    /// One-way network latency between server and agent.
    pub network_latency_ms: f64,
}

impl Default for EngineCostModel {
    fn default() -> Self {
        Self {
            decode_ms_per_token: 21.77,
            prefill_ms_per_prompt_token: 0.1139,
            batch_slowdown_gamma: 0.1,
            kv_mb_per_request: 170.35,
            gpu_memory_mb: 1024.0,
            swap_restore_ms: 9.50,
            reprefill_ms: 133.31,
            detok_ms_per_token: 0.0035,
            network_latency_ms: 8.0,
        }
    }
}

impl EngineCostModel {
    pub fn validate(&self) -> Result<(), EngineError> {
        let fields = [
            ("decode_ms_per_token", self.decode_ms_per_token),
            ("prefill_ms_per_prompt_token", self.prefill_ms_per_prompt_token),
            ("batch_slowdown_gamma", self.batch_slowdown_gamma),
            ("kv_mb_per_request", self.kv_mb_per_request),
            ("gpu_memory_mb", self.gpu_memory_mb),
            ("swap_restore_ms", self.swap_restore_ms),
            ("reprefill_ms", self.reprefill_ms),
            ("detok_ms_per_token", self.detok_ms_per_token),
            ("network_latency_ms", self.network_latency_ms),
        ];
        for (name, value) in fields {
            if !value.is_finite() || value < 0.0 {
                return Err(EngineError::InvalidCostModel(format!(
                    "{name} must be finite and >= 0, got {value}"
                )));
            }
        }
        if self.swap_restore_ms >= self.reprefill_ms {
            return Err(EngineError::InvalidCostModel(format!(
                "swap_restore_ms ({}) must be < reprefill_ms ({}); otherwise \
                 keeping the KV cache never pays off",
                self.swap_restore_ms, self.reprefill_ms
            )));
        }
        Ok(())
    }

    pub fn network_latency_s(&self) -> f64 {
        self.network_latency_ms / 1000.0
    }
}

/// Where a generation's KV context currently lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KvLocation {
    Gpu,
    Host,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenStatus {
    Queued,
    Running,
    Suspended,
    Finished,
}

/// One request's in-flight decoding state.
#[derive(Debug, Clone)]
pub struct GenerationState {
    pub request_id: u64,
    pub agent_id: u32,
    /// Segment currently being (or about to be) generated; increments by
    /// exactly one at each suspension.
    pub segment_index: u32,
    pub tokens_emitted_total: u32,
    pub tokens_in_current_segment: u32,
    /// Position in the scripted token stream.
    pub plan_cursor: u32,
    pub kv_location: KvLocation,
    pub kv_size_mb: f64,
    pub status: GenStatus,
    /// Recent (time, total tokens) samples for generation-speed estimation.
    /// Cleared at suspension so stale gaps never inflate the estimate.
    pub recent_token_times: VecDeque<(f64, u32)>,
    /// Absolute deadline of the segment being decoded, set at admission.
    pub deadline_s: f64,
    pub prompt_tokens: u32,
    needs_prefill: bool,
    segment_text: String,
    /// Skills already handed to the agent.
    pub skills_dispatched: usize,
    suspended_at: f64,
}

impl GenerationState {
    fn new(request_id: u64, agent_id: u32, prompt_tokens: u32) -> Self {
        Self {
            request_id,
            agent_id,
            segment_index: 0,
            tokens_emitted_total: 0,
            tokens_in_current_segment: 0,
            plan_cursor: 0,
            kv_location: KvLocation::None,
            kv_size_mb: 0.0,
            status: GenStatus::Queued,
            recent_token_times: VecDeque::new(),
            deadline_s: f64::INFINITY,
            prompt_tokens,
            needs_prefill: true,
            segment_text: String::new(),
            skills_dispatched: 0,
            suspended_at: 0.0,
        }
    }

    /// Mean per-token latency (ms) over the last `window` emitted tokens, if
    /// at least two samples exist.
    pub fn recent_speed_ms_per_token(&self, window: u32) -> Option<f64> {
        let len = self.recent_token_times.len();
        let first_idx = len.saturating_sub(window as usize + 1);
        let first = self.recent_token_times.get(first_idx)?;
        let last = self.recent_token_times.back()?;
        let tokens = last.1.saturating_sub(first.1);
        if tokens == 0 {
            return None;
        }
        Some((last.0 - first.0) * 1000.0 / tokens as f64)
    }

    pub fn accumulated_segment_text(&self) -> &str {
        &self.segment_text
    }
}

/// Content rule that decides where a segment ends.
#[derive(Debug, Clone)]
pub enum StopRule {
    /// Suspend when the segment text completes a call to any known skill.
    SkillPattern(SkillMatcher),
    /// Suspend at terminal punctuation.
    Sentence,
    /// Suspend at a blank line.
    Paragraph,
    /// Only the end of the plan is a boundary.
    None,
}

/// Regex matcher over the workload's skill set, e.g. `mf(50);`.
#[derive(Debug, Clone)]
pub struct SkillMatcher {
    regex: Regex,
}

impl SkillMatcher {
    pub fn new(skill_names: &[String]) -> Self {
        assert!(!skill_names.is_empty(), "skill pattern set must be nonempty");
        let alternatives = skill_names
            .iter()
            .map(|n| regex::escape(n))
            .collect::<Vec<_>>()
            .join("|");
        let regex = Regex::new(&format!(r"(?:{alternatives})\([^()]*\);")).expect("valid pattern");
        Self { regex }
    }

    /// Number of complete skill calls in `text`.
    pub fn count_complete(&self, text: &str) -> usize {
        self.regex.find_iter(text).count()
    }
}

/// A detected segment boundary and the skills it releases for execution.
#[derive(Debug, Clone)]
pub struct SegmentBoundary {
    pub skills: Vec<SkillCall>,
    pub end_of_plan: bool,
    /// Boundary was forced by the segment token cap, not by content.
    pub forced: bool,
}

/// Apply the stop rule to a generation after `new_fragment` was emitted.
///
/// The fragment is appended to the generation's accumulated segment text; a
/// boundary carries every fully generated, not-yet-dispatched skill.
pub fn check_segment_boundary(
    rule: &StopRule,
    gen: &mut GenerationState,
    trace: &TaskTrace,
    plan: &ScriptedPlan,
    new_fragment: &str,
) -> Option<SegmentBoundary> {
    gen.segment_text.push_str(new_fragment);
    let end_of_plan = gen.plan_cursor >= plan.total_tokens();
    let content_boundary = match rule {
        StopRule::SkillPattern(matcher) => matcher.count_complete(&gen.segment_text) > 0,
        StopRule::Sentence => new_fragment.contains(['.', '!', '?']),
        StopRule::Paragraph => gen.segment_text.contains("\n\n"),
        StopRule::None => false,
    };
    if !end_of_plan && !content_boundary {
        return None;
    }
    let completed = plan.skills_completed(gen.plan_cursor);
    let skills = trace.plan[gen.skills_dispatched..completed].to_vec();
    gen.skills_dispatched = completed;
    gen.segment_text.clear();
    Some(SegmentBoundary {
        skills,
        end_of_plan,
        forced: false,
    })
}

/// Force a boundary at the segment token cap when no content boundary
/// appeared. Keeps the remaining-token bound used by admission control sound.
pub fn force_cap_boundary(
    gen: &mut GenerationState,
    trace: &TaskTrace,
    plan: &ScriptedPlan,
) -> SegmentBoundary {
    let completed = plan.skills_completed(gen.plan_cursor);
    let skills = trace.plan[gen.skills_dispatched..completed].to_vec();
    gen.skills_dispatched = completed;
    gen.segment_text.clear();
    SegmentBoundary {
        skills,
        end_of_plan: gen.plan_cursor >= plan.total_tokens(),
        forced: true,
    }
}

/// One token produced by an iteration.
#[derive(Debug, Clone)]
pub struct TokenEmission {
    pub request_id: u64,
    pub token_index: u32,
    pub fragment: String,
    pub end_of_plan: bool,
}

/// Outcome of one decoding iteration.
#[derive(Debug)]
pub struct StepOutcome {
    pub emissions: Vec<TokenEmission>,
    /// Wall time of the iteration including incremental detokenization.
    pub step_ms: f64,
}

/// Receipt for a suspension: what was retained for later resumption.
#[derive(Debug, Clone, PartialEq)]
pub struct SuspendReceipt {
    pub kv_size_mb: f64,
    /// Exact token-id sequence; resumption never re-tokenizes.
    pub token_snapshot: Vec<u32>,
    pub snapshot_bytes: u64,
}

/// Charge incurred by starting or resuming a generation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdmitCharge {
    pub restore_ms: f64,
    /// Suspended contexts pushed to host memory to make room.
    pub evicted: Vec<u64>,
}

struct RequestScript {
    trace: TaskTrace,
    plan: ScriptedPlan,
}

/// The simulated engine: running batch, suspended contexts, GPU memory.
pub struct Engine {
    cost: EngineCostModel,
    pub max_segment_tokens: u32,
    pub kv_cache_disabled: bool,
    scripts: BTreeMap<u64, RequestScript>,
    states: BTreeMap<u64, GenerationState>,
    running: Vec<u64>,
    iterations: u64,
    busy_decode_ms: f64,
    busy_detok_ms: f64,
    busy_restore_ms: f64,
}

impl Engine {
    pub fn new(cost: EngineCostModel, max_segment_tokens: u32, kv_cache_disabled: bool) -> Self {
        Self {
            cost,
            max_segment_tokens,
            kv_cache_disabled,
            scripts: BTreeMap::new(),
            states: BTreeMap::new(),
            running: Vec::new(),
            iterations: 0,
            busy_decode_ms: 0.0,
            busy_detok_ms: 0.0,
            busy_restore_ms: 0.0,
        }
    }

    pub fn cost(&self) -> &EngineCostModel {
        &self.cost
    }

    /// Register a request's scripted plan; the generation starts `Queued`.
    pub fn register(&mut self, request_id: u64, agent_id: u32, trace: TaskTrace) {
        let plan = ScriptedPlan::from_trace(&trace);
        self.states.insert(
            request_id,
            GenerationState::new(request_id, agent_id, trace.prompt_tokens),
        );
        self.scripts.insert(request_id, RequestScript { trace, plan });
    }

    pub fn state(&self, request_id: u64) -> Option<&GenerationState> {
        self.states.get(&request_id)
    }

    pub fn trace(&self, request_id: u64) -> Option<&TaskTrace> {
        self.scripts.get(&request_id).map(|s| &s.trace)
    }

    pub fn batch_len(&self) -> usize {
        self.running.len()
    }

    pub fn running_ids(&self) -> &[u64] {
        &self.running
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    /// Total engine busy time: iterations (decode + detokenization) plus
    /// context restores.
    pub fn busy_ms(&self) -> f64 {
        self.busy_decode_ms + self.busy_detok_ms + self.busy_restore_ms
    }

    pub fn busy_decode_ms(&self) -> f64 {
        self.busy_decode_ms
    }

    /// Segmentation overhead component of busy time: incremental
    /// detokenization for stop checking plus context save/restore.
    pub fn overhead_ms(&self) -> f64 {
        self.busy_detok_ms + self.busy_restore_ms
    }

    /// Iteration latency for the current running batch, including prefill
    /// lumps for members in their first iteration (excludes detokenization).
    pub fn iteration_latency_ms(&self) -> f64 {
        assert!(!self.running.is_empty(), "no iteration without a batch");
        let mut ms = self.decode_iteration_ms(self.running.len());
        for id in &self.running {
            let gen = &self.states[id];
            if gen.needs_prefill {
                ms += self.cost.prefill_ms_per_prompt_token * gen.prompt_tokens as f64;
            }
        }
        ms
    }

    /// Pure decode latency of an iteration at `batch` members.
    pub fn decode_iteration_ms(&self, batch: usize) -> f64 {
        self.cost.decode_ms_per_token
            * (1.0 + self.cost.batch_slowdown_gamma * (batch as f64 - 1.0))
    }

    /// Advance every running generation one token. `now` is the iteration
    /// start time; emissions are timestamped at `now + step_ms / 1000`.
    pub fn step_iteration(&mut self, now: f64) -> StepOutcome {
        let iter_ms = self.iteration_latency_ms();
        let detok_ms = self.cost.detok_ms_per_token * self.running.len() as f64;
        let step_ms = iter_ms + detok_ms;
        let done = now + step_ms / 1000.0;

        let mut emissions = Vec::with_capacity(self.running.len());
        for id in &self.running {
            let script = &self.scripts[id];
            let gen = self.states.get_mut(id).expect("running state exists");
            let token_index = gen.plan_cursor;
            let fragment = script.plan.fragments[token_index as usize].clone();
            gen.plan_cursor += 1;
            gen.tokens_emitted_total += 1;
            gen.tokens_in_current_segment += 1;
            gen.needs_prefill = false;
            gen.recent_token_times.push_back((done, gen.tokens_emitted_total));
            while gen.recent_token_times.len() > 9 {
                gen.recent_token_times.pop_front();
            }
            emissions.push(TokenEmission {
                request_id: *id,
                token_index,
                fragment,
                end_of_plan: gen.plan_cursor >= script.plan.total_tokens(),
            });
        }
        self.iterations += 1;
        self.busy_decode_ms += iter_ms;
        self.busy_detok_ms += detok_ms;
        StepOutcome { emissions, step_ms }
    }

    /// Run the stop rule against a freshly emitted fragment.
    pub fn check_boundary(
        &mut self,
        request_id: u64,
        rule: &StopRule,
        fragment: &str,
    ) -> Option<SegmentBoundary> {
        let script = &self.scripts[&request_id];
        let gen = self.states.get_mut(&request_id).expect("state exists");
        check_segment_boundary(rule, gen, &script.trace, &script.plan, fragment)
    }

    /// Force a cap boundary for a generation that filled its segment budget.
    pub fn force_boundary(&mut self, request_id: u64) -> SegmentBoundary {
        let script = &self.scripts[&request_id];
        let gen = self.states.get_mut(&request_id).expect("state exists");
        force_cap_boundary(gen, &script.trace, &script.plan)
    }

    /// GPU memory not occupied by resident contexts.
    pub fn free_gpu_memory_mb(&self) -> f64 {
        self.cost.gpu_memory_mb - self.resident_kv_mb()
    }

    pub fn resident_kv_mb(&self) -> f64 {
        self.states
            .values()
            .filter(|g| g.kv_location == KvLocation::Gpu)
            .map(|g| g.kv_size_mb)
            .sum()
    }

    /// KV the candidate would need on admission, given its current state.
    pub fn admission_kv_need_mb(&self, request_id: u64) -> f64 {
        match self.states.get(&request_id) {
            Some(g) if g.kv_location == KvLocation::Gpu => 0.0,
            Some(_) => self.cost.kv_mb_per_request,
            None => self.cost.kv_mb_per_request,
        }
    }

    /// Whether an admission could be satisfied, counting lazily evictable
    /// suspended contexts as reclaimable.
    pub fn can_fit(&self, request_id: u64) -> bool {
        let need = self.admission_kv_need_mb(request_id);
        let evictable: f64 = self
            .states
            .values()
            .filter(|g| {
                g.status == GenStatus::Suspended
                    && g.kv_location == KvLocation::Gpu
                    && g.request_id != request_id
            })
            .map(|g| g.kv_size_mb)
            .sum();
        self.free_gpu_memory_mb() + evictable + 1e-9 >= need
    }

    /// Evict suspended GPU-resident contexts (oldest suspension first) until
    /// `need_mb` fits. Returns evicted ids, or an error if impossible.
    fn make_room(&mut self, need_mb: f64, protect: u64) -> Result<Vec<u64>, EngineError> {
        let mut evicted = Vec::new();
        if self.free_gpu_memory_mb() + 1e-9 >= need_mb {
            return Ok(evicted);
        }
        let mut candidates: Vec<(f64, u64)> = self
            .states
            .values()
            .filter(|g| {
                g.status == GenStatus::Suspended
                    && g.kv_location == KvLocation::Gpu
                    && g.request_id != protect
            })
            .map(|g| (g.suspended_at, g.request_id))
            .collect();
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, id) in candidates {
            if self.free_gpu_memory_mb() + 1e-9 >= need_mb {
                break;
            }
            let gen = self.states.get_mut(&id).expect("candidate exists");
            gen.kv_location = KvLocation::Host;
            evicted.push(id);
        }
        if self.free_gpu_memory_mb() + 1e-9 >= need_mb {
            Ok(evicted)
        } else {
            Err(EngineError::OutOfMemory {
                need_mb,
                available_mb: self.free_gpu_memory_mb(),
            })
        }
    }

    /// Start a queued generation (first segment; prefill runs on its first
    /// iteration). Allocates the request's KV context.
    pub fn start(&mut self, request_id: u64, deadline_s: f64) -> Result<AdmitCharge, EngineError> {
        let status = self
            .states
            .get(&request_id)
            .ok_or(EngineError::UnknownRequest(request_id))?
            .status;
        if status != GenStatus::Queued {
            return Err(EngineError::WrongState(request_id, status, GenStatus::Queued));
        }
        let need = self.cost.kv_mb_per_request;
        let evicted = self.make_room(need, request_id)?;
        let gen = self.states.get_mut(&request_id).expect("state exists");
        gen.kv_location = KvLocation::Gpu;
        gen.kv_size_mb = need;
        gen.status = GenStatus::Running;
        gen.deadline_s = deadline_s;
        self.running.push(request_id);
        Ok(AdmitCharge {
            restore_ms: 0.0,
            evicted,
        })
    }

    /// Resume a suspended generation. Free when its context stayed on the
    /// GPU, `swap_restore_ms` when it was evicted to host memory, or a full
    /// re-prefill when context caching is disabled.
    pub fn resume(&mut self, request_id: u64, deadline_s: f64) -> Result<AdmitCharge, EngineError> {
        let gen = self
            .states
            .get(&request_id)
            .ok_or(EngineError::UnknownRequest(request_id))?;
        if gen.status != GenStatus::Suspended {
            return Err(EngineError::WrongState(
                request_id,
                gen.status,
                GenStatus::Suspended,
            ));
        }
        let (restore_ms, need) = match gen.kv_location {
            KvLocation::Gpu => (0.0, 0.0),
            KvLocation::Host => (self.cost.swap_restore_ms, self.cost.kv_mb_per_request),
            KvLocation::None => (self.cost.reprefill_ms, self.cost.kv_mb_per_request),
        };
        let evicted = self.make_room(need, request_id)?;
        let gen = self.states.get_mut(&request_id).expect("state exists");
        gen.kv_location = KvLocation::Gpu;
        gen.kv_size_mb = self.cost.kv_mb_per_request;
        gen.status = GenStatus::Running;
        gen.deadline_s = deadline_s;
        self.running.push(request_id);
        self.busy_restore_ms += restore_ms;
        Ok(AdmitCharge {
            restore_ms,
            evicted,
        })
    }

    /// Suspend a running generation at a segment boundary. The KV context
    /// stays where it is (eviction is lazy); the token snapshot is the exact
    /// id sequence emitted so far.
    pub fn suspend(&mut self, request_id: u64, now: f64) -> Result<SuspendReceipt, EngineError> {
        let gen = self
            .states
            .get_mut(&request_id)
            .ok_or(EngineError::UnknownRequest(request_id))?;
        if gen.status != GenStatus::Running {
            return Err(EngineError::WrongState(
                request_id,
                gen.status,
                GenStatus::Running,
            ));
        }
        gen.status = GenStatus::Suspended;
        gen.segment_index += 1;
        gen.tokens_in_current_segment = 0;
        gen.recent_token_times.clear();
        gen.suspended_at = now;
        if self.kv_cache_disabled {
            gen.kv_location = KvLocation::None;
            gen.kv_size_mb = 0.0;
        }
        let token_snapshot: Vec<u32> = (0..gen.tokens_emitted_total).collect();
        let receipt = SuspendReceipt {
            kv_size_mb: gen.kv_size_mb,
            snapshot_bytes: SNAPSHOT_HEADER_BYTES
                + SNAPSHOT_BYTES_PER_TOKEN * token_snapshot.len() as u64,
            token_snapshot,
        };
        self.running.retain(|id| *id != request_id);
        Ok(receipt)
    }

    /// Finish a generation at end of plan and release its context.
    pub fn finish(&mut self, request_id: u64) -> Result<(), EngineError> {
        let gen = self
            .states
            .get_mut(&request_id)
            .ok_or(EngineError::UnknownRequest(request_id))?;
        gen.status = GenStatus::Finished;
        gen.kv_location = KvLocation::None;
        gen.kv_size_mb = 0.0;
        self.running.retain(|id| *id != request_id);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::builtin_library;

    fn engine_with(request_ids: &[u64], trace_id: u32) -> Engine {
        let lib = builtin_library();
        let mut engine = Engine::new(EngineCostModel::default(), 10, false);
        for (i, id) in request_ids.iter().enumerate() {
            engine.register(*id, i as u32, lib.get(trace_id).unwrap().clone());
        }
        engine
    }

    fn skill_rule() -> StopRule {
        StopRule::SkillPattern(SkillMatcher::new(&builtin_library().skill_names()))
    }

    #[test]
    fn iteration_latency_matches_cost_model() {
        let mut engine = engine_with(&[1], 1);
        engine.start(1, f64::INFINITY).unwrap();
        // First iteration carries the prefill lump for 60 prompt tokens.
        let with_prefill = engine.iteration_latency_ms();
        assert!((with_prefill - (21.77 + 0.1139 * 60.0)).abs() < 1e-9);
        engine.step_iteration(0.0);
        assert!((engine.iteration_latency_ms() - 21.77).abs() < 1e-9);
    }

    #[test]
    fn batch_interference_is_linear() {
        let lib = builtin_library();
        let mut cost = EngineCostModel::default();
        cost.batch_slowdown_gamma = 0.1;
        cost.prefill_ms_per_prompt_token = 0.0;
        let mut engine = Engine::new(cost, 10, false);
        engine.register(1, 0, lib.get(1).unwrap().clone());
        engine.register(2, 1, lib.get(1).unwrap().clone());
        engine.start(1, f64::INFINITY).unwrap();
        assert!((engine.iteration_latency_ms() - 21.77).abs() < 1e-9);
        engine.start(2, f64::INFINITY).unwrap();
        assert!((engine.iteration_latency_ms() - 23.947).abs() < 1e-9);
    }

    #[test]
    #[should_panic(expected = "no iteration without a batch")]
    fn empty_batch_has_no_iteration() {
        let engine = engine_with(&[1], 1);
        engine.iteration_latency_ms();
    }

    #[test]
    fn step_advances_every_member_once() {
        let mut engine = engine_with(&[1, 2, 3], 1);
        for id in [1, 2, 3] {
            engine.start(id, f64::INFINITY).unwrap();
        }
        let out = engine.step_iteration(0.0);
        assert_eq!(out.emissions.len(), 3);
        for id in [1, 2, 3] {
            assert_eq!(engine.state(id).unwrap().tokens_emitted_total, 1);
        }
    }

    #[test]
    fn fifteen_tokens_at_batch_one_cost() {
        // A 15-token plan decodes in 15 * 21.77 ms plus detokenization.
        let lib = builtin_library();
        let mut cost = EngineCostModel::default();
        cost.prefill_ms_per_prompt_token = 0.0;
        let mut engine = Engine::new(cost, 100, false);
        let trace = lib.get(1).unwrap().clone(); // 15-token plan
        assert_eq!(trace.output_tokens(), 15);
        engine.register(1, 0, trace);
        engine.start(1, f64::INFINITY).unwrap();
        for _ in 0..15 {
            engine.step_iteration(0.0);
        }
        assert!((engine.busy_decode_ms() - 15.0 * 21.77).abs() < 1e-9);
        assert!((engine.busy_decode_ms() - 326.55).abs() < 0.06);
    }

    #[test]
    fn boundary_on_complete_skill_only() {
        let mut engine = engine_with(&[1], 1);
        engine.start(1, f64::INFINITY).unwrap();
        let rule = skill_rule();
        // Trace 1 first skill "sc(1);" spans 4 tokens; only the 4th completes.
        for step in 0..4 {
            let out = engine.step_iteration(0.0);
            let frag = out.emissions[0].fragment.clone();
            let boundary = engine.check_boundary(1, &rule, &frag);
            if step < 3 {
                assert!(boundary.is_none(), "early boundary at token {step}");
            } else {
                let b = boundary.expect("boundary at skill end");
                assert_eq!(b.skills.len(), 1);
                assert_eq!(b.skills[0].name, "sc");
                assert!(!b.end_of_plan);
            }
        }
    }

    #[test]
    fn sentence_rule_stops_at_period() {
        let mut engine = engine_with(&[1], 12);
        engine.start(1, f64::INFINITY).unwrap();
        let mut boundaries = 0;
        let total = engine.trace(1).unwrap().plan.len();
        let plan_tokens = ScriptedPlan::from_trace(engine.trace(1).unwrap()).total_tokens();
        for _ in 0..plan_tokens {
            let out = engine.step_iteration(0.0);
            let frag = out.emissions[0].fragment.clone();
            if engine.check_boundary(1, &StopRule::Sentence, &frag).is_some() {
                boundaries += 1;
            }
        }
        assert_eq!(boundaries, total, "one boundary per sentence");
    }

    #[test]
    fn none_rule_only_ends_at_plan_end() {
        let mut engine = engine_with(&[1], 1);
        engine.start(1, f64::INFINITY).unwrap();
        let plan_tokens = ScriptedPlan::from_trace(engine.trace(1).unwrap()).total_tokens();
        for i in 0..plan_tokens {
            let out = engine.step_iteration(0.0);
            let frag = out.emissions[0].fragment.clone();
            let b = engine.check_boundary(1, &StopRule::None, &frag);
            if i + 1 < plan_tokens {
                assert!(b.is_none());
            } else {
                let b = b.expect("end of plan");
                assert!(b.end_of_plan);
                assert_eq!(b.skills.len(), 4);
            }
        }
    }

    #[test]
    fn suspend_keeps_kv_and_snapshots_tokens() {
        let mut engine = engine_with(&[1], 1);
        engine.start(1, f64::INFINITY).unwrap();
        for _ in 0..4 {
            engine.step_iteration(0.0);
        }
        let receipt = engine.suspend(1, 0.1).unwrap();
        assert!((receipt.kv_size_mb - 170.35).abs() < 1e-9);
        assert_eq!(receipt.token_snapshot, vec![0, 1, 2, 3]);
        let gen = engine.state(1).unwrap();
        assert_eq!(gen.status, GenStatus::Suspended);
        assert_eq!(gen.kv_location, KvLocation::Gpu);
        assert_eq!(gen.segment_index, 1);
        assert_eq!(gen.tokens_in_current_segment, 0);
    }

    #[test]
    fn snapshot_accounting_matches_tuple_layout() {
        // 13 token ids account for 144 bytes.
        let lib = builtin_library();
        let mut engine = Engine::new(EngineCostModel::default(), 100, false);
        engine.register(1, 0, lib.get(9).unwrap().clone());
        engine.start(1, f64::INFINITY).unwrap();
        for _ in 0..13 {
            engine.step_iteration(0.0);
        }
        let receipt = engine.suspend(1, 0.0).unwrap();
        assert_eq!(receipt.token_snapshot.len(), 13);
        assert_eq!(receipt.snapshot_bytes, 144);
    }

    #[test]
    fn resume_costs_depend_on_location() {
        let mut engine = engine_with(&[1, 2], 1);
        engine.start(1, f64::INFINITY).unwrap();
        engine.step_iteration(0.0);
        engine.suspend(1, 0.1).unwrap();
        // GPU-resident: free resume.
        let charge = engine.resume(1, f64::INFINITY).unwrap();
        assert_eq!(charge.restore_ms, 0.0);
        engine.suspend(1, 0.2).unwrap();
        // Force the context to host, then resume pays the transfer.
        engine
            .states
            .get_mut(&1)
            .map(|g| g.kv_location = KvLocation::Host);
        let charge = engine.resume(1, f64::INFINITY).unwrap();
        assert!((charge.restore_ms - 9.50).abs() < 1e-9);
    }

    #[test]
    fn disabled_cache_pays_reprefill() {
        let lib = builtin_library();
        let mut engine = Engine::new(EngineCostModel::default(), 10, true);
        engine.register(1, 0, lib.get(1).unwrap().clone());
        engine.start(1, f64::INFINITY).unwrap();
        engine.step_iteration(0.0);
        engine.suspend(1, 0.1).unwrap();
        assert_eq!(engine.state(1).unwrap().kv_location, KvLocation::None);
        let charge = engine.resume(1, f64::INFINITY).unwrap();
        assert!((charge.restore_ms - 133.31).abs() < 1e-9);
    }

    #[test]
    fn memory_accounting_and_eviction() {
        let lib = builtin_library();
        let mut cost = EngineCostModel::default();
        cost.gpu_memory_mb = 400.0; // room for two contexts
        let mut engine = Engine::new(cost, 10, false);
        for id in 1..=3 {
            engine.register(id, id as u32, lib.get(1).unwrap().clone());
        }
        assert_eq!(engine.free_gpu_memory_mb(), 400.0);
        engine.start(1, f64::INFINITY).unwrap();
        assert!((engine.free_gpu_memory_mb() - (400.0 - 170.35)).abs() < 1e-9);
        engine.step_iteration(0.0);
        engine.suspend(1, 0.1).unwrap();
        engine.start(2, f64::INFINITY).unwrap();
        // Third admission must evict the suspended context of request 1.
        let charge = engine.start(3, f64::INFINITY).unwrap();
        assert_eq!(charge.evicted, vec![1]);
        assert_eq!(engine.state(1).unwrap().kv_location, KvLocation::Host);
        assert!(engine.free_gpu_memory_mb() >= 0.0);
        // Conservation: free + resident = capacity.
        assert!(
            (engine.free_gpu_memory_mb() + engine.resident_kv_mb() - 400.0).abs() < 1e-9
        );
    }

    #[test]
    fn admission_refused_when_memory_exhausted() {
        let lib = builtin_library();
        let mut cost = EngineCostModel::default();
        cost.gpu_memory_mb = 200.0; // one context only
        let mut engine = Engine::new(cost, 10, false);
        engine.register(1, 0, lib.get(1).unwrap().clone());
        engine.register(2, 1, lib.get(1).unwrap().clone());
        engine.start(1, f64::INFINITY).unwrap();
        assert!(!engine.can_fit(2));
        assert!(matches!(
            engine.start(2, f64::INFINITY),
            Err(EngineError::OutOfMemory { .. })
        ));
    }

    #[test]
    fn token_fidelity_across_suspend_resume() {
        let lib = builtin_library();
        let trace = lib.get(9).unwrap().clone();
        let full_text = ScriptedPlan::from_trace(&trace).full_text.clone();
        let mut engine = Engine::new(EngineCostModel::default(), 10, false);
        engine.register(1, 0, trace);
        engine.start(1, f64::INFINITY).unwrap();
        let rule = skill_rule();
        let mut text = String::new();
        loop {
            let out = engine.step_iteration(0.0);
            let em = &out.emissions[0];
            text.push_str(&em.fragment);
            let end = em.end_of_plan;
            let frag = em.fragment.clone();
            if let Some(b) = engine.check_boundary(1, &rule, &frag) {
                if b.end_of_plan {
                    engine.finish(1).unwrap();
                    break;
                }
                engine.suspend(1, 0.0).unwrap();
                engine.resume(1, f64::INFINITY).unwrap();
            } else {
                assert!(!end);
            }
        }
        assert_eq!(text, full_text, "emissions must reproduce the plan exactly");
    }

    #[test]
    fn cost_model_validation() {
        assert!(EngineCostModel::default().validate().is_ok());
        let mut bad = EngineCostModel::default();
        bad.swap_restore_ms = 200.0;
        assert!(bad.validate().is_err());
        let mut bad = EngineCostModel::default();
        bad.decode_ms_per_token = -1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn cost_model_partial_json_uses_defaults() {
        let model: EngineCostModel = serde_json::from_str("{\"decode_ms_per_token\": 10.0}").unwrap();
        assert_eq!(model.decode_ms_per_token, 10.0);
        assert_eq!(model.swap_restore_ms, 9.50);
        assert_eq!(model.reprefill_ms, 133.31);
    }

    #[test]
    fn recent_speed_estimate() {
        let mut engine = engine_with(&[1], 9);
        engine.start(1, f64::INFINITY).unwrap();
        let mut now = 0.0;
        for _ in 0..6 {
            let out = engine.step_iteration(now);
            now += out.step_ms / 1000.0;
        }
        let speed = engine.state(1).unwrap().recent_speed_ms_per_token(5).unwrap();
        // After the prefill-laden first iteration leaves the window, speed
        // settles at decode + detok per token.
        assert!((speed - (21.77 + 0.0035)).abs() < 1e-6, "speed {speed}");
    }
}
