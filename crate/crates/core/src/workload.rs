//! Workload construction: trace library, Poisson arrival composition, and
//! per-skill execution-time models.
//!
//! Token streams are scripted: each trace fixes the exact text, token
//! boundaries, and skill boundaries of the plan an LLM would produce, so
//! simulations are reproducible and independent of any actual model. The
//! execution-time model maps each skill to a duration profile collected
//! offline (parametric in the skill argument, sampled per scenario, or a
//! constant).

use crate::tuf::{TimeUtilityFunction, UrgencyClass, UrgencyKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Errors from workload loading and composition.
#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("trace pool is empty")]
    EmptyTracePool,
    #[error("trace {0} not present in library")]
    UnknownTrace(u32),
    #[error("skill '{0}' not present in execution time model")]
    UnknownSkill(String),
    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),
    #[error("trace file parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One executable skill occurrence in a scripted plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillCall {
    pub name: String,
    /// Scalar arguments (distance in cm, angle in degrees, word count, ...).
    #[serde(default)]
    pub params: Vec<f64>,
    /// Tokens this call occupies in the scripted output stream.
    pub token_count: u32,
    /// Duration profile for this skill; entries sharing a name must agree.
    pub exec_profile: ExecProfile,
    /// Literal text of this call in the plan. Defaults to `name(p0,p1,..);`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl SkillCall {
    /// Rendered text of this call in the scripted output.
    pub fn rendered_text(&self) -> String {
        match &self.text {
            Some(t) => t.clone(),
            None => {
                let args = self
                    .params
                    .iter()
                    .map(|p| {
                        if p.fract() == 0.0 && p.abs() < 1e15 {
                            format!("{}", *p as i64)
                        } else {
                            format!("{p}")
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(",");
                format!("{}({});", self.name, args)
            }
        }
    }
}

/// Task category mirroring the trace collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskCategory {
    DroneNormal,
    DroneUrgent,
    ArmComplex,
    Chatbot,
}

impl fmt::Display for TaskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskCategory::DroneNormal => "drone_normal",
            TaskCategory::DroneUrgent => "drone_urgent",
            TaskCategory::ArmComplex => "arm_complex",
            TaskCategory::Chatbot => "chatbot",
        };
        f.write_str(s)
    }
}

/// A scripted request: prompt size plus the exact plan the model "generates".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTrace {
    pub trace_id: u32,
    pub category: TaskCategory,
    pub prompt_tokens: u32,
    pub plan: Vec<SkillCall>,
    pub urgency: UrgencyClass,
}

impl TaskTrace {
    pub fn output_tokens(&self) -> u32 {
        self.plan.iter().map(|s| s.token_count).sum()
    }

    fn validate(&self, line: usize) -> Result<(), WorkloadError> {
        let err = |message: String| WorkloadError::ParseError { line, message };
        if self.plan.is_empty() {
            return Err(err(format!("trace {} has empty plan", self.trace_id)));
        }
        if self.prompt_tokens == 0 {
            return Err(err(format!("trace {} has zero prompt tokens", self.trace_id)));
        }
        let want = if self.category == TaskCategory::DroneUrgent {
            UrgencyKind::Urgent
        } else {
            UrgencyKind::Normal
        };
        if self.urgency.kind != want {
            return Err(err(format!(
                "trace {}: category {} requires {:?} urgency",
                self.trace_id, self.category, want
            )));
        }
        for skill in &self.plan {
            if skill.name.is_empty() {
                return Err(err(format!("trace {}: empty skill name", self.trace_id)));
            }
            if skill.token_count == 0 {
                return Err(err(format!(
                    "trace {}: skill {} has zero token count",
                    self.trace_id, skill.name
                )));
            }
            let chars = skill.rendered_text().chars().count() as u32;
            if skill.token_count > chars {
                return Err(err(format!(
                    "trace {}: skill {} has more tokens ({}) than characters ({})",
                    self.trace_id, skill.name, skill.token_count, chars
                )));
            }
        }
        Ok(())
    }
}

/// Duration profile for one skill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExecProfile {
    /// `coeffs[0] + coeffs[1]*params[0] + coeffs[2]*params[1] + ...` seconds.
    Parametric { coeffs: Vec<f64> },
    /// Empirical durations over profiled scenarios.
    Sampled { samples: Vec<f64> },
    /// Near-constant skills profiled by their average.
    Constant { mean_s: f64 },
}

/// How to turn a profile into a duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    /// Draw from the profiled scenarios (simulation realism).
    Sample,
    /// Average over scenarios.
    Mean,
    /// Minimum over scenarios; used for deadline estimation so a plan is
    /// ready even in the fastest-execution case.
    Min,
}

/// Per-skill execution time model, keyed by skill name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTimeModel {
    pub skills: BTreeMap<String, ExecProfile>,
}

impl ExecutionTimeModel {
    /// Duration of `skill` under `mode`. Parametric profiles are noise-free
    /// and identical across modes; only sampled profiles vary.
    pub fn sample(
        &self,
        skill: &SkillCall,
        mode: ExecMode,
        rng: &mut impl Rng,
    ) -> Result<f64, WorkloadError> {
        let profile = self
            .skills
            .get(&skill.name)
            .ok_or_else(|| WorkloadError::UnknownSkill(skill.name.clone()))?;
        Ok(match profile {
            ExecProfile::Constant { mean_s } => *mean_s,
            ExecProfile::Parametric { coeffs } => {
                let mut v = *coeffs.first().unwrap_or(&0.0);
                for (c, p) in coeffs.iter().skip(1).zip(skill.params.iter()) {
                    v += c * p;
                }
                v
            }
            ExecProfile::Sampled { samples } => match mode {
                ExecMode::Sample => samples[rng.random_range(0..samples.len())],
                ExecMode::Mean => samples.iter().sum::<f64>() / samples.len() as f64,
                ExecMode::Min => samples.iter().copied().fold(f64::INFINITY, f64::min),
            },
        })
    }

    /// Minimum-mode duration of a whole segment (sum over its skills).
    pub fn estimate_segment(&self, segment: &[SkillCall]) -> Result<f64, WorkloadError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0); // Min mode never draws
        segment
            .iter()
            .map(|s| self.sample(s, ExecMode::Min, &mut rng))
            .sum()
    }
}

/// Arrival-process parameters for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    /// Poisson event rate, events per second.
    pub events_per_second: f64,
    /// Each event spawns a uniform 1..=max task count.
    pub max_tasks_per_event: u32,
    pub trace_pool: Vec<u32>,
    pub agent_count: u32,
    /// Arrival-generation window in seconds; the simulation drains afterwards.
    pub duration_s: f64,
    pub seed: u64,
    /// Segment boundary rule for this workload.
    #[serde(default)]
    pub segmentation: Segmentation,
    /// Optional external trace library (JSON lines); built-in when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traces_path: Option<String>,
    /// Optional TUF overrides per urgency level as `{beta, alpha, ert_s}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiles: Option<ProfileOverrides>,
}

/// Which content rule delimits segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segmentation {
    /// Suspend when a complete skill call appears (robot plans).
    #[default]
    Skill,
    /// Suspend at sentence ends (chatbot).
    Sentence,
    /// Suspend at blank lines (chatbot).
    Paragraph,
}

/// Replacement TUF profiles applied to the library's urgency classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<TimeUtilityFunction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub urgent: Option<TimeUtilityFunction>,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.events_per_second.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(WorkloadError::InvalidSpec(format!(
                "events_per_second must be > 0, got {}",
                self.events_per_second
            )));
        }
        if self.max_tasks_per_event == 0 || self.max_tasks_per_event > self.agent_count {
            return Err(WorkloadError::InvalidSpec(format!(
                "need 1 <= max_tasks_per_event ({}) <= agent_count ({})",
                self.max_tasks_per_event, self.agent_count
            )));
        }
        if self.duration_s.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(WorkloadError::InvalidSpec(format!(
                "duration_s must be > 0, got {}",
                self.duration_s
            )));
        }
        Ok(())
    }
}

/// One spawned task in the composed arrival sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalEvent {
    pub time_s: f64,
    pub agent_id: u32,
    pub trace_id: u32,
}

/// Immutable library of scripted traces plus the merged execution model.
#[derive(Debug, Clone)]
pub struct TraceLibrary {
    traces: BTreeMap<u32, TaskTrace>,
    model: ExecutionTimeModel,
}

impl TraceLibrary {
    /// Build a library from validated traces, merging their skill profiles.
    pub fn from_traces(traces: Vec<TaskTrace>) -> Result<Self, WorkloadError> {
        let mut map = BTreeMap::new();
        let mut model = ExecutionTimeModel::default();
        for (i, trace) in traces.into_iter().enumerate() {
            trace.validate(i + 1)?;
            for skill in &trace.plan {
                match model.skills.get(&skill.name) {
                    None => {
                        model
                            .skills
                            .insert(skill.name.clone(), skill.exec_profile.clone());
                    }
                    Some(existing) if *existing == skill.exec_profile => {}
                    Some(_) => {
                        return Err(WorkloadError::ParseError {
                            line: i + 1,
                            message: format!(
                                "skill '{}' declared with conflicting exec profiles",
                                skill.name
                            ),
                        });
                    }
                }
            }
            if map.insert(trace.trace_id, trace).is_some() {
                return Err(WorkloadError::ParseError {
                    line: i + 1,
                    message: "duplicate trace_id".into(),
                });
            }
        }
        Ok(Self { traces: map, model })
    }

    /// Load a JSON-lines trace file (one trace object per line).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorkloadError> {
        let content = std::fs::read_to_string(path)?;
        Self::parse_jsonl(&content)
    }

    pub fn parse_jsonl(content: &str) -> Result<Self, WorkloadError> {
        let mut traces = Vec::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let trace: TaskTrace =
                serde_json::from_str(line).map_err(|e| WorkloadError::ParseError {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            traces.push(trace);
        }
        if traces.is_empty() {
            return Err(WorkloadError::ParseError {
                line: 0,
                message: "no traces in file".into(),
            });
        }
        Self::from_traces(traces)
    }

    /// Serialize as JSON lines, one trace per line, ordered by id.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for trace in self.traces.values() {
            out.push_str(&serde_json::to_string(trace).expect("trace serializes"));
            out.push('\n');
        }
        out
    }

    pub fn get(&self, trace_id: u32) -> Option<&TaskTrace> {
        self.traces.get(&trace_id)
    }

    pub fn trace_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.traces.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn model(&self) -> &ExecutionTimeModel {
        &self.model
    }

    /// Skill names appearing in the library (the stop checker's pattern set).
    pub fn skill_names(&self) -> Vec<String> {
        self.model.skills.keys().cloned().collect()
    }

    /// Mean-mode execution time of a whole plan; used to approximate how long
    /// an agent stays busy when composing arrivals.
    fn mean_plan_execution(&self, trace: &TaskTrace) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0); // Mean mode never draws
        trace
            .plan
            .iter()
            .map(|s| self.model.sample(s, ExecMode::Mean, &mut rng).unwrap_or(0.0))
            .sum()
    }

    /// Compose a Poisson arrival sequence for `spec`.
    ///
    /// Event times form a Poisson process with rate `events_per_second`
    /// truncated at `duration_s`. Each event spawns a uniform number of tasks
    /// in `1..=max_tasks_per_event`, each drawing a trace uniformly from the
    /// pool and a distinct idle agent (round-robin; an agent is considered
    /// busy until its estimated plan execution completes). Excess tasks in an
    /// event with too few idle agents are dropped with a warning.
    pub fn compose(&self, spec: &WorkloadSpec) -> Result<Vec<ArrivalEvent>, WorkloadError> {
        spec.validate()?;
        if spec.trace_pool.is_empty() {
            return Err(WorkloadError::EmptyTracePool);
        }
        for id in &spec.trace_pool {
            if !self.traces.contains_key(id) {
                return Err(WorkloadError::UnknownTrace(*id));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut busy_until = vec![0.0f64; spec.agent_count as usize];
        let mut cursor = 0usize;
        let mut events = Vec::new();
        let mut now = 0.0f64;
        loop {
            let u: f64 = rng.random();
            now += -(1.0 - u).ln() / spec.events_per_second;
            if now > spec.duration_s {
                break;
            }
            let tasks = rng.random_range(1..=spec.max_tasks_per_event);
            for task_no in 0..tasks {
                let trace_id = spec.trace_pool[rng.random_range(0..spec.trace_pool.len())];
                let agent = (0..busy_until.len())
                    .map(|k| (cursor + k) % busy_until.len())
                    .find(|&a| busy_until[a] <= now);
                let Some(agent) = agent else {
                    log::warn!(
                        "agents exhausted at t={now:.3}s: dropping {} of {} tasks",
                        tasks - task_no,
                        tasks
                    );
                    break;
                };
                cursor = (agent + 1) % busy_until.len();
                let trace = &self.traces[&trace_id];
                busy_until[agent] = now + self.mean_plan_execution(trace);
                events.push(ArrivalEvent {
                    time_s: now,
                    agent_id: agent as u32,
                    trace_id,
                });
            }
        }
        Ok(events)
    }
}

/// Token-level rendering of a trace's plan: one text fragment per token plus
/// the cumulative token index at which each skill completes.
#[derive(Debug, Clone)]
pub struct ScriptedPlan {
    pub fragments: Vec<String>,
    /// `skill_end_token[i]` = number of tokens emitted once skill `i` is
    /// fully generated (1-based cumulative counts).
    pub skill_end_token: Vec<u32>,
    pub full_text: String,
}

impl ScriptedPlan {
    pub fn from_trace(trace: &TaskTrace) -> Self {
        let mut fragments = Vec::new();
        let mut skill_end_token = Vec::new();
        let mut full_text = String::new();
        let mut emitted = 0u32;
        for skill in &trace.plan {
            let text = skill.rendered_text();
            fragments.extend(split_into_tokens(&text, skill.token_count));
            emitted += skill.token_count;
            skill_end_token.push(emitted);
            full_text.push_str(&text);
        }
        Self {
            fragments,
            skill_end_token,
            full_text,
        }
    }

    pub fn total_tokens(&self) -> u32 {
        self.fragments.len() as u32
    }

    /// Number of skills fully emitted after `tokens` tokens.
    pub fn skills_completed(&self, tokens: u32) -> usize {
        self.skill_end_token
            .iter()
            .take_while(|&&end| end <= tokens)
            .count()
    }
}

/// Split text into `n` contiguous chunks of near-equal character count.
fn split_into_tokens(text: &str, n: u32) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let n = n as usize;
    let base = chars.len() / n;
    let rem = chars.len() % n;
    let mut out = Vec::with_capacity(n);
    let mut pos = 0;
    for i in 0..n {
        let len = base + usize::from(i < rem);
        out.push(chars[pos..pos + len].iter().collect());
        pos += len;
    }
    out
}

// --- Built-in library -------------------------------------------------------

fn skill(name: &str, params: &[f64], token_count: u32, exec: ExecProfile) -> SkillCall {
    SkillCall {
        name: name.into(),
        params: params.to_vec(),
        token_count,
        exec_profile: exec,
        text: None,
    }
}

fn drone_move() -> ExecProfile {
    // Profiled small-quadrotor translation: ~0.4 s actuation plus 45 cm/s.
    ExecProfile::Parametric {
        coeffs: vec![0.4, 1.0 / 45.0],
    }
}

fn drone_turn() -> ExecProfile {
    ExecProfile::Parametric {
        coeffs: vec![0.3, 1.0 / 80.0],
    }
}

fn scan_profile() -> ExecProfile {
    // Scenario-dependent: target ahead vs behind the robot.
    ExecProfile::Sampled {
        samples: vec![1.8, 2.6, 3.9, 5.4, 7.1],
    }
}

fn approach_profile() -> ExecProfile {
    ExecProfile::Sampled {
        samples: vec![1.2, 2.0, 3.1],
    }
}

fn print_profile() -> ExecProfile {
    ExecProfile::Constant { mean_s: 0.001 }
}

fn photo_profile() -> ExecProfile {
    ExecProfile::Constant { mean_s: 0.5 }
}

fn arm_check() -> ExecProfile {
    ExecProfile::Sampled {
        samples: vec![0.8, 1.2, 1.9],
    }
}

fn arm_pick() -> ExecProfile {
    ExecProfile::Sampled {
        samples: vec![2.8, 3.4, 4.1],
    }
}

fn arm_place() -> ExecProfile {
    ExecProfile::Sampled {
        samples: vec![2.5, 3.0, 3.8],
    }
}

fn arm_move() -> ExecProfile {
    ExecProfile::Parametric {
        coeffs: vec![1.0, 1.0 / 30.0],
    }
}

fn read_profile() -> ExecProfile {
    // Reading speed of 300 words per minute: seconds = 0.2 * words.
    ExecProfile::Parametric {
        coeffs: vec![0.0, 0.2],
    }
}

fn drone_trace(trace_id: u32, urgent: bool, plan: Vec<SkillCall>) -> TaskTrace {
    TaskTrace {
        trace_id,
        category: if urgent {
            TaskCategory::DroneUrgent
        } else {
            TaskCategory::DroneNormal
        },
        prompt_tokens: 60,
        plan,
        urgency: if urgent {
            UrgencyClass::urgent()
        } else {
            UrgencyClass::normal()
        },
    }
}

fn arm_step(n: f64) -> Vec<SkillCall> {
    vec![
        skill("check", &[n], 7, arm_check()),
        skill("pick", &[n], 6, arm_pick()),
        skill("move_to", &[30.0 + 5.0 * n], 8, arm_move()),
        skill("place", &[n], 7, arm_place()),
    ]
}

fn arm_trace(trace_id: u32, objects: [f64; 3]) -> TaskTrace {
    TaskTrace {
        trace_id,
        category: TaskCategory::ArmComplex,
        prompt_tokens: 90,
        plan: objects.into_iter().flat_map(arm_step).collect(),
        urgency: UrgencyClass::normal(),
    }
}

fn sentence(words: &str, paragraph_end: bool) -> SkillCall {
    let count = words.split_whitespace().count() as f64;
    let mut text = words.to_string();
    text.push_str(if paragraph_end { "\n\n" } else { " " });
    let tokens = (count * 1.3).round() as u32;
    SkillCall {
        name: "read".into(),
        params: vec![count],
        token_count: tokens.max(1),
        exec_profile: read_profile(),
        text: Some(text),
    }
}

fn chatbot_trace(trace_id: u32, sentences: Vec<SkillCall>) -> TaskTrace {
    TaskTrace {
        trace_id,
        category: TaskCategory::Chatbot,
        prompt_tokens: 45,
        plan: sentences,
        urgency: UrgencyClass::normal(),
    }
}

/// The built-in library: traces 1-5 (normal drone), 6-8 (urgent drone),
/// 9-11 (robot arm), 12-13 (chatbot stories).
pub fn builtin_library() -> TraceLibrary {
    let traces = vec![
        // Look for the cat.
        drone_trace(
            1,
            false,
            vec![
                skill("sc", &[1.0], 4, scan_profile()),
                skill("ap", &[1.0], 4, approach_profile()),
                skill("tp", &[], 3, photo_profile()),
                skill("p", &[1.0], 4, print_profile()),
            ],
        ),
        // Check for keys or wallets: scan once, then report findings.
        drone_trace(
            2,
            false,
            vec![
                skill("sc", &[2.0], 4, scan_profile()),
                skill("p", &[1.0], 4, print_profile()),
                skill("p", &[2.0], 4, print_profile()),
                skill("p", &[3.0], 4, print_profile()),
            ],
        ),
        // Check the book on the cabinet.
        drone_trace(
            3,
            false,
            vec![
                skill("mu", &[80.0], 5, drone_move()),
                skill("sc", &[3.0], 4, scan_profile()),
                skill("tp", &[], 3, photo_profile()),
                skill("p", &[1.0], 4, print_profile()),
            ],
        ),
        // Find a toy under the bed.
        drone_trace(
            4,
            false,
            vec![
                skill("md", &[40.0], 5, drone_move()),
                skill("sc", &[4.0], 4, scan_profile()),
                skill("ap", &[4.0], 4, approach_profile()),
                skill("p", &[1.0], 4, print_profile()),
            ],
        ),
        // Find a tool for cutting paper.
        drone_trace(
            5,
            false,
            vec![
                skill("sc", &[5.0], 4, scan_profile()),
                skill("tc", &[90.0], 5, drone_turn()),
                skill("ap", &[5.0], 4, approach_profile()),
                skill("p", &[1.0], 4, print_profile()),
            ],
        ),
        // Avoiding human injury.
        drone_trace(
            6,
            true,
            vec![
                skill("mu", &[120.0], 6, drone_move()),
                skill("mb", &[80.0], 5, drone_move()),
            ],
        ),
        // Preventing potential collision.
        drone_trace(
            7,
            true,
            vec![
                skill("mb", &[100.0], 6, drone_move()),
                skill("tc", &[90.0], 5, drone_turn()),
            ],
        ),
        // Evading animal pursuit.
        drone_trace(
            8,
            true,
            vec![
                skill("mu", &[150.0], 6, drone_move()),
                skill("mf", &[200.0], 6, drone_move()),
            ],
        ),
        // Object stacking / desk cleaning / produce classification.
        arm_trace(9, [1.0, 2.0, 3.0]),
        arm_trace(10, [4.0, 5.0, 6.0]),
        arm_trace(11, [7.0, 8.0, 9.0]),
        chatbot_trace(
            12,
            vec![
                sentence(
                    "The lighthouse keeper counted the ships as they slipped past the rocky point every morning.",
                    false,
                ),
                sentence("He kept a ledger of their names and flags.", true),
                sentence(
                    "One winter a storm erased the horizon for nine days and the ledger stayed open on an empty line.",
                    false,
                ),
                sentence("When the sky cleared, forty sails appeared at once.", true),
                sentence(
                    "He wrote them down one by one, smiling at the backlog the weather owed him.",
                    true,
                ),
            ],
        ),
        chatbot_trace(
            13,
            vec![
                sentence(
                    "A courier robot learned the shortcut through the market where the fruit stalls leave a gap at noon.",
                    false,
                ),
                sentence("The gap closed earlier on rainy days.", true),
                sentence(
                    "It began checking the clouds before planning a route, trading distance for certainty.",
                    false,
                ),
                sentence("Deliveries arrived sooner even when the path was longer.", true),
            ],
        ),
    ];
    TraceLibrary::from_traces(traces).expect("built-in library is valid")
}
