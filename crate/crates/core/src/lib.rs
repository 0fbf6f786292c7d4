//! segserve — discrete-event simulator for time-sensitive LLM serving of
//! robotic agents.
//!
//! The simulator models an LLM inference engine that generates scripted robot
//! plans with continuous batching, suspends a generation whenever the emitted
//! text completes an executable skill, dispatches that segment to the robot,
//! and re-queues the remainder. A utility-accrual scheduler orders initial and
//! suspended generations by potential utility density and admits work into the
//! batch under a worst-case latency budget and a GPU memory cap.
//!
//! ```text
//! ┌──────────┐   arrivals   ┌───────────┐  admit   ┌──────────────┐
//! │ workload │─────────────▶│ scheduler │─────────▶│    engine    │
//! │ (Poisson)│              │ (priority │          │ (batched     │
//! └──────────┘              │   queue)  │◀─────────│  decoding)   │
//!                           └───────────┘ suspend  └──────┬───────┘
//!                                                         │ segments
//!                           ┌───────────┐  ActionStart/End▼
//!                           │  metrics  │◀───────── robot agents
//!                           └───────────┘   (sampled execution)
//! ```
//!
//! Everything is driven by a single deterministic event loop ([`simcore`]);
//! the canonical output is an event log from which response time, waiting
//! time, completion time, and realized utility are derived ([`metrics`]).
//! [`oracle`] brute-forces tiny instances to cross-check the scheduling
//! objective against the simulator.

pub mod engine;
pub mod metrics;
pub mod oracle;
pub mod scheduler;
pub mod simcore;
pub mod tuf;
pub mod workload;

pub use engine::{EngineCostModel, StopRule};
pub use metrics::{aggregate, compute_all_metrics, AggregateRow, RequestMetrics};
pub use scheduler::{SchedulerParams, SchedulerPolicy};
pub use simcore::{run, EventLog, SimConfig, SimEvent, SimEventKind};
pub use tuf::{TimeUtilityFunction, UrgencyClass, UrgencyKind};
pub use workload::{builtin_library, TaskCategory, TaskTrace, TraceLibrary, WorkloadSpec};
