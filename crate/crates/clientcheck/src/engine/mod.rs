//! Parallel multipass verification of a trace against a client program.

mod search;
mod session;

use std::sync::Arc;

use clientcheck_core::minilang::Diagnostic;
use clientcheck_core::prohibitive::{builtin_suite, default_whitelist, Assumption, ProhibitiveRegistry, Whitelist};
use clientcheck_core::symcore::Status;
use clientcheck_core::symvm::{CompileError, VmEvent, DEFAULT_STEP_BUDGET};
use clientcheck_core::traceio::Direction;
use thiserror::Error;

pub use session::{verify_session, verify_source};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostModel {
    WallClock,
    /// Instructions retired, divided into milliseconds.
    Synthetic { steps_per_ms: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LagVariant {
    /// The first message completes at its own cost.
    Verbatim,
    /// The first message also waits for its arrival.
    Corrected,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub workers: usize,
    /// Instructions one execution state may retire per message.
    pub step_budget: u64,
    pub solver_bits_budget: u32,
    pub solver_node_limit: u64,
    pub wall_clock_timeout_ms: Option<u64>,
    /// Treat server application data (first byte 0x17) as opaque.
    pub drop_s2c_appdata: bool,
    pub max_passes: u32,
    pub cost_model: CostModel,
    pub lag_variant: LagVariant,
    pub record_events: bool,
    pub whitelist: Whitelist,
    pub registry: Arc<ProhibitiveRegistry>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            workers: 1,
            step_budget: DEFAULT_STEP_BUDGET,
            solver_bits_budget: 64,
            solver_node_limit: 1 << 21,
            wall_clock_timeout_ms: None,
            drop_s2c_appdata: false,
            max_passes: 64,
            cost_model: CostModel::WallClock,
            lag_variant: LagVariant::Verbatim,
            record_events: false,
            whitelist: default_whitelist(),
            registry: Arc::new(builtin_suite()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InvalidReason {
    /// Every execution path contradicted the trace.
    Exhausted,
    /// Some path ran out of steps, solver budget, passes or wall-clock time.
    Budget,
    /// Verification needed an assumption the whitelist does not allow.
    Whitelist { function: String, text: String },
}

impl InvalidReason {
    pub fn tag(&self) -> &'static str {
        match self {
            InvalidReason::Exhausted => "exhausted",
            InvalidReason::Budget => "budget",
            InvalidReason::Whitelist { .. } => "whitelist",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Valid,
    Invalid(InvalidReason),
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, Verdict::Valid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsgStatus {
    Valid,
    Invalid,
    Unverified,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageReport {
    pub index: usize,
    pub direction: Direction,
    pub arrival_ms: u64,
    pub status: MsgStatus,
    pub wall_us: u64,
    pub steps: u64,
    /// Pass at which the message was accepted.
    pub passes: u32,
    pub cost_ms: u64,
    pub completion_ms: u64,
    pub lag_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stats {
    pub nodes: u64,
    pub backtracks: u64,
    pub budget_deaths: u64,
    pub panics: u64,
    /// Largest number of live nodes seen during any message search.
    pub max_live: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EngineEvent {
    Prohibitive { msg: usize, pass: u32, event: VmEvent },
    PassEnd { msg: usize, pass: u32, statuses: Vec<(String, Status)> },
    Accepted { msg: usize, pass: u32, witness: Vec<(String, u64)> },
    Fork { msg: usize, live: usize },
    Backtrack { from: usize, to: usize },
}

#[derive(Debug, Clone)]
pub struct SessionVerdict {
    pub verdict: Verdict,
    pub first_invalid: Option<usize>,
    pub messages: Vec<MessageReport>,
    pub assumptions: Vec<Assumption>,
    pub events: Vec<EngineEvent>,
    pub stats: Stats,
}

impl SessionVerdict {
    pub fn total_steps(&self) -> u64 {
        self.messages.iter().map(|m| m.steps).sum()
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("program check failed: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Check(Vec<Diagnostic>),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Parse(#[from] clientcheck_core::minilang::ParseError),
}
