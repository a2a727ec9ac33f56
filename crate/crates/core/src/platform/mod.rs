//! Virtual multicore machine hosting the kernel.
//!
//! Core 0 boots first: it creates the scenario's threads and mutexes and the
//! per-core idle threads, sends a boot message to every other core, enables
//! its scheduler interrupt and runs the scheduler. A secondary core does
//! nothing until its boot message arrives, then enables its own scheduler
//! interrupt and runs the scheduler.

mod cost;
mod exec;
mod host;
mod sim;
mod trace;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cost::CostModel;
pub use sim::{CriticalGuard, CsEntry, VirtualPlatform};
pub use trace::{
    quiescent_states, PlatformStats, QuiescentState, RunOutcome, Trace, TraceKind, TraceRecord,
};

use crate::body::Scenario;
use crate::error::KernelError;
use crate::kernel::{KernelConfig, ThreadState};
use crate::types::{CoreId, MutexId, Priority, ThreadId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Simulated cores interleaved by a seeded policy; traces in ticks.
    Deterministic,
    /// One host thread per core; traces in nanoseconds.
    HostParallel,
}

/// How the deterministic backend picks the next core to step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Uniformly among cores that have work, from the run's seed.
    #[default]
    Random,
    /// Cycle through the cores that have work.
    RoundRobin,
    /// The core whose next step starts earliest in its own time.
    EarliestClock,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub policy: Policy,
    pub max_steps: u64,
    /// Record kernel snapshots at quiescent points (deterministic only).
    pub snapshots: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            policy: Policy::Random,
            max_steps: 5_000_000,
            snapshots: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error("{0} is not in a critical section")]
    NotInCritical(CoreId),
    #[error("{0} already started")]
    AlreadyStarted(CoreId),
    #[error("no such core {0}")]
    InvalidCore(CoreId),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockedThread {
    pub tid: ThreadId,
    pub state: ThreadState,
    pub base_priority: Priority,
    pub effective_priority: Priority,
    pub owns: Vec<MutexId>,
}

/// Threads left when a run could make no further progress.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeadlockReport {
    pub threads: Vec<BlockedThread>,
    /// Trace up to the stall (deterministic backend only).
    pub trace: Option<Trace>,
}

impl DeadlockReport {
    pub fn blocked_tids(&self) -> Vec<ThreadId> {
        self.threads
            .iter()
            .filter(|t| t.state != ThreadState::Paused)
            .map(|t| t.tid)
            .collect()
    }
}

impl fmt::Display for DeadlockReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "no runnable thread left; {} thread(s) stuck:",
            self.threads.len()
        )?;
        for t in &self.threads {
            write!(
                f,
                "  {} {:?} prio {}/{}",
                t.tid, t.state, t.base_priority, t.effective_priority
            )?;
            if !t.owns.is_empty() {
                let owns: Vec<String> = t.owns.iter().map(ToString::to_string).collect();
                write!(f, " owns {}", owns.join(","))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error("deadlock: {0}")]
    Deadlock(Box<DeadlockReport>),
    #[error("step limit of {0} reached")]
    StepLimit(u64),
}

impl From<KernelError> for RunError {
    fn from(e: KernelError) -> Self {
        RunError::Platform(PlatformError::Kernel(e))
    }
}

/// Runs `scenario` to the end with default options.
pub fn run(
    config: KernelConfig,
    scenario: Scenario,
    backend: Backend,
    seed: u64,
) -> Result<Trace, RunError> {
    run_with(config, scenario, backend, seed, &RunOptions::default())
}

pub fn run_with(
    config: KernelConfig,
    scenario: Scenario,
    backend: Backend,
    seed: u64,
    opts: &RunOptions,
) -> Result<Trace, RunError> {
    match backend {
        Backend::Deterministic => {
            let mut vp = VirtualPlatform::new(config)?;
            vp.set_record_snapshots(opts.snapshots);
            vp.load(scenario);
            match vp.run_to_end(seed, opts) {
                Ok(outcome) => Ok(vp.into_trace(outcome)),
                Err(RunError::Deadlock(mut report)) => {
                    report.trace = Some(vp.into_trace(RunOutcome::Parked));
                    Err(RunError::Deadlock(report))
                }
                Err(e) => Err(e),
            }
        }
        Backend::HostParallel => host::run(config, scenario, opts),
    }
}
