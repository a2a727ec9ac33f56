use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::kernel::{KernelSnapshot, KernelStats};
use crate::types::{CoreId, ThreadId, Tick};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    ThreadCreate,
    CoreStart,
    Boot,
    SchedIrqEnable,
    SchedIrq,
    Ipi,
    Schedule,
    ContextSwitch,
    Migration,
    IdleEnter,
    FlagSet,
    FlagWait,
    Lock,
    Unlock,
    Sleep,
    Wake,
    Exit,
    Priority,
    Rebalance,
    CsEnter,
    CsExit,
    Spin,
    Mark,
}

/// One JSON-lines trace record.
///
/// `t` is in virtual ticks for the deterministic backend and in nanoseconds
/// since start for the host backend.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: Tick,
    pub core: u8,
    pub kind: TraceKind,
    pub from: Option<ThreadId>,
    pub to: Option<ThreadId>,
    pub data: Map<String, Value>,
}

impl TraceRecord {
    pub fn new(t: Tick, core: CoreId, kind: TraceKind) -> Self {
        Self {
            t,
            core: core.index() as u8,
            kind,
            from: None,
            to: None,
            data: Map::new(),
        }
    }

    pub fn from(mut self, tid: Option<ThreadId>) -> Self {
        self.from = tid;
        self
    }

    pub fn to(mut self, tid: Option<ThreadId>) -> Self {
        self.to = tid;
        self
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.data.insert(key.to_owned(), value.into());
        self
    }

    pub fn core_id(&self) -> CoreId {
        CoreId::new(self.core)
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.data.get(key).and_then(Value::as_u64)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.data.get(key).and_then(Value::as_str)
    }
}

/// Kernel state at a point with no scheduler interrupt pending and no
/// signal in flight.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuiescentState {
    /// Number of trace records emitted before the snapshot was taken.
    pub position: usize,
    pub snapshot: KernelSnapshot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    /// Every application thread exited.
    Completed,
    /// Nothing left to run and every remaining thread is sleeping.
    Parked,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlatformStats {
    pub steps: u64,
    /// Cross-core scheduler signals sent.
    pub ipis: u64,
    /// Triggers absorbed by a signal already in flight to the same core.
    pub ipis_coalesced: u64,
    /// Scheduler runs started by a delivered signal.
    pub signal_schedules: u64,
    /// Scheduler runs started by a same-core trigger.
    pub local_schedules: u64,
    pub spins: u64,
    pub spin_ticks: Tick,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub snapshots: Vec<QuiescentState>,
    pub kernel_stats: KernelStats,
    pub platform_stats: PlatformStats,
    /// Final per-core clocks (ticks, or nanoseconds on the host backend).
    pub clocks: Vec<Tick>,
    pub outcome: RunOutcome,
}

impl Trace {
    pub fn makespan(&self) -> Tick {
        self.clocks.iter().copied().max().unwrap_or(0)
    }

    pub fn of_kind(&self, kind: TraceKind) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn on_core(&self, core: CoreId) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.core_id() == core)
    }

    /// Context switches as JSON lines with the timestamp dropped.
    pub fn switch_lines(&self) -> Vec<String> {
        self.of_kind(TraceKind::ContextSwitch)
            .map(|r| {
                let mut r = r.clone();
                r.t = 0;
                serde_json::to_string(&r).expect("trace records serialize")
            })
            .collect()
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

/// Snapshots taken at quiescent points of a deterministic run.
pub fn quiescent_states(trace: &Trace) -> &[QuiescentState] {
    &trace.snapshots
}
