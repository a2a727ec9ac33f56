//! Thread bodies and scenarios.
//!
//! A thread body is a step function. Each call runs the thread up to its
//! next kernel call and returns that call as a [`Syscall`]; the platform
//! performs it under the big lock and hands the result back through
//! [`StepContext::reply`] on the following step. Every kernel call is
//! therefore a point where the deterministic backend may switch cores.

use std::fmt;
use std::sync::{Arc, Mutex};

use crate::error::KernelError;
use crate::kernel::WaitMode;
use crate::types::{AffinityMask, CoreId, MutexId, Priority, ThreadFlags, ThreadId, Tick};

/// Predicate evaluated inside the critical section by [`Syscall::SleepUnless`].
pub type WakeCondition = Arc<dyn Fn() -> bool + Send + Sync>;

#[derive(Clone)]
pub enum Syscall {
    /// Burns virtual ticks without entering the kernel. The host backend
    /// ignores it; real work there happens inside `step`.
    Compute(Tick),
    /// Records a `mark` trace event carrying `label`.
    Mark(u32),
    Yield,
    Sleep,
    /// Sleeps unless the condition already holds once the lock is taken.
    SleepUnless(WakeCondition),
    Wake(ThreadId),
    FlagsSet(ThreadId, ThreadFlags),
    FlagsWait(WaitMode, ThreadFlags),
    Lock(MutexId),
    Unlock(MutexId),
    SetPriority(ThreadId, Priority),
    SetAffinity(ThreadId, AffinityMask),
    Exit,
}

impl fmt::Debug for Syscall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Syscall::Compute(t) => write!(f, "Compute({t})"),
            Syscall::Mark(l) => write!(f, "Mark({l})"),
            Syscall::Yield => f.write_str("Yield"),
            Syscall::Sleep => f.write_str("Sleep"),
            Syscall::SleepUnless(_) => f.write_str("SleepUnless(..)"),
            Syscall::Wake(t) => write!(f, "Wake({t})"),
            Syscall::FlagsSet(t, m) => write!(f, "FlagsSet({t}, {m:#06b})"),
            Syscall::FlagsWait(mode, m) => write!(f, "FlagsWait({mode:?}, {m:#06b})"),
            Syscall::Lock(m) => write!(f, "Lock({m})"),
            Syscall::Unlock(m) => write!(f, "Unlock({m})"),
            Syscall::SetPriority(t, p) => write!(f, "SetPriority({t}, {p})"),
            Syscall::SetAffinity(t, m) => write!(f, "SetAffinity({t}, {m:?})"),
            Syscall::Exit => f.write_str("Exit"),
        }
    }
}

/// Result of the previous syscall.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Reply {
    /// The call completed (including after blocking, e.g. a lock handed over
    /// or a sleep ended).
    Done,
    /// Bits consumed by a flag wait.
    Flags(ThreadFlags),
    /// Whether a `Wake` found its target sleeping.
    Woke(bool),
    Err(KernelError),
}

/// Thread ids whose owner must be woken by the platform at its next
/// critical section. Used by async wakers, which may fire on any core.
#[derive(Clone, Debug, Default)]
pub struct WakeOutbox(Arc<Mutex<Vec<ThreadId>>>);

impl WakeOutbox {
    pub fn push(&self, tid: ThreadId) {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).push(tid);
    }

    pub fn drain(&self) -> Vec<ThreadId> {
        std::mem::take(&mut *self.0.lock().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn is_empty(&self) -> bool {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).is_empty()
    }
}

pub struct StepContext<'a> {
    pub tid: ThreadId,
    pub core: CoreId,
    /// Result of the previous syscall; `None` on the first step.
    pub reply: Option<Reply>,
    outbox: &'a WakeOutbox,
}

impl<'a> StepContext<'a> {
    pub fn new(tid: ThreadId, core: CoreId, reply: Option<Reply>, outbox: &'a WakeOutbox) -> Self {
        Self {
            tid,
            core,
            reply,
            outbox,
        }
    }

    pub fn outbox(&self) -> &WakeOutbox {
        self.outbox
    }

    /// Takes the reply, returning the matched bits of a flag wait.
    pub fn take_flags(&mut self) -> Option<ThreadFlags> {
        match self.reply.take() {
            Some(Reply::Flags(m)) => Some(m),
            _ => None,
        }
    }
}

pub trait ThreadBody: Send {
    fn step(&mut self, cx: &mut StepContext<'_>) -> Syscall;
}

impl<F> ThreadBody for F
where
    F: FnMut(&mut StepContext<'_>) -> Syscall + Send,
{
    fn step(&mut self, cx: &mut StepContext<'_>) -> Syscall {
        self(cx)
    }
}

/// Body that issues a fixed list of syscalls and then exits.
pub struct Script {
    calls: std::vec::IntoIter<Syscall>,
}

impl Script {
    pub fn new(calls: Vec<Syscall>) -> Self {
        Self {
            calls: calls.into_iter(),
        }
    }
}

impl ThreadBody for Script {
    fn step(&mut self, _cx: &mut StepContext<'_>) -> Syscall {
        self.calls.next().unwrap_or(Syscall::Exit)
    }
}

pub struct ThreadSpec {
    pub priority: Priority,
    pub affinity: AffinityMask,
    pub body: Box<dyn ThreadBody>,
}

/// Threads and mutexes created on core 0 before threading starts.
///
/// Threads get ids in the order they are added, starting at 0; mutexes
/// likewise.
pub struct Scenario {
    pub name: String,
    pub threads: Vec<ThreadSpec>,
    pub mutexes: usize,
}

impl Scenario {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            threads: Vec::new(),
            mutexes: 0,
        }
    }

    pub fn with_mutexes(mut self, count: usize) -> Self {
        self.mutexes = count;
        self
    }

    pub fn thread(
        mut self,
        priority: u8,
        affinity: AffinityMask,
        body: impl ThreadBody + 'static,
    ) -> Self {
        self.threads.push(ThreadSpec {
            priority: Priority::level(priority),
            affinity,
            body: Box::new(body),
        });
        self
    }

    pub fn script(self, priority: u8, calls: Vec<Syscall>) -> Self {
        self.thread(priority, AffinityMask::ALL, Script::new(calls))
    }

    /// Id the next added thread will get.
    pub fn next_tid(&self) -> ThreadId {
        ThreadId::new(self.threads.len() as u8)
    }
}
