//! Scheduler core.
//!
//! [`Kernel`] owns the thread table, the global runqueue and the per-core
//! current-thread slots. It never touches time or hardware: operations
//! record [`KernelEvent`]s and scheduler-interrupt requests in outboxes that
//! the platform drains after each critical section.
//!
//! Which threads sit in the runqueue depends on the strategy. The
//! single-core scheduler and core reallocation keep running threads queued
//! (the head of the queue is what runs). Dynamic thread selection removes a
//! thread while it runs, so no two cores can pick the same thread, and puts
//! it back when it is preempted.

mod rebalance;
mod select;

use serde::{Deserialize, Serialize};

use crate::error::KernelError;
use crate::platform::CostModel;
use crate::runqueue::{Position, RunQueue};
use crate::types::{AffinityMask, CoreId, MutexId, Priority, ThreadFlags, ThreadId, MAX_CORES};

pub use rebalance::AllocationTable;

/// How threads are mapped onto cores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Single-core scheduler that only raises the scheduler interrupt when a
    /// newly ready thread outranks the running one.
    SingleOptimized,
    /// Each core's scheduler pops its next thread from the shared runqueue.
    Dynamic,
    /// A rebalance routine maps the highest priority threads onto cores after
    /// every change; each core's scheduler reads its slot of the table.
    Reallocation,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::SingleOptimized => "single",
            Strategy::Dynamic => "dynamic",
            Strategy::Reallocation => "realloc",
        }
    }
}

/// Deliberate defects for checking that oracles notice them.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultInjection {
    /// Dynamic strategy: a preempted thread is not put back into the runqueue.
    pub skip_preempt_requeue: bool,
    /// Mutex owners never inherit their waiters' priority.
    pub disable_priority_inheritance: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub num_cores: usize,
    pub max_threads: usize,
    pub strategy: Strategy,
    pub cost_model: CostModel,
    #[doc(hidden)]
    #[serde(default)]
    pub faults: FaultInjection,
}

impl KernelConfig {
    pub const DEFAULT_MAX_THREADS: usize = 16;

    pub fn new(num_cores: usize, strategy: Strategy) -> Self {
        Self {
            num_cores,
            max_threads: Self::DEFAULT_MAX_THREADS,
            strategy,
            cost_model: CostModel::default(),
            faults: FaultInjection::default(),
        }
    }

    pub fn single() -> Self {
        Self::new(1, Strategy::SingleOptimized)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if !(1..=MAX_CORES).contains(&self.num_cores) {
            return Err(KernelError::Config(format!(
                "num_cores must be in 1..={MAX_CORES}, got {}",
                self.num_cores
            )));
        }
        if self.strategy == Strategy::SingleOptimized && self.num_cores != 1 {
            return Err(KernelError::Config(format!(
                "the single-core strategy needs exactly one core, got {}",
                self.num_cores
            )));
        }
        if self.max_threads == 0 || self.max_threads + self.num_cores > u8::MAX as usize {
            return Err(KernelError::Config(format!(
                "max_threads out of range: {}",
                self.max_threads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaitMode {
    Any,
    All,
}

impl WaitMode {
    /// Bits a wait for `mask` consumes from `pending`, or `None` if unsatisfied.
    pub fn matched(self, pending: ThreadFlags, mask: ThreadFlags) -> Option<ThreadFlags> {
        match self {
            WaitMode::Any => Some(pending & mask).filter(|m| *m != 0),
            WaitMode::All => (pending & mask == mask).then_some(mask),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum ThreadState {
    Invalid,
    Ready,
    Running { core: CoreId },
    Paused,
    FlagBlocked { mask: ThreadFlags, mode: WaitMode },
    MutexBlocked { mutex: MutexId },
}

impl ThreadState {
    pub fn is_active(self) -> bool {
        self != ThreadState::Invalid
    }

    pub fn is_blocked(self) -> bool {
        matches!(
            self,
            ThreadState::Paused
                | ThreadState::FlagBlocked { .. }
                | ThreadState::MutexBlocked { .. }
        )
    }
}

/// Value handed to a thread when the kernel resumes it after blocking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wakeup {
    /// Woken from `sleep_current`.
    Resumed,
    /// A flag wait was satisfied with these bits.
    Flags(ThreadFlags),
    /// Ownership of a mutex was handed over on unlock.
    Acquired(MutexId),
}

#[derive(Clone, Debug)]
pub struct ThreadControlBlock {
    pub tid: ThreadId,
    pub state: ThreadState,
    pub base_priority: Priority,
    pub effective_priority: Priority,
    pub affinity: AffinityMask,
    pub flags: ThreadFlags,
    pub is_idle: bool,
    last_core: Option<CoreId>,
    yield_requested: bool,
    wakeup: Option<Wakeup>,
}

impl ThreadControlBlock {
    fn vacant(tid: ThreadId) -> Self {
        Self {
            tid,
            state: ThreadState::Invalid,
            base_priority: Priority::IDLE,
            effective_priority: Priority::IDLE,
            affinity: AffinityMask::ALL,
            flags: 0,
            is_idle: false,
            last_core: None,
            yield_requested: false,
            wakeup: None,
        }
    }

    pub fn last_core(&self) -> Option<CoreId> {
        self.last_core
    }
}

/// Observable side effects of kernel operations, in order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum KernelEvent {
    ThreadCreated {
        tid: ThreadId,
        priority: Priority,
        idle: bool,
    },
    ContextSwitch {
        core: CoreId,
        from: Option<ThreadId>,
        to: ThreadId,
    },
    Migration {
        tid: ThreadId,
        from: CoreId,
        to: CoreId,
    },
    IdleEnter {
        core: CoreId,
    },
    FlagSet {
        target: ThreadId,
        mask: ThreadFlags,
    },
    FlagWait {
        tid: ThreadId,
        mask: ThreadFlags,
        matched: Option<ThreadFlags>,
    },
    Lock {
        tid: ThreadId,
        mutex: MutexId,
        acquired: bool,
    },
    Unlock {
        tid: ThreadId,
        mutex: MutexId,
        next_owner: Option<ThreadId>,
    },
    Sleep {
        tid: ThreadId,
    },
    Wake {
        tid: ThreadId,
    },
    Exit {
        tid: ThreadId,
    },
    PriorityChanged {
        tid: ThreadId,
        effective: Priority,
    },
    Rebalance {
        changed: Vec<CoreId>,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelStats {
    pub rq_inserts: u64,
    pub rq_removes: u64,
    pub rq_advances: u64,
    pub scheduler_invocations: u64,
    pub context_switches: u64,
    pub preemptions: u64,
    pub migrations: u64,
    pub rebalances: u64,
    /// Sum over rebalance runs of the number of runnable threads considered.
    pub rebalance_work: u64,
    /// Readiness, priority and affinity changes the strategy was told about.
    pub state_changes: u64,
    pub flag_ops: u64,
}

impl KernelStats {
    pub fn runqueue_ops(&self) -> u64 {
        self.rq_inserts + self.rq_removes + self.rq_advances
    }
}

#[derive(Clone, Debug, Default)]
pub(crate) struct MutexState {
    pub(crate) owner: Option<ThreadId>,
    /// Arrival order; the next owner is the highest priority, earliest waiter.
    pub(crate) waiters: Vec<ThreadId>,
}

/// Copy of the scheduling-relevant kernel state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSnapshot {
    pub running: Vec<Option<ThreadId>>,
    pub threads: Vec<ThreadView>,
    pub mutex_owners: Vec<Option<ThreadId>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadView {
    pub tid: ThreadId,
    #[serde(flatten)]
    pub state: ThreadState,
    pub base_priority: Priority,
    pub effective_priority: Priority,
    pub affinity: AffinityMask,
    pub idle: bool,
}

/// Scheduling context switch performed by [`Kernel::schedule`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Switch {
    pub core: CoreId,
    pub from: Option<ThreadId>,
    pub to: ThreadId,
}

pub struct Kernel {
    config: KernelConfig,
    threads: Vec<ThreadControlBlock>,
    runqueue: RunQueue,
    current: Vec<Option<ThreadId>>,
    /// Priority a pending scheduler request on each core was raised for.
    promised: Vec<Priority>,
    allocation: AllocationTable,
    pub(crate) mutexes: Vec<MutexState>,
    started: bool,
    requests: Vec<CoreId>,
    events: Vec<KernelEvent>,
    stats: KernelStats,
}

impl Kernel {
    pub fn new(config: KernelConfig) -> Result<Self, KernelError> {
        config.validate()?;
        let total = config.max_threads + config.num_cores;
        let threads = (0..total)
            .map(|i| ThreadControlBlock::vacant(ThreadId::new(i as u8)))
            .collect();
        Ok(Self {
            runqueue: RunQueue::new(config.max_threads),
            current: vec![None; config.num_cores],
            promised: vec![Priority::IDLE; config.num_cores],
            allocation: AllocationTable::new(config.num_cores),
            threads,
            mutexes: Vec::new(),
            started: false,
            requests: Vec::new(),
            events: Vec::new(),
            stats: KernelStats::default(),
            config,
        })
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn num_cores(&self) -> usize {
        self.config.num_cores
    }

    pub fn strategy(&self) -> Strategy {
        self.config.strategy
    }

    pub fn is_started(&self) -> bool {
        self.started
    }

    pub fn stats(&self) -> &KernelStats {
        &self.stats
    }

    pub fn runqueue(&self) -> &RunQueue {
        &self.runqueue
    }

    pub fn allocation(&self) -> &AllocationTable {
        &self.allocation
    }

    pub fn current(&self, core: CoreId) -> Option<ThreadId> {
        self.current[core.index()]
    }

    pub fn idle_thread(&self, core: CoreId) -> ThreadId {
        ThreadId::new((self.config.max_threads + core.index()) as u8)
    }

    pub fn is_idle_thread(&self, tid: ThreadId) -> bool {
        tid.index() >= self.config.max_threads
    }

    pub fn thread(&self, tid: ThreadId) -> Option<&ThreadControlBlock> {
        self.threads.get(tid.index())
    }

    pub fn threads(&self) -> impl Iterator<Item = &ThreadControlBlock> {
        self.threads.iter()
    }

    /// Application threads that have not exited.
    pub fn live_threads(&self) -> impl Iterator<Item = &ThreadControlBlock> {
        self.threads
            .iter()
            .filter(|t| !t.is_idle && t.state.is_active())
    }

    pub fn mutex_count(&self) -> usize {
        self.mutexes.len()
    }

    pub fn mutex_owner(&self, mutex: MutexId) -> Option<ThreadId> {
        self.mutexes.get(mutex.index()).and_then(|m| m.owner)
    }

    /// Waiters of `mutex` ordered by effective priority, FIFO among equals.
    pub fn mutex_waiters(&self, mutex: MutexId) -> Vec<ThreadId> {
        let Some(state) = self.mutexes.get(mutex.index()) else {
            return Vec::new();
        };
        let mut waiters: Vec<(usize, ThreadId)> =
            state.waiters.iter().copied().enumerate().collect();
        waiters.sort_by_key(|&(arrival, tid)| {
            (std::cmp::Reverse(self.tcb(tid).effective_priority), arrival)
        });
        waiters.into_iter().map(|(_, tid)| tid).collect()
    }

    /// Scheduler-interrupt requests raised since the last call.
    pub fn take_requests(&mut self) -> Vec<CoreId> {
        std::mem::take(&mut self.requests)
    }

    pub fn take_events(&mut self) -> Vec<KernelEvent> {
        std::mem::take(&mut self.events)
    }

    /// Resumption value left for `tid` by the operation that unblocked it.
    pub fn take_wakeup(&mut self, tid: ThreadId) -> Option<Wakeup> {
        self.threads
            .get_mut(tid.index())
            .and_then(|t| t.wakeup.take())
    }

    pub fn create_mutex(&mut self) -> MutexId {
        assert!(self.mutexes.len() < u8::MAX as usize, "too many mutexes");
        self.mutexes.push(MutexState::default());
        MutexId::new((self.mutexes.len() - 1) as u8)
    }

    pub fn create_thread(
        &mut self,
        prio: Priority,
        affinity: AffinityMask,
    ) -> Result<ThreadId, KernelError> {
        if !prio.is_application() {
            return Err(KernelError::InvalidArgument(
                "application priority must be in 1..=31",
            ));
        }
        self.check_affinity(affinity)?;
        let slot = self.threads[..self.config.max_threads]
            .iter()
            .position(|t| t.state == ThreadState::Invalid)
            .ok_or(KernelError::Capacity(self.config.max_threads))?;
        let tid = ThreadId::new(slot as u8);
        let tcb = &mut self.threads[slot];
        *tcb = ThreadControlBlock::vacant(tid);
        tcb.base_priority = prio;
        tcb.effective_priority = prio;
        tcb.affinity = affinity;
        self.events.push(KernelEvent::ThreadCreated {
            tid,
            priority: prio,
            idle: false,
        });
        self.make_ready(tid);
        if self.started {
            self.state_changed(tid);
        }
        Ok(tid)
    }

    /// Creates one idle thread per core, each pinned to its core.
    ///
    /// Booting the cores and invoking their schedulers is the platform's
    /// half of threading startup.
    pub fn start_threading(&mut self) -> Result<(), KernelError> {
        if self.started {
            return Err(KernelError::State("threading already started"));
        }
        self.started = true;
        for core in 0..self.config.num_cores {
            let core = CoreId::new(core as u8);
            let tid = self.idle_thread(core);
            let tcb = &mut self.threads[tid.index()];
            tcb.state = ThreadState::Ready;
            tcb.is_idle = true;
            tcb.affinity = AffinityMask::only(core);
            self.events.push(KernelEvent::ThreadCreated {
                tid,
                priority: Priority::IDLE,
                idle: true,
            });
        }
        if self.config.strategy == Strategy::Reallocation {
            // Every core runs its scheduler during boot anyway.
            let _ = self.rebalance();
        }
        Ok(())
    }

    /// Moves the running thread of `core` behind its same-priority peers.
    pub fn yield_current(&mut self, core: CoreId) -> Result<(), KernelError> {
        let tid = self.running_app_thread(core)?;
        let prio = self.tcb(tid).effective_priority;
        self.tcb_mut(tid).yield_requested = true;
        match self.config.strategy {
            Strategy::SingleOptimized => {
                debug_assert_eq!(self.runqueue.peek_level(prio), Some(tid));
                self.runqueue
                    .advance(prio)
                    .expect("running thread is queued");
                self.stats.rq_advances += 1;
            }
            // Rotation happens in the scheduler, which puts the thread back
            // at the tail of its level when a peer is waiting.
            Strategy::Dynamic => {}
            Strategy::Reallocation => {
                if self.runqueue.peek_level(prio) == Some(tid) {
                    self.runqueue
                        .advance(prio)
                        .expect("running thread is queued");
                    self.stats.rq_advances += 1;
                } else {
                    self.dequeue(tid);
                    self.enqueue(tid, Position::Tail);
                }
                self.state_changed(tid);
            }
        }
        self.request(core);
        Ok(())
    }

    pub fn sleep_current(&mut self, core: CoreId) -> Result<ThreadId, KernelError> {
        let tid = self.running_app_thread(core)?;
        self.events.push(KernelEvent::Sleep { tid });
        self.block_current(core, ThreadState::Paused);
        Ok(tid)
    }

    /// Readies a sleeping thread. Returns false if `tid` was not sleeping.
    pub fn wake(&mut self, tid: ThreadId) -> bool {
        match self.threads.get(tid.index()) {
            Some(t) if t.state == ThreadState::Paused => {}
            _ => return false,
        }
        self.events.push(KernelEvent::Wake { tid });
        self.tcb_mut(tid).wakeup = Some(Wakeup::Resumed);
        self.make_ready(tid);
        self.state_changed(tid);
        true
    }

    /// Terminates the running thread of `core`, releasing its mutexes.
    pub fn exit_current(&mut self, core: CoreId) -> Result<ThreadId, KernelError> {
        let tid = self.running_app_thread(core)?;
        let owned: Vec<MutexId> = self
            .mutexes
            .iter()
            .enumerate()
            .filter(|(_, m)| m.owner == Some(tid))
            .map(|(i, _)| MutexId::new(i as u8))
            .collect();
        for mutex in owned {
            self.release_mutex(tid, mutex);
        }
        self.events.push(KernelEvent::Exit { tid });
        self.block_current(core, ThreadState::Invalid);
        let tcb = self.tcb_mut(tid);
        tcb.flags = 0;
        tcb.wakeup = None;
        Ok(tid)
    }

    pub fn set_priority(&mut self, tid: ThreadId, prio: Priority) -> Result<(), KernelError> {
        self.check_active(tid)?;
        if !prio.is_application() {
            return Err(KernelError::InvalidArgument(
                "application priority must be in 1..=31",
            ));
        }
        if self.tcb(tid).base_priority == prio {
            return Ok(());
        }
        self.tcb_mut(tid).base_priority = prio;
        self.recompute_priority(tid);
        Ok(())
    }

    pub fn set_affinity(&mut self, tid: ThreadId, mask: AffinityMask) -> Result<(), KernelError> {
        self.check_affinity(mask)?;
        self.check_active(tid)?;
        if self.tcb(tid).affinity == mask {
            return Ok(());
        }
        self.tcb_mut(tid).affinity = mask;
        self.state_changed(tid);
        Ok(())
    }

    pub fn snapshot(&self) -> KernelSnapshot {
        KernelSnapshot {
            running: self.current.clone(),
            threads: self
                .threads
                .iter()
                .map(|t| ThreadView {
                    tid: t.tid,
                    state: t.state,
                    base_priority: t.base_priority,
                    effective_priority: t.effective_priority,
                    affinity: t.affinity,
                    idle: t.is_idle,
                })
                .collect(),
            mutex_owners: self.mutexes.iter().map(|m| m.owner).collect(),
        }
    }

    /// Checks the structural invariants that must hold after every operation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let rq = &self.runqueue;
        let mut levels = 0u32;
        for (tid, prio) in rq.iter() {
            levels |= 1 << prio.index();
            let t = self.tcb(tid);
            if t.effective_priority != prio {
                return Err(format!(
                    "{tid} queued at {prio}, effective {}",
                    t.effective_priority
                ));
            }
        }
        if levels != rq.bitcache() {
            return Err(format!(
                "bitcache {:#x} != levels {levels:#x}",
                rq.bitcache()
            ));
        }
        let mut seen = Vec::new();
        for (core, cur) in self.current.iter().enumerate() {
            let Some(cur) = *cur else { continue };
            if seen.contains(&cur) {
                return Err(format!("{cur} current on two cores"));
            }
            seen.push(cur);
            let core = CoreId::new(core as u8);
            let t = self.tcb(cur);
            if let ThreadState::Running { core: c } = t.state {
                if c != core {
                    return Err(format!("{cur} current on {core} but running on {c}"));
                }
            }
        }
        for t in &self.threads {
            if t.effective_priority < t.base_priority {
                return Err(format!("{} effective below base", t.tid));
            }
            if let ThreadState::Running { core } = t.state {
                if self.current[core.index()] != Some(t.tid) {
                    return Err(format!("{} running on {core} but not current there", t.tid));
                }
            }
            if t.is_idle {
                continue;
            }
            let queued = rq.contains(t.tid);
            let expect = match t.state {
                ThreadState::Ready => !self.config.faults.skip_preempt_requeue || queued,
                ThreadState::Running { .. } => self.config.strategy != Strategy::Dynamic,
                _ => false,
            };
            if queued != expect {
                return Err(format!("{} queued={queued} in state {:?}", t.tid, t.state));
            }
        }
        for (i, m) in self.mutexes.iter().enumerate() {
            let id = MutexId::new(i as u8);
            for &w in &m.waiters {
                if self.tcb(w).state != (ThreadState::MutexBlocked { mutex: id }) {
                    return Err(format!(
                        "{w} waits on {id} in state {:?}",
                        self.tcb(w).state
                    ));
                }
            }
            if let Some(owner) = m.owner {
                if !self.config.faults.disable_priority_inheritance {
                    let top = m
                        .waiters
                        .iter()
                        .map(|w| self.tcb(*w).effective_priority)
                        .max();
                    if top.is_some_and(|top| top > self.tcb(owner).effective_priority) {
                        return Err(format!("{owner} owns {id} below a waiter's priority"));
                    }
                }
            } else if !m.waiters.is_empty() {
                return Err(format!("{id} unlocked with waiters"));
            }
        }
        Ok(())
    }

    // ---- internal helpers shared with the strategy and sync modules ----

    pub(crate) fn tcb(&self, tid: ThreadId) -> &ThreadControlBlock {
        &self.threads[tid.index()]
    }

    pub(crate) fn tcb_mut(&mut self, tid: ThreadId) -> &mut ThreadControlBlock {
        &mut self.threads[tid.index()]
    }

    pub(crate) fn push_event(&mut self, event: KernelEvent) {
        self.events.push(event);
    }

    pub(crate) fn set_wakeup(&mut self, tid: ThreadId, wakeup: Wakeup) {
        self.tcb_mut(tid).wakeup = Some(wakeup);
    }

    pub(crate) fn count_flag_op(&mut self) {
        self.stats.flag_ops += 1;
    }

    fn check_affinity(&self, mask: AffinityMask) -> Result<(), KernelError> {
        if mask.is_valid_for(self.config.num_cores) {
            Ok(())
        } else {
            Err(KernelError::InvalidArgument(
                "affinity mask permits no core",
            ))
        }
    }

    pub(crate) fn check_active(&self, tid: ThreadId) -> Result<(), KernelError> {
        match self.threads.get(tid.index()) {
            Some(t) if t.state.is_active() && !t.is_idle => Ok(()),
            _ => Err(KernelError::NotFound(tid)),
        }
    }

    /// The application thread currently running on `core`.
    pub(crate) fn running_app_thread(&self, core: CoreId) -> Result<ThreadId, KernelError> {
        let cur = self
            .current
            .get(core.index())
            .copied()
            .flatten()
            .ok_or(KernelError::NoCurrentThread(core))?;
        let t = self.tcb(cur);
        if t.is_idle || t.state != (ThreadState::Running { core }) {
            return Err(KernelError::NoCurrentThread(core));
        }
        Ok(cur)
    }

    pub(crate) fn request(&mut self, core: CoreId) {
        if !self.requests.contains(&core) {
            self.requests.push(core);
        }
    }

    fn running_in_queue(&self) -> bool {
        self.config.strategy != Strategy::Dynamic
    }

    pub(crate) fn enqueue(&mut self, tid: ThreadId, pos: Position) {
        let prio = self.tcb(tid).effective_priority;
        self.runqueue
            .add(tid, prio, pos)
            .expect("runqueue sized for every application thread");
        self.stats.rq_inserts += 1;
    }

    pub(crate) fn dequeue(&mut self, tid: ThreadId) {
        let prio = self.tcb(tid).effective_priority;
        match self.runqueue.del(tid, prio) {
            Ok(()) => self.stats.rq_removes += 1,
            // A thread lost by the skip-requeue fault is Ready but unqueued.
            Err(_) if self.config.faults.skip_preempt_requeue => {}
            Err(e) => panic!("{tid} missing from runqueue: {e}"),
        }
    }

    pub(crate) fn make_ready(&mut self, tid: ThreadId) {
        self.tcb_mut(tid).state = ThreadState::Ready;
        self.enqueue(tid, Position::Tail);
    }

    /// Takes the running thread of `core` off the CPU into `state` and asks
    /// for a scheduler run on `core`.
    pub(crate) fn block_current(&mut self, core: CoreId, state: ThreadState) {
        let tid = self.current[core.index()].expect("blocking with no current thread");
        if self.running_in_queue() {
            self.dequeue(tid);
        }
        self.tcb_mut(tid).state = state;
        self.request(core);
        self.state_changed(tid);
    }

    /// Recomputes the effective priority of `tid` from its base priority and
    /// the waiters of every mutex it owns, then propagates the change along
    /// the chain of mutexes `tid` itself may be waiting on.
    pub(crate) fn recompute_priority(&mut self, tid: ThreadId) {
        let mut next = Some(tid);
        while let Some(tid) = next.take() {
            let t = self.tcb(tid);
            let mut prio = t.base_priority;
            if !self.config.faults.disable_priority_inheritance {
                for m in self.mutexes.iter().filter(|m| m.owner == Some(tid)) {
                    for &w in &m.waiters {
                        prio = prio.max(self.tcb(w).effective_priority);
                    }
                }
            }
            if prio == t.effective_priority {
                return;
            }
            let state = t.state;
            match state {
                ThreadState::Ready => {
                    self.dequeue(tid);
                    self.tcb_mut(tid).effective_priority = prio;
                    self.enqueue(tid, Position::Tail);
                }
                ThreadState::Running { .. } if self.running_in_queue() => {
                    self.dequeue(tid);
                    self.tcb_mut(tid).effective_priority = prio;
                    self.enqueue(tid, Position::Head);
                }
                ThreadState::MutexBlocked { mutex } => {
                    self.tcb_mut(tid).effective_priority = prio;
                    next = self.mutexes[mutex.index()].owner;
                }
                _ => self.tcb_mut(tid).effective_priority = prio,
            }
            self.events.push(KernelEvent::PriorityChanged {
                tid,
                effective: prio,
            });
            self.state_changed(tid);
        }
    }

    /// Single hook run after every readiness, priority or affinity change.
    pub(crate) fn state_changed(&mut self, tid: ThreadId) {
        self.stats.state_changes += 1;
        self.maybe_trigger_schedule(tid);
    }
}
