//! Deterministic backend: simulated cores interleaved one step at a time.

use std::collections::VecDeque;
use std::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::exec::{self, cost_between, event_record, wakeup_reply};
use super::trace::{PlatformStats, QuiescentState, RunOutcome, Trace, TraceKind, TraceRecord};
use super::{BlockedThread, DeadlockReport, PlatformError, Policy, RunError, RunOptions};
use crate::body::{Reply, Scenario, StepContext, Syscall, ThreadBody, WakeOutbox};
use crate::kernel::{Kernel, KernelConfig, ThreadState};
use crate::types::{CoreId, MutexId, ThreadId, Tick};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Message {
    Boot { sent_at: Tick },
    Sched { sent_at: Tick },
}

#[derive(Debug, Default)]
struct CoreSim {
    clock: Tick,
    booted: bool,
    boot_sent: bool,
    irq_enabled: bool,
    local_pending: bool,
    depth: u32,
    sched_in_flight: bool,
    inbox: VecDeque<Message>,
}

#[derive(Debug, Default)]
struct BigLock {
    holder: Option<CoreId>,
    free_at: Tick,
    waiters: VecDeque<CoreId>,
}

/// Outcome of [`VirtualPlatform::critical_enter`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsEntry {
    Entered,
    /// Another core holds the lock; this core gets it when that core leaves.
    Spinning,
}

/// Virtual multicore machine running a [`Kernel`].
///
/// Each core has its own tick clock. The big lock remembers when it was
/// last released, so a core that takes it earlier in its own time spins
/// until then. Scheduler signals between cores travel through per-core FIFOs
/// and cost `ipi_delivery` ticks; a trigger aimed at a core that already has
/// a signal in flight is absorbed by it.
pub struct VirtualPlatform {
    kernel: Kernel,
    cores: Vec<CoreSim>,
    lock: BigLock,
    bodies: Vec<Option<Box<dyn ThreadBody>>>,
    replies: Vec<Option<Reply>>,
    scenario: Option<Scenario>,
    outbox: WakeOutbox,
    records: Vec<TraceRecord>,
    snapshots: Vec<QuiescentState>,
    record_snapshots: bool,
    stats: PlatformStats,
}

impl VirtualPlatform {
    pub fn new(config: KernelConfig) -> Result<Self, PlatformError> {
        let kernel = Kernel::new(config)?;
        let n = kernel.num_cores();
        let slots = kernel.threads().count();
        Ok(Self {
            cores: (0..n).map(|_| CoreSim::default()).collect(),
            lock: BigLock::default(),
            bodies: (0..slots).map(|_| None).collect(),
            replies: vec![None; slots],
            scenario: None,
            outbox: WakeOutbox::default(),
            records: Vec::new(),
            snapshots: Vec::new(),
            record_snapshots: false,
            stats: PlatformStats::default(),
            kernel,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn num_cores(&self) -> usize {
        self.cores.len()
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn stats(&self) -> &PlatformStats {
        &self.stats
    }

    pub fn clock(&self, core: CoreId) -> Tick {
        self.cores[core.index()].clock
    }

    /// Lets `core` spend `ticks` of local time.
    pub fn advance(&mut self, core: CoreId, ticks: Tick) {
        self.cores[core.index()].clock += ticks;
    }

    pub fn outbox(&self) -> &WakeOutbox {
        &self.outbox
    }

    pub fn set_record_snapshots(&mut self, on: bool) {
        self.record_snapshots = on;
    }

    /// Installs the scenario that core 0 boots on its first step.
    pub fn load(&mut self, scenario: Scenario) {
        self.scenario = Some(scenario);
    }

    fn push(&mut self, rec: TraceRecord) {
        self.records.push(rec);
    }

    fn check_core(&self, core: CoreId) -> Result<(), PlatformError> {
        if core.index() < self.cores.len() {
            Ok(())
        } else {
            Err(PlatformError::InvalidCore(core))
        }
    }

    // ---- big lock ----

    pub fn critical_enter(&mut self, core: CoreId) -> CsEntry {
        let c = &mut self.cores[core.index()];
        if c.depth > 0 {
            c.depth += 1;
            return CsEntry::Entered;
        }
        match self.lock.holder {
            None => {
                self.acquire(core);
                CsEntry::Entered
            }
            Some(_) => {
                if !self.lock.waiters.contains(&core) {
                    self.lock.waiters.push_back(core);
                }
                CsEntry::Spinning
            }
        }
    }

    fn acquire(&mut self, core: CoreId) {
        let free_at = self.lock.free_at;
        let c = &mut self.cores[core.index()];
        let start = c.clock;
        if free_at > start {
            c.clock = free_at;
            self.stats.spins += 1;
            self.stats.spin_ticks += free_at - start;
            self.push(TraceRecord::new(start, core, TraceKind::Spin).with("until", free_at));
        }
        self.lock.holder = Some(core);
        self.cores[core.index()].depth = 1;
        let t = self.cores[core.index()].clock;
        self.push(TraceRecord::new(t, core, TraceKind::CsEnter));
    }

    /// Leaves one nesting level; the outermost exit releases the lock and
    /// then runs a scheduler interrupt raised on this core meanwhile.
    pub fn critical_exit(&mut self, core: CoreId) -> Result<(), PlatformError> {
        self.check_core(core)?;
        let c = &mut self.cores[core.index()];
        if c.depth == 0 || self.lock.holder != Some(core) {
            return Err(PlatformError::NotInCritical(core));
        }
        c.depth -= 1;
        if c.depth > 0 {
            return Ok(());
        }
        self.flush_kernel(core);
        let t = self.cores[core.index()].clock;
        self.push(TraceRecord::new(t, core, TraceKind::CsExit));
        self.lock.holder = None;
        self.lock.free_at = t;
        if let Some(next) = self.lock.waiters.pop_front() {
            self.acquire(next);
        }
        self.run_local_irq(core);
        Ok(())
    }

    /// Enters the critical section and returns a guard that leaves it when
    /// dropped. Panics if another core holds the lock.
    pub fn critical(&mut self, core: CoreId) -> CriticalGuard<'_> {
        assert_eq!(
            self.critical_enter(core),
            CsEntry::Entered,
            "{core} would spin"
        );
        CriticalGuard {
            platform: self,
            core,
        }
    }

    pub fn in_critical(&self, core: CoreId) -> bool {
        self.cores[core.index()].depth > 0
    }

    /// Runs `f` on the kernel inside `core`'s critical section, charging its
    /// cost to `core` and dispatching the events and scheduler requests it
    /// produced.
    pub fn with_kernel<R>(&mut self, core: CoreId, f: impl FnOnce(&mut Kernel) -> R) -> R {
        assert_eq!(
            self.critical_enter(core),
            CsEntry::Entered,
            "{core} would spin"
        );
        let r = self.kernel_op(core, f);
        self.critical_exit(core).expect("entered above");
        r
    }

    fn kernel_op<R>(&mut self, core: CoreId, f: impl FnOnce(&mut Kernel) -> R) -> R {
        debug_assert_eq!(self.lock.holder, Some(core));
        for tid in self.outbox.drain() {
            self.kernel.wake(tid);
        }
        let before = *self.kernel.stats();
        let r = f(&mut self.kernel);
        let cost = cost_between(
            &self.kernel.config().cost_model,
            &before,
            self.kernel.stats(),
        );
        self.cores[core.index()].clock += cost;
        self.flush_kernel(core);
        r
    }

    fn flush_kernel(&mut self, core: CoreId) {
        let t = self.cores[core.index()].clock;
        for ev in self.kernel.take_events() {
            self.records.push(event_record(t, core, ev));
        }
        for target in self.kernel.take_requests() {
            self.trigger_schedule_on(core, target);
        }
    }

    // ---- signals ----

    /// Raises the scheduler interrupt of `target` from `from`.
    ///
    /// On the same core it is handled once the critical section is left (or
    /// right away outside one). Across cores it becomes a signal in
    /// `target`'s FIFO, unless one is already in flight there.
    pub fn trigger_schedule_on(&mut self, from: CoreId, target: CoreId) {
        if from == target {
            self.cores[from.index()].local_pending = true;
            if !self.in_critical(from) {
                self.run_local_irq(from);
            }
            return;
        }
        let sent_at = self.cores[from.index()].clock;
        let t = &mut self.cores[target.index()];
        if t.sched_in_flight {
            self.stats.ipis_coalesced += 1;
            return;
        }
        t.sched_in_flight = true;
        t.inbox.push_back(Message::Sched { sent_at });
        self.stats.ipis += 1;
        self.push(TraceRecord::new(sent_at, from, TraceKind::Ipi).with("target", target.index()));
    }

    /// Sends the boot message to a secondary core.
    pub fn start_core(&mut self, core: CoreId) -> Result<(), PlatformError> {
        self.check_core(core)?;
        if core.index() == 0 || self.cores[core.index()].boot_sent {
            return Err(PlatformError::AlreadyStarted(core));
        }
        let sent_at = self.cores[0].clock;
        let c = &mut self.cores[core.index()];
        c.boot_sent = true;
        c.inbox.push_back(Message::Boot { sent_at });
        self.push(
            TraceRecord::new(sent_at, CoreId::new(0), TraceKind::CoreStart)
                .with("target", core.index()),
        );
        Ok(())
    }

    fn run_local_irq(&mut self, core: CoreId) {
        let c = &self.cores[core.index()];
        if !c.local_pending || !c.irq_enabled || c.depth > 0 || self.lock.holder.is_some() {
            return;
        }
        self.cores[core.index()].local_pending = false;
        self.stats.local_schedules += 1;
        self.run_scheduler(core, "local");
    }

    fn run_scheduler(&mut self, core: CoreId, cause: &'static str) {
        let t = self.cores[core.index()].clock;
        self.push(TraceRecord::new(t, core, TraceKind::Schedule).with("cause", cause));
        self.critical_enter(core);
        self.kernel_op(core, |k| k.schedule(core));
        self.critical_exit(core).expect("entered above");
    }

    // ---- stepping ----

    fn lock_blocks(&self, core: CoreId) -> bool {
        self.lock.holder.is_some_and(|h| h != core)
    }

    fn running_app(&self, core: CoreId) -> Option<ThreadId> {
        let tid = self.kernel.current(core)?;
        let t = self.kernel.thread(tid)?;
        (!t.is_idle
            && t.state == (ThreadState::Running { core })
            && self.bodies[tid.index()].is_some())
        .then_some(tid)
    }

    /// Whether `core` can take a step now.
    pub fn has_work(&self, core: CoreId) -> bool {
        if self.lock_blocks(core) {
            return false;
        }
        let c = &self.cores[core.index()];
        if !c.booted {
            return if core.index() == 0 {
                self.scenario.is_some()
            } else {
                matches!(c.inbox.front(), Some(Message::Boot { .. }))
            };
        }
        (c.local_pending && c.irq_enabled)
            || !c.inbox.is_empty()
            || self.running_app(core).is_some()
    }

    /// Local time at which `core`'s next step starts.
    fn next_time(&self, core: CoreId) -> Tick {
        let c = &self.cores[core.index()];
        let delay = self.kernel.config().cost_model.ipi_delivery;
        match c.inbox.front() {
            Some(Message::Boot { sent_at } | Message::Sched { sent_at })
                if !(c.booted && c.local_pending && c.irq_enabled) =>
            {
                c.clock.max(sent_at + delay)
            }
            _ => c.clock,
        }
    }

    /// No scheduler interrupt pending, no message in flight, lock free.
    pub fn is_quiescent(&self) -> bool {
        self.lock.holder.is_none()
            && self
                .cores
                .iter()
                .all(|c| !c.local_pending && !c.sched_in_flight && c.inbox.is_empty())
    }

    /// Performs one unit of work on `core`: booting, a pending scheduler
    /// interrupt, a delivered signal or one step of the running thread.
    pub fn step(&mut self, core: CoreId) -> bool {
        if !self.has_work(core) {
            return false;
        }
        self.stats.steps += 1;
        let i = core.index();
        if !self.cores[i].booted {
            if i == 0 {
                self.boot_primary();
            } else {
                self.boot_secondary(core);
            }
        } else if self.cores[i].local_pending && self.cores[i].irq_enabled {
            self.run_local_irq(core);
        } else if let Some(msg) = self.cores[i].inbox.pop_front() {
            let Message::Sched { sent_at } = msg else {
                unreachable!("boot message after boot")
            };
            let delay = self.kernel.config().cost_model.ipi_delivery;
            let c = &mut self.cores[i];
            c.sched_in_flight = false;
            c.clock = c.clock.max(sent_at + delay);
            let t = c.clock;
            self.stats.signal_schedules += 1;
            self.push(TraceRecord::new(t, core, TraceKind::SchedIrq));
            self.run_scheduler(core, "ipi");
        } else if let Some(tid) = self.running_app(core) {
            self.step_thread(core, tid);
        }
        if self.record_snapshots && self.is_quiescent() {
            let snapshot = self.kernel.snapshot();
            if self.snapshots.last().map(|q| &q.snapshot) != Some(&snapshot) {
                self.snapshots.push(QuiescentState {
                    position: self.records.len(),
                    snapshot,
                });
            }
        }
        true
    }

    fn boot_primary(&mut self) {
        let core = CoreId::new(0);
        let scenario = self.scenario.take().expect("has_work checked the scenario");
        self.critical_enter(core);
        let mut created = Vec::new();
        self.kernel_op(core, |k| {
            for _ in 0..scenario.mutexes {
                k.create_mutex();
            }
            for spec in &scenario.threads {
                created.push(k.create_thread(spec.priority, spec.affinity));
            }
            k.start_threading().expect("booted once");
        });
        for (spec, tid) in scenario.threads.into_iter().zip(created) {
            let tid = tid.expect("scenario fits the thread table");
            self.bodies[tid.index()] = Some(spec.body);
        }
        self.critical_exit(core).expect("entered above");
        for c in 1..self.cores.len() {
            self.start_core(CoreId::new(c as u8)).expect("first boot");
        }
        self.enable_sched_irq(core);
        self.run_scheduler(core, "boot");
    }

    fn boot_secondary(&mut self, core: CoreId) {
        let delay = self.kernel.config().cost_model.ipi_delivery;
        let c = &mut self.cores[core.index()];
        let Some(Message::Boot { sent_at }) = c.inbox.pop_front() else {
            unreachable!("has_work checked the boot message")
        };
        c.clock = c.clock.max(sent_at + delay);
        let t = c.clock;
        self.push(TraceRecord::new(t, core, TraceKind::Boot).with("from_core", 0));
        self.enable_sched_irq(core);
        self.run_scheduler(core, "boot");
    }

    fn enable_sched_irq(&mut self, core: CoreId) {
        let c = &mut self.cores[core.index()];
        c.booted = true;
        c.irq_enabled = true;
        let t = c.clock;
        self.push(TraceRecord::new(t, core, TraceKind::SchedIrqEnable));
    }

    fn step_thread(&mut self, core: CoreId, tid: ThreadId) {
        let reply = self.replies[tid.index()]
            .take()
            .or_else(|| self.kernel.take_wakeup(tid).map(wakeup_reply));
        let mut body = self.bodies[tid.index()]
            .take()
            .expect("running thread has a body");
        let call = body.step(&mut StepContext::new(tid, core, reply, &self.outbox));
        self.bodies[tid.index()] = Some(body);
        match call {
            Syscall::Compute(ticks) => {
                self.cores[core.index()].clock += ticks;
                self.replies[tid.index()] = Some(Reply::Done);
                self.flush_outbox(core);
            }
            Syscall::Mark(label) => {
                let t = self.cores[core.index()].clock;
                self.push(
                    TraceRecord::new(t, core, TraceKind::Mark)
                        .from(Some(tid))
                        .with("label", label),
                );
                self.replies[tid.index()] = Some(Reply::Done);
                self.flush_outbox(core);
            }
            call => {
                let exiting = matches!(call, Syscall::Exit);
                self.critical_enter(core);
                let reply = self.kernel_op(core, |k| exec::apply(k, core, call));
                if exiting && reply.is_none() {
                    self.bodies[tid.index()] = None;
                }
                self.replies[tid.index()] = reply;
                self.critical_exit(core).expect("entered above");
            }
        }
    }

    fn flush_outbox(&mut self, core: CoreId) {
        if !self.outbox.is_empty() {
            self.critical_enter(core);
            self.kernel_op(core, |_| {});
            self.critical_exit(core).expect("entered above");
        }
    }

    // ---- whole runs ----

    /// Runs until no core has work, choosing cores by `opts.policy`.
    pub fn run_to_end(&mut self, seed: u64, opts: &RunOptions) -> Result<RunOutcome, RunError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.cores.len();
        let mut last = n - 1;
        let mut ready = Vec::with_capacity(n);
        loop {
            if self.stats.steps >= opts.max_steps {
                return Err(RunError::StepLimit(opts.max_steps));
            }
            ready.clear();
            ready.extend(
                (0..n)
                    .map(|c| CoreId::new(c as u8))
                    .filter(|&c| self.has_work(c)),
            );
            let Some(&first) = ready.first() else {
                return self.finish();
            };
            let pick = match opts.policy {
                Policy::Random => ready[rng.gen_range(0..ready.len())],
                Policy::RoundRobin => *ready.iter().find(|c| c.index() > last).unwrap_or(&first),
                Policy::EarliestClock => *ready
                    .iter()
                    .min_by_key(|&&c| (self.next_time(c), c.index()))
                    .expect("nonempty"),
            };
            last = pick.index();
            self.step(pick);
        }
    }

    fn finish(&mut self) -> Result<RunOutcome, RunError> {
        let live: Vec<BlockedThread> = self
            .kernel
            .live_threads()
            .map(|t| BlockedThread {
                tid: t.tid,
                state: t.state,
                base_priority: t.base_priority,
                effective_priority: t.effective_priority,
                owns: (0..self.kernel.mutex_count())
                    .map(|m| MutexId::new(m as u8))
                    .filter(|&m| self.kernel.mutex_owner(m) == Some(t.tid))
                    .collect(),
            })
            .collect();
        if live.is_empty() {
            Ok(RunOutcome::Completed)
        } else if live.iter().all(|t| t.state == ThreadState::Paused) {
            Ok(RunOutcome::Parked)
        } else {
            Err(RunError::Deadlock(Box::new(DeadlockReport {
                threads: live,
                trace: None,
            })))
        }
    }

    pub fn into_trace(self, outcome: RunOutcome) -> Trace {
        Trace {
            records: self.records,
            snapshots: self.snapshots,
            kernel_stats: *self.kernel.stats(),
            platform_stats: self.stats,
            clocks: self.cores.iter().map(|c| c.clock).collect(),
            outcome,
        }
    }
}

/// Scope guard for [`VirtualPlatform::critical`]; derefs to the platform.
pub struct CriticalGuard<'a> {
    platform: &'a mut VirtualPlatform,
    core: CoreId,
}

impl CriticalGuard<'_> {
    pub fn core(&self) -> CoreId {
        self.core
    }

    /// Runs `f` on the kernel with this guard's section held.
    pub fn kernel_op<R>(&mut self, f: impl FnOnce(&mut Kernel) -> R) -> R {
        self.platform.kernel_op(self.core, f)
    }
}

impl Deref for CriticalGuard<'_> {
    type Target = VirtualPlatform;

    fn deref(&self) -> &VirtualPlatform {
        self.platform
    }
}

impl DerefMut for CriticalGuard<'_> {
    fn deref_mut(&mut self) -> &mut VirtualPlatform {
        self.platform
    }
}

impl Drop for CriticalGuard<'_> {
    fn drop(&mut self) {
        // Only the outermost level is ours to undo if the caller already
        // left the section by hand.
        if self.platform.in_critical(self.core) {
            let _ = self.platform.critical_exit(self.core);
        }
    }
}
