//! Host-parallel backend: one OS thread per virtual core.
//!
//! Kernel state sits behind a test-and-set spinlock. A worker takes the
//! lock to pick up its running thread, releases it while the thread body
//! steps, and takes it again to perform the resulting syscall, so thread
//! bodies on different cores really do run in parallel. Scheduler signals
//! are per-core atomic flags; a flag that is already set absorbs further
//! triggers.

use std::cell::UnsafeCell;
use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use super::exec::{self, event_record, wakeup_reply};
use super::trace::{PlatformStats, RunOutcome, Trace, TraceKind, TraceRecord};
use super::{BlockedThread, DeadlockReport, PlatformError, RunError, RunOptions};
use crate::body::{Reply, Scenario, StepContext, Syscall, ThreadBody, WakeOutbox};
use crate::kernel::{Kernel, KernelConfig, ThreadState};
use crate::types::{CoreId, MutexId, ThreadId};

pub(crate) struct SpinLock<T> {
    locked: AtomicBool,
    value: UnsafeCell<T>,
}

// SAFETY: the value is only reachable through a guard, and at most one guard
// exists at a time.
unsafe impl<T: Send> Sync for SpinLock<T> {}

impl<T> SpinLock<T> {
    pub(crate) fn new(value: T) -> Self {
        Self {
            locked: AtomicBool::new(false),
            value: UnsafeCell::new(value),
        }
    }

    /// Returns the guard and whether the caller had to wait.
    pub(crate) fn lock(&self) -> (SpinGuard<'_, T>, bool) {
        let mut waited = false;
        let mut spins = 0u32;
        while self
            .locked
            .compare_exchange_weak(false, true, Ordering::Acquire, Ordering::Relaxed)
            .is_err()
        {
            waited = true;
            while self.locked.load(Ordering::Relaxed) {
                spins += 1;
                if spins.is_multiple_of(64) {
                    std::thread::yield_now();
                } else {
                    std::hint::spin_loop();
                }
            }
        }
        (SpinGuard { lock: self }, waited)
    }

    pub(crate) fn into_inner(self) -> T {
        self.value.into_inner()
    }
}

pub(crate) struct SpinGuard<'a, T> {
    lock: &'a SpinLock<T>,
}

impl<T> Deref for SpinGuard<'_, T> {
    type Target = T;

    fn deref(&self) -> &T {
        // SAFETY: holding the guard means holding the lock.
        unsafe { &*self.lock.value.get() }
    }
}

impl<T> DerefMut for SpinGuard<'_, T> {
    fn deref_mut(&mut self) -> &mut T {
        // SAFETY: holding the guard means holding the lock.
        unsafe { &mut *self.lock.value.get() }
    }
}

impl<T> Drop for SpinGuard<'_, T> {
    fn drop(&mut self) {
        self.lock.locked.store(false, Ordering::Release);
    }
}

struct State {
    kernel: Kernel,
    replies: Vec<Option<Reply>>,
    records: Vec<TraceRecord>,
    stats: PlatformStats,
    finished: Option<Result<RunOutcome, RunError>>,
}

struct Shared {
    state: SpinLock<State>,
    bodies: Vec<Mutex<Option<Box<dyn ThreadBody>>>>,
    pending: Vec<AtomicBool>,
    booted: Vec<AtomicBool>,
    stop: AtomicBool,
    steps: AtomicU64,
    outbox: WakeOutbox,
    start: Instant,
    max_steps: u64,
}

impl Shared {
    fn now(&self) -> u64 {
        self.start.elapsed().as_nanos() as u64
    }

    fn lock(&self, core: CoreId) -> SpinGuard<'_, State> {
        let t0 = self.now();
        let (mut st, waited) = self.state.lock();
        if waited {
            let t1 = self.now();
            st.stats.spins += 1;
            st.stats.spin_ticks += t1 - t0;
            st.records
                .push(TraceRecord::new(t0, core, TraceKind::Spin).with("until", t1));
        }
        for tid in self.outbox.drain() {
            st.kernel.wake(tid);
        }
        st
    }

    /// Moves kernel events into the trace and raises requested interrupts.
    fn flush(&self, st: &mut State, core: CoreId) {
        let t = self.now();
        for ev in st.kernel.take_events() {
            st.records.push(event_record(t, core, ev));
        }
        for target in st.kernel.take_requests() {
            let already = self.pending[target.index()].swap(true, Ordering::AcqRel);
            if target == core {
                continue;
            }
            if already {
                st.stats.ipis_coalesced += 1;
            } else {
                st.stats.ipis += 1;
                st.records
                    .push(TraceRecord::new(t, core, TraceKind::Ipi).with("target", target.index()));
            }
        }
    }

    fn schedule(&self, st: &mut State, core: CoreId, cause: &'static str) {
        st.records
            .push(TraceRecord::new(self.now(), core, TraceKind::Schedule).with("cause", cause));
        st.kernel.schedule(core);
        self.flush(st, core);
    }

    fn running_app(&self, st: &State, core: CoreId) -> Option<ThreadId> {
        let tid = st.kernel.current(core)?;
        let t = st.kernel.thread(tid)?;
        (!t.is_idle && t.state == (ThreadState::Running { core })).then_some(tid)
    }

    /// Ends the run once nothing can make progress any more.
    fn check_finished(&self, st: &mut State) {
        if st.finished.is_some() {
            return;
        }
        if self.steps.load(Ordering::Relaxed) >= self.max_steps {
            st.finished = Some(Err(RunError::StepLimit(self.max_steps)));
            self.stop.store(true, Ordering::Release);
            return;
        }
        let n = st.kernel.num_cores();
        for c in 0..n {
            let core = CoreId::new(c as u8);
            if !self.booted[c].load(Ordering::Acquire)
                || self.pending[c].load(Ordering::Acquire)
                || st.kernel.current(core).is_none()
                || self.running_app(st, core).is_some()
            {
                return;
            }
        }
        st.finished = Some(finish(&st.kernel));
        self.stop.store(true, Ordering::Release);
    }

    fn worker(&self, core: CoreId, scenario: Option<Scenario>) {
        if let Some(scenario) = scenario {
            self.boot_primary(core, scenario);
        } else {
            while !self.booted[core.index()].load(Ordering::Acquire) {
                std::thread::yield_now();
            }
            let mut st = self.lock(core);
            let t = self.now();
            st.records
                .push(TraceRecord::new(t, core, TraceKind::Boot).with("from_core", 0));
            st.records
                .push(TraceRecord::new(t, core, TraceKind::SchedIrqEnable));
            self.schedule(&mut st, core, "boot");
        }

        while !self.stop.load(Ordering::Acquire) {
            let mut st = self.lock(core);
            if self.pending[core.index()].swap(false, Ordering::AcqRel) {
                let t = self.now();
                st.records
                    .push(TraceRecord::new(t, core, TraceKind::SchedIrq));
                st.stats.signal_schedules += 1;
                self.schedule(&mut st, core, "signal");
                continue;
            }
            let Some(tid) = self.running_app(&st, core) else {
                self.check_finished(&mut st);
                drop(st);
                std::thread::yield_now();
                continue;
            };
            let reply = st.replies[tid.index()]
                .take()
                .or_else(|| st.kernel.take_wakeup(tid).map(wakeup_reply));
            drop(st);

            self.steps.fetch_add(1, Ordering::Relaxed);
            let mut slot = self.bodies[tid.index()]
                .lock()
                .unwrap_or_else(|e| e.into_inner());
            let body = slot.as_mut().expect("running thread has a body");
            let call = body.step(&mut StepContext::new(tid, core, reply, &self.outbox));

            match call {
                Syscall::Compute(_) => {
                    drop(slot);
                    let mut st = self.lock(core);
                    st.replies[tid.index()] = Some(Reply::Done);
                }
                Syscall::Mark(label) => {
                    drop(slot);
                    let mut st = self.lock(core);
                    let t = self.now();
                    st.records.push(
                        TraceRecord::new(t, core, TraceKind::Mark)
                            .from(Some(tid))
                            .with("label", label),
                    );
                    st.replies[tid.index()] = Some(Reply::Done);
                }
                call => {
                    let exiting = matches!(call, Syscall::Exit);
                    let mut st = self.lock(core);
                    let reply = exec::apply(&mut st.kernel, core, call);
                    if exiting && reply.is_none() {
                        *slot = None;
                    }
                    drop(slot);
                    st.replies[tid.index()] = reply;
                    self.flush(&mut st, core);
                }
            }
        }
    }

    fn boot_primary(&self, core: CoreId, scenario: Scenario) {
        let mut st = self.lock(core);
        for _ in 0..scenario.mutexes {
            st.kernel.create_mutex();
        }
        for spec in scenario.threads {
            let tid = st
                .kernel
                .create_thread(spec.priority, spec.affinity)
                .expect("scenario fits the thread table");
            *self.bodies[tid.index()]
                .lock()
                .unwrap_or_else(|e| e.into_inner()) = Some(spec.body);
        }
        st.kernel.start_threading().expect("booted once");
        self.flush(&mut st, core);
        let t = self.now();
        for c in 1..self.booted.len() {
            st.records
                .push(TraceRecord::new(t, core, TraceKind::CoreStart).with("target", c));
            self.booted[c].store(true, Ordering::Release);
        }
        self.booted[0].store(true, Ordering::Release);
        st.records
            .push(TraceRecord::new(t, core, TraceKind::SchedIrqEnable));
        self.schedule(&mut st, core, "boot");
    }
}

fn finish(kernel: &Kernel) -> Result<RunOutcome, RunError> {
    let live: Vec<BlockedThread> = kernel
        .live_threads()
        .map(|t| BlockedThread {
            tid: t.tid,
            state: t.state,
            base_priority: t.base_priority,
            effective_priority: t.effective_priority,
            owns: (0..kernel.mutex_count())
                .map(|m| MutexId::new(m as u8))
                .filter(|&m| kernel.mutex_owner(m) == Some(t.tid))
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

pub(crate) fn run(
    config: KernelConfig,
    scenario: Scenario,
    opts: &RunOptions,
) -> Result<Trace, RunError> {
    let kernel = Kernel::new(config).map_err(PlatformError::from)?;
    let n = kernel.num_cores();
    let slots = kernel.threads().count();
    let shared = Shared {
        state: SpinLock::new(State {
            kernel,
            replies: vec![None; slots],
            records: Vec::new(),
            stats: PlatformStats::default(),
            finished: None,
        }),
        bodies: (0..slots).map(|_| Mutex::new(None)).collect(),
        pending: (0..n).map(|_| AtomicBool::new(false)).collect(),
        booted: (0..n).map(|_| AtomicBool::new(false)).collect(),
        stop: AtomicBool::new(false),
        steps: AtomicU64::new(0),
        outbox: WakeOutbox::default(),
        start: Instant::now(),
        max_steps: opts.max_steps,
    };

    let mut scenario = Some(scenario);
    std::thread::scope(|s| {
        for c in 0..n {
            let shared = &shared;
            let scenario = if c == 0 { scenario.take() } else { None };
            s.spawn(move || shared.worker(CoreId::new(c as u8), scenario));
        }
    });

    let end = shared.now();
    let steps = shared.steps.load(Ordering::Relaxed);
    let mut st = shared.state.into_inner();
    st.stats.steps = steps;
    let outcome = st
        .finished
        .take()
        .expect("workers stop only once finished")?;
    Ok(Trace {
        kernel_stats: *st.kernel.stats(),
        platform_stats: st.stats,
        records: st.records,
        snapshots: Vec::new(),
        clocks: vec![end; n],
        outcome,
    })
}
