//! Running `async` code on scheduled threads.
//!
//! An [`Executor`] is a thread body that polls its tasks whenever they are
//! woken and puts its thread to sleep once a sweep leaves nothing to do.
//! Wakers may fire from any core: they queue the task and post the owning
//! thread to the platform's wake outbox, which the platform drains into
//! [`Kernel::wake`](crate::kernel::Kernel::wake) at its next critical
//! section. [`BlockOn`] does the same for a single future driven by a thread
//! that wants its result.

use std::cell::Cell;
use std::collections::VecDeque;
use std::future::Future;
use std::pin::Pin;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::task::{Context, Poll, Wake, Waker};

use thiserror::Error;

use crate::body::{StepContext, Syscall, ThreadBody, WakeOutbox};
use crate::types::ThreadId;

thread_local! {
    static IN_POLL: Cell<bool> = const { Cell::new(false) };
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn poll_guarded<T>(f: impl FnOnce() -> T) -> T {
    struct Reset(bool);
    impl Drop for Reset {
        fn drop(&mut self) {
            IN_POLL.with(|p| p.set(self.0));
        }
    }
    let _reset = Reset(IN_POLL.with(|p| p.replace(true)));
    f()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum AsyncError {
    #[error("block_on called from inside a task poll")]
    BlockOnInsidePoll,
}

pub type Task = Pin<Box<dyn Future<Output = ()> + Send>>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TaskStats {
    pub polls: u64,
    pub wakes: u64,
    pub completed: bool,
}

/// Shared view of an executor's per-task counters.
#[derive(Clone, Debug, Default)]
pub struct ExecutorStats {
    tasks: Arc<Mutex<Vec<TaskStats>>>,
    sweeps: Arc<Mutex<u64>>,
}

impl ExecutorStats {
    pub fn task(&self, id: usize) -> TaskStats {
        lock(&self.tasks)[id]
    }

    pub fn tasks(&self) -> Vec<TaskStats> {
        lock(&self.tasks).clone()
    }

    pub fn sweeps(&self) -> u64 {
        *lock(&self.sweeps)
    }
}

#[derive(Default)]
struct Owner(Mutex<Option<(ThreadId, WakeOutbox)>>);

impl Owner {
    fn set(&self, cx: &StepContext<'_>) {
        let mut o = lock(&self.0);
        if o.is_none() {
            *o = Some((cx.tid, cx.outbox().clone()));
        }
    }

    fn notify(&self) {
        if let Some((tid, outbox)) = lock(&self.0).as_ref() {
            outbox.push(*tid);
        }
    }
}

#[derive(Default)]
struct WakeQueue {
    ready: Mutex<VecDeque<usize>>,
    owner: Owner,
    stats: ExecutorStats,
}

impl WakeQueue {
    fn push(&self, id: usize) {
        let mut q = lock(&self.ready);
        if !q.contains(&id) {
            q.push_back(id);
        }
    }

    fn is_empty(&self) -> bool {
        lock(&self.ready).is_empty()
    }
}

struct TaskWaker {
    id: usize,
    queue: Arc<WakeQueue>,
}

impl Wake for TaskWaker {
    fn wake(self: Arc<Self>) {
        self.wake_by_ref();
    }

    fn wake_by_ref(self: &Arc<Self>) {
        lock(&self.queue.stats.tasks)[self.id].wakes += 1;
        self.queue.push(self.id);
        self.queue.owner.notify();
    }
}

/// Thread-hosted task executor.
pub struct Executor {
    tasks: Vec<Option<Task>>,
    wakers: Vec<Waker>,
    queue: Arc<WakeQueue>,
    started: bool,
}

impl Default for Executor {
    fn default() -> Self {
        Self::new()
    }
}

impl Executor {
    /// Upper bound on polling rounds per step when tasks keep waking each
    /// other; the thread goes around the scheduler between batches.
    const ROUNDS_PER_STEP: usize = 64;

    pub fn new() -> Self {
        Self {
            tasks: Vec::new(),
            wakers: Vec::new(),
            queue: Arc::default(),
            started: false,
        }
    }

    pub fn spawn(&mut self, fut: impl Future<Output = ()> + Send + 'static) -> usize {
        let id = self.tasks.len();
        self.tasks.push(Some(Box::pin(fut)));
        self.wakers.push(Waker::from(Arc::new(TaskWaker {
            id,
            queue: self.queue.clone(),
        })));
        lock(&self.queue.stats.tasks).push(TaskStats::default());
        id
    }

    pub fn stats(&self) -> ExecutorStats {
        self.queue.stats.clone()
    }

    fn poll_task(&mut self, id: usize) {
        let Some(task) = self.tasks[id].as_mut() else {
            return;
        };
        lock(&self.queue.stats.tasks)[id].polls += 1;
        let mut cx = Context::from_waker(&self.wakers[id]);
        if poll_guarded(|| task.as_mut().poll(&mut cx)).is_ready() {
            self.tasks[id] = None;
            lock(&self.queue.stats.tasks)[id].completed = true;
        }
    }
}

impl ThreadBody for Executor {
    fn step(&mut self, cx: &mut StepContext<'_>) -> Syscall {
        if !self.started {
            self.started = true;
            self.queue.owner.set(cx);
            for id in 0..self.tasks.len() {
                self.queue.push(id);
            }
        }
        for _ in 0..Self::ROUNDS_PER_STEP {
            let batch: Vec<usize> = lock(&self.queue.ready).drain(..).collect();
            if batch.is_empty() {
                break;
            }
            for id in batch {
                self.poll_task(id);
            }
        }
        *lock(&self.queue.stats.sweeps) += 1;
        let queue = self.queue.clone();
        Syscall::SleepUnless(Arc::new(move || !queue.is_empty()))
    }
}

#[derive(Default)]
struct Flag {
    woken: AtomicBool,
    owner: Owner,
}

impl Wake for Flag {
    fn wake(self: Arc<Self>) {
        self.wake_by_ref();
    }

    fn wake_by_ref(self: &Arc<Self>) {
        self.woken.store(true, Ordering::Release);
        self.owner.notify();
    }
}

pub enum BlockStep<T> {
    Ready(T),
    /// Return this syscall from the thread body and call `step` again once
    /// the thread runs.
    Wait(Syscall),
}

/// A future driven to completion by the thread that owns it.
pub struct BlockOn<F: Future> {
    fut: Pin<Box<F>>,
    flag: Arc<Flag>,
    waker: Waker,
    polls: u64,
}

/// Starts blocking on `fut`. Fails when called from inside a task poll,
/// where sleeping the thread would stall every other task.
pub fn block_on<F: Future>(fut: F) -> Result<BlockOn<F>, AsyncError> {
    if IN_POLL.with(Cell::get) {
        return Err(AsyncError::BlockOnInsidePoll);
    }
    let flag = Arc::new(Flag::default());
    // Poll on the first step.
    flag.woken.store(true, Ordering::Relaxed);
    Ok(BlockOn {
        fut: Box::pin(fut),
        waker: Waker::from(flag.clone()),
        flag,
        polls: 0,
    })
}

impl<F: Future> BlockOn<F> {
    pub fn step(&mut self, cx: &mut StepContext<'_>) -> BlockStep<F::Output> {
        self.flag.owner.set(cx);
        if self.flag.woken.swap(false, Ordering::AcqRel) {
            self.polls += 1;
            let mut tcx = Context::from_waker(&self.waker);
            let fut = self.fut.as_mut();
            if let Poll::Ready(v) = poll_guarded(|| fut.poll(&mut tcx)) {
                return BlockStep::Ready(v);
            }
        }
        let flag = self.flag.clone();
        BlockStep::Wait(Syscall::SleepUnless(Arc::new(move || {
            flag.woken.load(Ordering::Acquire)
        })))
    }

    pub fn polls(&self) -> u64 {
        self.polls
    }
}

#[derive(Default)]
struct SignalState {
    fired: bool,
    wakers: Vec<Waker>,
}

/// Latching event that futures can wait on and any thread can fire.
#[derive(Clone, Default)]
pub struct AsyncSignal(Arc<Mutex<SignalState>>);

impl AsyncSignal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fire(&self) {
        let wakers = {
            let mut s = lock(&self.0);
            s.fired = true;
            std::mem::take(&mut s.wakers)
        };
        for w in wakers {
            w.wake();
        }
    }

    pub fn is_fired(&self) -> bool {
        lock(&self.0).fired
    }

    pub fn wait(&self) -> SignalWait {
        SignalWait(self.clone())
    }
}

pub struct SignalWait(AsyncSignal);

impl Future for SignalWait {
    type Output = ();

    fn poll(self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<()> {
        let mut s = lock(&self.0 .0);
        if s.fired {
            return Poll::Ready(());
        }
        if !s.wakers.iter().any(|w| w.will_wake(cx.waker())) {
            s.wakers.push(cx.waker().clone());
        }
        Poll::Pending
    }
}
