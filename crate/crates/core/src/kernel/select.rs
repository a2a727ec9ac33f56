//! Scheduler handler and the per-strategy selection logic.

use super::{Kernel, KernelEvent, Strategy, Switch, ThreadState};
use crate::runqueue::Position;
use crate::types::{CoreId, Priority, ThreadId};

impl Kernel {
    /// Scheduler interrupt handler for `core`.
    ///
    /// Picks the thread `core` should run according to the strategy and
    /// switches to it. Switching is lazy: if the pick is the thread already
    /// running, nothing happens and `None` is returned.
    pub fn schedule(&mut self, core: CoreId) -> Option<Switch> {
        self.stats.scheduler_invocations += 1;
        self.promised[core.index()] = Priority::IDLE;

        let prev = self.current[core.index()];
        let prev_running = prev.filter(|&p| self.tcb(p).state == (ThreadState::Running { core }));
        let next = match self.config.strategy {
            Strategy::SingleOptimized => self.select_next_single(core),
            Strategy::Dynamic => self.select_next_dynamic(core),
            Strategy::Reallocation => self.select_next_realloc(core),
        };
        let yielded = prev.is_some_and(|p| std::mem::take(&mut self.tcb_mut(p).yield_requested));
        if Some(next) == prev {
            if self.config.strategy == Strategy::Dynamic {
                self.retarget_waiting(core);
            }
            return None;
        }

        if let Some(p) = prev_running {
            let t = self.tcb_mut(p);
            if t.state == (ThreadState::Running { core }) {
                t.state = ThreadState::Ready;
            }
            if !t.is_idle && !yielded {
                self.stats.preemptions += 1;
            }
        }

        let t = self.tcb_mut(next);
        t.state = ThreadState::Running { core };
        let migrated = t.last_core.filter(|&last| last != core && !t.is_idle);
        t.last_core = Some(core);
        let idle = t.is_idle;
        if let Some(from) = migrated {
            self.stats.migrations += 1;
            self.push_event(KernelEvent::Migration {
                tid: next,
                from,
                to: core,
            });
        }
        self.current[core.index()] = Some(next);
        self.stats.context_switches += 1;
        self.push_event(KernelEvent::ContextSwitch {
            core,
            from: prev,
            to: next,
        });
        if idle {
            self.push_event(KernelEvent::IdleEnter { core });
        }

        // A thread displaced from this core may still outrank whatever runs
        // on another core it is allowed on.
        match self.config.strategy {
            Strategy::Dynamic => self.retarget_waiting(core),
            strategy => {
                if let Some(p) = prev_running.filter(|&p| !self.is_idle_thread(p)) {
                    if self.tcb(p).state == ThreadState::Ready {
                        if strategy == Strategy::Reallocation {
                            if let Some(target) = self.allocation.core_of(p).filter(|&c| c != core)
                            {
                                self.request(target);
                            }
                        } else {
                            self.maybe_trigger_schedule(p);
                        }
                    }
                }
            }
        }

        Some(Switch {
            core,
            from: prev,
            to: next,
        })
    }

    fn select_next_single(&mut self, core: CoreId) -> ThreadId {
        self.runqueue
            .peek_head()
            .unwrap_or_else(|| self.idle_thread(core))
    }

    /// Dynamic thread selection.
    ///
    /// A still-runnable current thread keeps the core unless a waiting thread
    /// outranks it (or, when it yielded, matches it). Otherwise it goes back
    /// into the runqueue, at the head of its level when preempted and at the
    /// tail when yielding, and the first eligible thread is popped. The
    /// returned thread is never left in the runqueue.
    pub(crate) fn select_next_dynamic(&mut self, core: CoreId) -> ThreadId {
        let idle = self.idle_thread(core);
        let prev = self.current[core.index()]
            .filter(|&p| p != idle && self.tcb(p).state == (ThreadState::Running { core }));
        if let Some(prev) = prev {
            let t = self.tcb(prev);
            let prio = t.effective_priority;
            let yielding = t.yield_requested;
            if t.affinity.allows(core) {
                let keep = match self.best_waiting_for(core) {
                    None => true,
                    Some(best) if yielding => best < prio,
                    Some(best) => best <= prio,
                };
                if keep {
                    return prev;
                }
            }
            self.tcb_mut(prev).state = ThreadState::Ready;
            if yielding {
                self.enqueue(prev, Position::Tail);
            } else if !self.config.faults.skip_preempt_requeue {
                self.enqueue(prev, Position::Head);
            }
        }

        let threads = &self.threads;
        match self
            .runqueue
            .pop_head_filtered(core, |tid| threads[tid.index()].affinity)
        {
            Some(next) => {
                self.stats.rq_removes += 1;
                next
            }
            None => idle,
        }
    }

    fn select_next_realloc(&mut self, core: CoreId) -> ThreadId {
        let idle = self.idle_thread(core);
        match self.allocation.get(core) {
            // The thread is still running where it was before; that core has
            // its own scheduler request and hands it over when it switches.
            Some(tid) => match self.tcb(tid).state {
                ThreadState::Running { core: other } if other != core => idle,
                _ => tid,
            },
            None => idle,
        }
    }

    /// Points waiting threads at the other cores they outrank.
    ///
    /// Runs after `core` has picked its thread. Waiting threads are taken in
    /// dispatch order and each claims the lowest priority core it may run on
    /// and strictly outranks. This also catches a thread whose promised core
    /// was taken over by a higher priority arrival in the meantime.
    fn retarget_waiting(&mut self, core: CoreId) {
        let waiting: Vec<(ThreadId, Priority)> = self.runqueue.iter().collect();
        for (tid, prio) in waiting {
            let t = self.tcb(tid);
            if t.state != ThreadState::Ready {
                continue;
            }
            let target = t
                .affinity
                .cores(self.config.num_cores)
                .filter(|&c| c != core)
                .min_by_key(|&c| (self.core_priority(c), c.index()));
            if let Some(target) = target {
                if prio > self.core_priority(target) {
                    self.request(target);
                    self.promised[target.index()] = prio;
                }
            }
        }
    }

    /// Highest effective priority among ready threads allowed on `core`.
    pub(crate) fn best_waiting_for(&self, core: CoreId) -> Option<Priority> {
        self.runqueue
            .find(|tid, _| {
                let t = self.tcb(tid);
                t.state == ThreadState::Ready && t.affinity.allows(core)
            })
            .map(|(_, prio)| prio)
    }

    /// Priority `core` is (or is about to be) running at.
    fn core_priority(&self, core: CoreId) -> Priority {
        let running = self.current[core.index()]
            .map(|cur| self.tcb(cur))
            .filter(|t| t.state == (ThreadState::Running { core }))
            .map_or(Priority::IDLE, |t| t.effective_priority);
        running.max(self.promised[core.index()])
    }

    /// Raises a scheduler interrupt where `changed` makes one necessary.
    ///
    /// A ready thread targets the permitted core running the lowest
    /// effective priority (lowest index on ties), and only if it strictly
    /// outranks that core. A running thread gets its own core rescheduled if
    /// it lost the right to run there or a waiting thread now outranks it.
    /// Under core reallocation this runs the rebalance routine instead and
    /// interrupts every core whose assignment changed.
    pub fn maybe_trigger_schedule(&mut self, changed: ThreadId) {
        if !self.started {
            return;
        }
        if self.config.strategy == Strategy::Reallocation {
            for core in self.rebalance() {
                self.request(core);
            }
            return;
        }
        let t = self.tcb(changed);
        let prio = t.effective_priority;
        match t.state {
            ThreadState::Ready => {
                let target = t
                    .affinity
                    .cores(self.config.num_cores)
                    .min_by_key(|&c| (self.core_priority(c), c.index()));
                if let Some(target) = target {
                    if prio > self.core_priority(target) {
                        self.request(target);
                        self.promised[target.index()] = prio;
                    }
                }
            }
            ThreadState::Running { core }
                if !t.affinity.allows(core)
                    || self.best_waiting_for(core).is_some_and(|best| best > prio) =>
            {
                self.request(core);
            }
            _ => {}
        }
    }
}
