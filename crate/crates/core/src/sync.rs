//! Thread flags and priority-inheritance mutexes.
//!
//! Flags are a 16-bit pending word per thread. A waiter names a mask and a
//! mode; the bits that satisfy the wait are cleared when it returns.
//!
//! Mutexes hand ownership directly to the highest priority waiter (FIFO
//! among equals). While locked, the owner runs at least at the effective
//! priority of every waiter; the boost follows chains of owners that are
//! themselves blocked on other mutexes.

use crate::error::KernelError;
use crate::kernel::{Kernel, KernelEvent, ThreadState, WaitMode, Wakeup};
use crate::types::{CoreId, MutexId, ThreadFlags, ThreadId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WaitOutcome {
    /// The wait was satisfied immediately with these bits.
    Satisfied(ThreadFlags),
    /// The caller is blocked; the matched bits arrive as [`Wakeup::Flags`].
    Blocked,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LockOutcome {
    Acquired,
    /// The caller is blocked; it owns the mutex once it receives
    /// [`Wakeup::Acquired`].
    Blocked,
}

impl Kernel {
    pub fn flags_set(&mut self, tid: ThreadId, mask: ThreadFlags) -> Result<(), KernelError> {
        self.check_active(tid)?;
        if mask == 0 {
            return Err(KernelError::InvalidArgument("empty flag mask"));
        }
        self.count_flag_op();
        self.push_event(KernelEvent::FlagSet { target: tid, mask });
        let t = self.tcb_mut(tid);
        t.flags |= mask;
        if let ThreadState::FlagBlocked { mask: wait, mode } = t.state {
            if let Some(matched) = mode.matched(t.flags, wait) {
                t.flags &= !matched;
                self.set_wakeup(tid, Wakeup::Flags(matched));
                self.make_ready(tid);
                self.state_changed(tid);
            }
        }
        Ok(())
    }

    /// Waits on behalf of the thread running on `core`.
    pub fn flags_wait(
        &mut self,
        core: CoreId,
        mode: WaitMode,
        mask: ThreadFlags,
    ) -> Result<WaitOutcome, KernelError> {
        let tid = self.running_app_thread(core)?;
        if mask == 0 {
            return Err(KernelError::InvalidArgument("empty flag mask"));
        }
        self.count_flag_op();
        let t = self.tcb_mut(tid);
        let matched = mode.matched(t.flags, mask);
        if let Some(m) = matched {
            t.flags &= !m;
        }
        self.push_event(KernelEvent::FlagWait { tid, mask, matched });
        match matched {
            Some(m) => Ok(WaitOutcome::Satisfied(m)),
            None => {
                self.block_current(core, ThreadState::FlagBlocked { mask, mode });
                Ok(WaitOutcome::Blocked)
            }
        }
    }

    pub fn flags_pending(&self, tid: ThreadId) -> ThreadFlags {
        self.thread(tid).map_or(0, |t| t.flags)
    }

    pub fn mutex_lock(&mut self, core: CoreId, mutex: MutexId) -> Result<LockOutcome, KernelError> {
        let tid = self.running_app_thread(core)?;
        let owner = self
            .mutexes
            .get(mutex.index())
            .ok_or(KernelError::NoSuchMutex(mutex))?
            .owner;
        match owner {
            Some(owner) if owner == tid => Err(KernelError::Deadlock(tid, mutex)),
            None => {
                self.mutexes[mutex.index()].owner = Some(tid);
                self.push_event(KernelEvent::Lock {
                    tid,
                    mutex,
                    acquired: true,
                });
                Ok(LockOutcome::Acquired)
            }
            Some(owner) => {
                self.mutexes[mutex.index()].waiters.push(tid);
                self.push_event(KernelEvent::Lock {
                    tid,
                    mutex,
                    acquired: false,
                });
                self.block_current(core, ThreadState::MutexBlocked { mutex });
                self.recompute_priority(owner);
                Ok(LockOutcome::Blocked)
            }
        }
    }

    pub fn mutex_unlock(&mut self, core: CoreId, mutex: MutexId) -> Result<(), KernelError> {
        let tid = self.running_app_thread(core)?;
        let owner = self
            .mutexes
            .get(mutex.index())
            .ok_or(KernelError::NoSuchMutex(mutex))?
            .owner;
        if owner != Some(tid) {
            return Err(KernelError::NotOwner(tid, mutex));
        }
        self.release_mutex(tid, mutex);
        Ok(())
    }

    /// Hands `mutex` from `owner` to its best waiter, or unlocks it.
    pub(crate) fn release_mutex(&mut self, owner: ThreadId, mutex: MutexId) {
        let next = self.mutex_waiters(mutex).first().copied();
        let state = &mut self.mutexes[mutex.index()];
        state.owner = next;
        if let Some(next) = next {
            state.waiters.retain(|&w| w != next);
        }
        self.push_event(KernelEvent::Unlock {
            tid: owner,
            mutex,
            next_owner: next,
        });
        if let Some(next) = next {
            self.set_wakeup(next, Wakeup::Acquired(mutex));
            self.make_ready(next);
            self.recompute_priority(next);
            self.state_changed(next);
        }
        self.recompute_priority(owner);
    }
}

#[cfg(test)]
mod tests;
