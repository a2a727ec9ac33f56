//! Backend-independent pieces: performing syscalls on the kernel and turning
//! kernel events into trace records.

use serde_json::Value;

use super::trace::{TraceKind, TraceRecord};
use super::CostModel;
use crate::body::{Reply, Syscall};
use crate::kernel::{Kernel, KernelEvent, KernelStats, Wakeup};
use crate::sync::{LockOutcome, WaitOutcome};
use crate::types::{CoreId, Tick};

/// Performs `call` for the thread running on `core`.
///
/// Returns `None` when the thread blocked or exited; a blocked thread gets
/// its reply from [`Kernel::take_wakeup`] when it runs again.
pub(crate) fn apply(kernel: &mut Kernel, core: CoreId, call: Syscall) -> Option<Reply> {
    fn done<T>(r: Result<T, crate::KernelError>) -> Option<Reply> {
        Some(match r {
            Ok(_) => Reply::Done,
            Err(e) => Reply::Err(e),
        })
    }

    match call {
        Syscall::Compute(_) | Syscall::Mark(_) => Some(Reply::Done),
        Syscall::Yield => done(kernel.yield_current(core)),
        Syscall::Sleep => match kernel.sleep_current(core) {
            Ok(_) => None,
            Err(e) => Some(Reply::Err(e)),
        },
        Syscall::SleepUnless(cond) => {
            if cond() {
                Some(Reply::Done)
            } else {
                match kernel.sleep_current(core) {
                    Ok(_) => None,
                    Err(e) => Some(Reply::Err(e)),
                }
            }
        }
        Syscall::Wake(tid) => Some(Reply::Woke(kernel.wake(tid))),
        Syscall::FlagsSet(tid, mask) => done(kernel.flags_set(tid, mask)),
        Syscall::FlagsWait(mode, mask) => match kernel.flags_wait(core, mode, mask) {
            Ok(WaitOutcome::Satisfied(m)) => Some(Reply::Flags(m)),
            Ok(WaitOutcome::Blocked) => None,
            Err(e) => Some(Reply::Err(e)),
        },
        Syscall::Lock(m) => match kernel.mutex_lock(core, m) {
            Ok(LockOutcome::Acquired) => Some(Reply::Done),
            Ok(LockOutcome::Blocked) => None,
            Err(e) => Some(Reply::Err(e)),
        },
        Syscall::Unlock(m) => done(kernel.mutex_unlock(core, m)),
        Syscall::SetPriority(tid, p) => done(kernel.set_priority(tid, p)),
        Syscall::SetAffinity(tid, mask) => done(kernel.set_affinity(tid, mask)),
        Syscall::Exit => match kernel.exit_current(core) {
            Ok(_) => None,
            Err(e) => Some(Reply::Err(e)),
        },
    }
}

pub(crate) fn wakeup_reply(w: Wakeup) -> Reply {
    match w {
        Wakeup::Flags(m) => Reply::Flags(m),
        Wakeup::Resumed | Wakeup::Acquired(_) => Reply::Done,
    }
}

/// Ticks charged for the kernel work between two stats readings.
pub(crate) fn cost_between(model: &CostModel, before: &KernelStats, after: &KernelStats) -> Tick {
    let d = |a: u64, b: u64| a - b;
    d(after.runqueue_ops(), before.runqueue_ops()) * model.runqueue_op
        + d(after.flag_ops, before.flag_ops) * model.flag_op
        + d(after.rebalances, before.rebalances) * model.rebalance_base
        + d(after.rebalance_work, before.rebalance_work) * model.rebalance_per_ready_thread
        + d(after.scheduler_invocations, before.scheduler_invocations) * model.scheduler_invoke
        + d(after.context_switches, before.context_switches) * model.context_switch
}

pub(crate) fn event_record(t: Tick, core: CoreId, event: KernelEvent) -> TraceRecord {
    let rec = |kind| TraceRecord::new(t, core, kind);
    match event {
        KernelEvent::ThreadCreated {
            tid,
            priority,
            idle,
        } => rec(TraceKind::ThreadCreate)
            .to(Some(tid))
            .with("priority", priority.get())
            .with("idle", idle),
        KernelEvent::ContextSwitch { core, from, to } => {
            TraceRecord::new(t, core, TraceKind::ContextSwitch)
                .from(from)
                .to(Some(to))
        }
        KernelEvent::Migration { tid, from, to } => TraceRecord::new(t, to, TraceKind::Migration)
            .to(Some(tid))
            .with("from_core", from.index())
            .with("to_core", to.index()),
        KernelEvent::IdleEnter { core } => TraceRecord::new(t, core, TraceKind::IdleEnter),
        KernelEvent::FlagSet { target, mask } => {
            rec(TraceKind::FlagSet).to(Some(target)).with("mask", mask)
        }
        KernelEvent::FlagWait { tid, mask, matched } => rec(TraceKind::FlagWait)
            .from(Some(tid))
            .with("mask", mask)
            .with("matched", matched.map_or(Value::Null, Value::from)),
        KernelEvent::Lock {
            tid,
            mutex,
            acquired,
        } => rec(TraceKind::Lock)
            .from(Some(tid))
            .with("mutex", mutex.index())
            .with("acquired", acquired),
        KernelEvent::Unlock {
            tid,
            mutex,
            next_owner,
        } => rec(TraceKind::Unlock)
            .from(Some(tid))
            .to(next_owner)
            .with("mutex", mutex.index()),
        KernelEvent::Sleep { tid } => rec(TraceKind::Sleep).from(Some(tid)),
        KernelEvent::Wake { tid } => rec(TraceKind::Wake).to(Some(tid)),
        KernelEvent::Exit { tid } => rec(TraceKind::Exit).from(Some(tid)),
        KernelEvent::PriorityChanged { tid, effective } => rec(TraceKind::Priority)
            .to(Some(tid))
            .with("effective", effective.get()),
        KernelEvent::Rebalance { changed } => rec(TraceKind::Rebalance).with(
            "changed",
            changed
                .iter()
                .map(|c| Value::from(c.index()))
                .collect::<Vec<_>>(),
        ),
    }
}
