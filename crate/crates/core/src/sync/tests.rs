use super::*;
use crate::kernel::{KernelConfig, Strategy};
use crate::types::{AffinityMask, Priority};

fn p(level: u8) -> Priority {
    Priority::level(level)
}

const C0: CoreId = CoreId::new(0);

fn settle(k: &mut Kernel) {
    loop {
        let reqs = k.take_requests();
        if reqs.is_empty() {
            break;
        }
        for core in reqs {
            k.schedule(core);
        }
    }
    k.check_invariants().unwrap();
}

fn single() -> Kernel {
    Kernel::new(KernelConfig::new(1, Strategy::SingleOptimized)).unwrap()
}

fn boot(k: &mut Kernel) {
    k.start_threading().unwrap();
    k.schedule(C0);
    settle(k);
}

/// Kernel with one running thread `a` and a second thread `b` blocked on
/// `wait`.
fn blocked_waiter(mode: WaitMode, mask: ThreadFlags) -> (Kernel, ThreadId, ThreadId) {
    let mut k = single();
    let b = k.create_thread(p(5), AffinityMask::ALL).unwrap();
    let a = k.create_thread(p(3), AffinityMask::ALL).unwrap();
    boot(&mut k);
    assert_eq!(k.flags_wait(C0, mode, mask).unwrap(), WaitOutcome::Blocked);
    settle(&mut k);
    assert_eq!(k.current(C0), Some(a));
    (k, a, b)
}

#[test]
fn any_wait_returns_intersection() {
    let (mut k, _, b) = blocked_waiter(WaitMode::Any, 0b101);
    k.flags_set(b, 0b100).unwrap();
    assert_eq!(k.thread(b).unwrap().state, ThreadState::Ready);
    assert_eq!(k.take_wakeup(b), Some(Wakeup::Flags(0b100)));
    assert_eq!(k.flags_pending(b), 0);
}

#[test]
fn partial_all_keeps_blocking() {
    let (mut k, _, b) = blocked_waiter(WaitMode::All, 0b011);
    k.flags_set(b, 0b001).unwrap();
    assert!(matches!(
        k.thread(b).unwrap().state,
        ThreadState::FlagBlocked { .. }
    ));
    assert_eq!(k.flags_pending(b), 0b001);
    k.flags_set(b, 0b010).unwrap();
    assert_eq!(k.take_wakeup(b), Some(Wakeup::Flags(0b011)));
    assert_eq!(k.flags_pending(b), 0);
}

#[test]
fn satisfied_wait_does_not_block() {
    let mut k = single();
    let a = k.create_thread(p(3), AffinityMask::ALL).unwrap();
    boot(&mut k);
    k.flags_set(a, 0b110).unwrap();
    assert_eq!(
        k.flags_wait(C0, WaitMode::Any, 0b010).unwrap(),
        WaitOutcome::Satisfied(0b010)
    );
    assert_eq!(k.flags_pending(a), 0b100);
    assert!(k.take_requests().is_empty());
}

#[test]
fn flag_errors() {
    let mut k = single();
    let a = k.create_thread(p(3), AffinityMask::ALL).unwrap();
    boot(&mut k);
    assert!(matches!(
        k.flags_set(ThreadId::new(7), 1),
        Err(KernelError::NotFound(_))
    ));
    assert!(k.flags_set(a, 0).is_err());
    assert!(k.flags_wait(C0, WaitMode::All, 0).is_err());
}

#[test]
fn low_sets_flag_of_high() {
    let (mut k, a, b) = blocked_waiter(WaitMode::Any, 1);
    assert_eq!(k.current(C0), Some(a));
    k.flags_set(b, 1).unwrap();
    settle(&mut k);
    assert_eq!(k.current(C0), Some(b));
}

/// Runs `low`, which takes the mutex, then lets `high` block on it.
fn inversion(disable_pi: bool) -> (Kernel, MutexId, [ThreadId; 3]) {
    let mut cfg = KernelConfig::new(1, Strategy::SingleOptimized);
    cfg.faults.disable_priority_inheritance = disable_pi;
    let mut k = Kernel::new(cfg).unwrap();
    let m = k.create_mutex();
    let low = k.create_thread(p(1), AffinityMask::ALL).unwrap();
    boot(&mut k);
    k.mutex_lock(C0, m).unwrap();
    let mid = k.create_thread(p(3), AffinityMask::ALL).unwrap();
    let high = k.create_thread(p(5), AffinityMask::ALL).unwrap();
    settle(&mut k);
    assert_eq!(k.current(C0), Some(high));
    assert_eq!(k.mutex_lock(C0, m).unwrap(), LockOutcome::Blocked);
    settle(&mut k);
    (k, m, [low, mid, high])
}

#[test]
fn owner_inherits_waiter_priority() {
    let (mut k, m, [low, _, high]) = inversion(false);
    assert_eq!(k.thread(low).unwrap().effective_priority, p(5));
    assert_eq!(k.current(C0), Some(low));
    k.mutex_unlock(C0, m).unwrap();
    assert_eq!(k.thread(low).unwrap().effective_priority, p(1));
    assert_eq!(k.mutex_owner(m), Some(high));
    assert_eq!(k.take_wakeup(high), Some(Wakeup::Acquired(m)));
    settle(&mut k);
    assert_eq!(k.current(C0), Some(high));
}

#[test]
fn without_inheritance_middle_runs_first() {
    let (k, _, [low, mid, _]) = inversion(true);
    assert_eq!(k.thread(low).unwrap().effective_priority, p(1));
    assert_eq!(k.current(C0), Some(mid));
}

#[test]
fn later_lower_waiter_keeps_boost() {
    let mut k = single();
    let m = k.create_mutex();
    let low = k.create_thread(p(1), AffinityMask::ALL).unwrap();
    boot(&mut k);
    k.mutex_lock(C0, m).unwrap();
    let high = k.create_thread(p(5), AffinityMask::ALL).unwrap();
    settle(&mut k);
    k.mutex_lock(C0, m).unwrap();
    settle(&mut k);
    let mid = k.create_thread(p(3), AffinityMask::ALL).unwrap();
    // Raise mid over the boosted owner so it gets to block as well.
    assert_eq!(k.current(C0), Some(low));
    k.set_priority(mid, p(7)).unwrap();
    settle(&mut k);
    k.mutex_lock(C0, m).unwrap();
    settle(&mut k);
    assert_eq!(k.thread(low).unwrap().effective_priority, p(7));
    k.set_priority(mid, p(3)).unwrap();
    assert_eq!(k.thread(low).unwrap().effective_priority, p(5));
    assert_eq!(k.mutex_waiters(m), vec![high, mid]);
}

#[test]
fn unlock_without_waiters() {
    let mut k = single();
    let m = k.create_mutex();
    let a = k.create_thread(p(2), AffinityMask::ALL).unwrap();
    boot(&mut k);
    assert_eq!(k.mutex_lock(C0, m).unwrap(), LockOutcome::Acquired);
    assert_eq!(k.thread(a).unwrap().effective_priority, p(2));
    k.mutex_unlock(C0, m).unwrap();
    assert_eq!(k.mutex_owner(m), None);
    assert!(k.take_requests().is_empty());
}

#[test]
fn mutex_errors() {
    let mut k = single();
    let m = k.create_mutex();
    let a = k.create_thread(p(2), AffinityMask::ALL).unwrap();
    boot(&mut k);
    assert!(matches!(k.mutex_unlock(C0, m), Err(KernelError::NotOwner(t, _)) if t == a));
    k.mutex_lock(C0, m).unwrap();
    assert!(matches!(
        k.mutex_lock(C0, m),
        Err(KernelError::Deadlock(..))
    ));
    assert!(matches!(
        k.mutex_lock(C0, MutexId::new(4)),
        Err(KernelError::NoSuchMutex(_))
    ));
}

#[test]
fn exit_releases_held_mutexes() {
    let mut k = single();
    let m = k.create_mutex();
    k.create_thread(p(2), AffinityMask::ALL).unwrap();
    boot(&mut k);
    k.mutex_lock(C0, m).unwrap();
    let w = k.create_thread(p(4), AffinityMask::ALL).unwrap();
    settle(&mut k);
    k.mutex_lock(C0, m).unwrap();
    settle(&mut k);
    k.exit_current(C0).unwrap();
    settle(&mut k);
    assert_eq!(k.mutex_owner(m), Some(w));
    assert_eq!(k.current(C0), Some(w));
}
