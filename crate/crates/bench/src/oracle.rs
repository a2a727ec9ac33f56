//! Work-conservation checking of the kernel under random workloads.
//!
//! At every quiescent state of a run, no core may run a thread (or idle)
//! below the effective priority of a ready thread that is allowed on that
//! core. The running set must also be disjoint and respect affinities.

use std::fmt;

use mcsched::kernel::KernelSnapshot;
use mcsched::platform::{quiescent_states, run_with, RunError};
use mcsched::{
    AffinityMask, Backend, CoreId, KernelConfig, MutexId, Priority, RunOptions, Scenario, Syscall,
    ThreadId, ThreadState, Trace, WaitMode,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const MAX_FUZZ_THREADS: usize = 15;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Index of the generated scenario.
    pub sequence: usize,
    /// Trace position of the offending quiescent state.
    pub position: usize,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sequence {} @{}: {}",
            self.sequence, self.position, self.message
        )
    }
}

/// Problems with the running set in `snap`.
pub fn check_snapshot(snap: &KernelSnapshot) -> Vec<String> {
    let mut out = Vec::new();
    let view = |t: ThreadId| snap.threads.iter().find(|v| v.tid == t);
    let mut on_core = Vec::with_capacity(snap.running.len());
    for (c, r) in snap.running.iter().enumerate() {
        let core = CoreId::new(c as u8);
        let Some(t) = *r else {
            out.push(format!("{core} runs nothing"));
            on_core.push(Priority::IDLE);
            continue;
        };
        let Some(v) = view(t) else {
            out.push(format!("{core} runs unknown {t}"));
            on_core.push(Priority::IDLE);
            continue;
        };
        if v.state != (ThreadState::Running { core }) {
            out.push(format!("{core} runs {t} whose state is {:?}", v.state));
        }
        if !v.idle && !v.affinity.allows(core) {
            out.push(format!(
                "{t} runs on {core} outside its affinity {:#b}",
                v.affinity.bits()
            ));
        }
        if snap.running[..c].contains(r) {
            out.push(format!("{t} runs on two cores"));
        }
        on_core.push(if v.idle {
            Priority::IDLE
        } else {
            v.effective_priority
        });
    }
    for w in snap
        .threads
        .iter()
        .filter(|v| v.state == ThreadState::Ready && !v.idle)
    {
        for (c, &p) in on_core.iter().enumerate() {
            let core = CoreId::new(c as u8);
            if w.affinity.allows(core) && p < w.effective_priority {
                out.push(format!(
                    "{} waits at priority {} while {core} runs {:?} at {p}",
                    w.tid, w.effective_priority, snap.running[c]
                ));
            }
        }
    }
    out
}

/// Violations over every quiescent state of `trace`.
pub fn check_trace(trace: &Trace, sequence: usize) -> Vec<Violation> {
    quiescent_states(trace)
        .iter()
        .flat_map(|q| {
            check_snapshot(&q.snapshot)
                .into_iter()
                .map(move |message| Violation {
                    sequence,
                    position: q.position,
                    message,
                })
        })
        .collect()
}

fn random_mask(rng: &mut impl Rng, cores: usize) -> AffinityMask {
    if rng.gen_bool(0.5) {
        AffinityMask::ALL
    } else {
        AffinityMask::from_bits(rng.gen_range(1..(1u16 << cores)) as u8)
    }
}

/// Random scenario: up to 14 worker threads issuing a random mix of
/// syscalls, plus a lowest-priority janitor that keeps waking everybody so
/// that most runs end instead of stalling.
pub fn random_scenario(rng: &mut impl Rng, cores: usize) -> Scenario {
    let workers = rng.gen_range(1..MAX_FUZZ_THREADS);
    let m = MutexId::new(0);
    let tid = |rng: &mut dyn rand::RngCore| ThreadId::new(rng.gen_range(0..workers) as u8);
    let mut sc = Scenario::new("fuzz").with_mutexes(1);
    for _ in 0..workers {
        let len = rng.gen_range(1..=12);
        let mut calls = Vec::with_capacity(len + 2);
        for _ in 0..len {
            let call = match rng.gen_range(0..20) {
                0..=3 => Syscall::Compute(rng.gen_range(1..60)),
                4..=5 => Syscall::Yield,
                6..=8 => Syscall::Wake(tid(rng)),
                9 => Syscall::Sleep,
                10..=11 => Syscall::SetPriority(tid(rng), Priority::level(rng.gen_range(1..=31))),
                12 => Syscall::SetAffinity(tid(rng), random_mask(rng, cores)),
                13..=15 => Syscall::FlagsSet(tid(rng), rng.gen_range(1..4)),
                16..=17 => {
                    let mode = *[WaitMode::Any, WaitMode::All].choose(rng).unwrap();
                    Syscall::FlagsWait(mode, rng.gen_range(1..4))
                }
                _ => {
                    calls.push(Syscall::Lock(m));
                    calls.push(Syscall::Compute(rng.gen_range(1..30)));
                    Syscall::Unlock(m)
                }
            };
            calls.push(call);
        }
        let prio = rng.gen_range(1..=31);
        let mask = random_mask(rng, cores);
        sc = sc.thread(prio, mask, mcsched::body::Script::new(calls));
    }
    let mut janitor = Vec::new();
    for _ in 0..6 {
        for t in 0..workers {
            janitor.push(Syscall::Wake(ThreadId::new(t as u8)));
            janitor.push(Syscall::FlagsSet(ThreadId::new(t as u8), 3));
        }
        janitor.push(Syscall::Compute(200));
    }
    sc.thread(1, AffinityMask::ALL, mcsched::body::Script::new(janitor))
}

/// Runs `scenario` and returns its trace, including the trace of a run that
/// stalled.
pub fn run_for_check(
    config: &KernelConfig,
    scenario: Scenario,
    seed: u64,
) -> Result<Trace, RunError> {
    let opts = RunOptions {
        snapshots: true,
        max_steps: 200_000,
        ..RunOptions::default()
    };
    match run_with(
        config.clone(),
        scenario,
        Backend::Deterministic,
        seed,
        &opts,
    ) {
        Ok(trace) => Ok(trace),
        Err(RunError::Deadlock(report)) if report.trace.is_some() => Ok(report.trace.unwrap()),
        Err(e) => Err(e),
    }
}

/// Generates `num_sequences` random scenarios for `config` and checks every
/// quiescent state of each run.
pub fn oracle_check_work_conservation(
    config: &KernelConfig,
    num_sequences: usize,
    seed: u64,
) -> Vec<Violation> {
    let mut out = Vec::new();
    for sequence in 0..num_sequences {
        let run_seed = seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(sequence as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
        let sc = random_scenario(&mut rng, config.num_cores);
        match run_for_check(config, sc, run_seed) {
            Ok(trace) => out.extend(check_trace(&trace, sequence)),
            Err(e) => out.push(Violation {
                sequence,
                position: 0,
                message: format!("run failed: {e}"),
            }),
        }
    }
    out
}

/// A high priority thread pinned to a core that a busy thread occupies,
/// next to a low priority thread on the other core.
pub fn pinned_adversary() -> Scenario {
    use mcsched::body::Script;
    let c0 = AffinityMask::only(CoreId::new(0));
    let pinned = ThreadId::new(2);
    Scenario::new("pinned")
        .thread(
            6,
            AffinityMask::ALL,
            Script::new(vec![
                Syscall::Compute(300),
                Syscall::Yield,
                Syscall::Compute(300),
            ]),
        )
        .thread(
            2,
            AffinityMask::ALL,
            Script::new(vec![Syscall::Wake(pinned), Syscall::Compute(600)]),
        )
        .thread(
            5,
            c0,
            Script::new(vec![Syscall::Sleep, Syscall::Compute(100)]),
        )
}

#[cfg(test)]
mod tests {
    use super::*;
    use mcsched::kernel::ThreadView;

    fn view(t: u8, state: ThreadState, prio: u8, affinity: AffinityMask, idle: bool) -> ThreadView {
        ThreadView {
            tid: ThreadId::new(t),
            state,
            base_priority: Priority::level(prio),
            effective_priority: Priority::level(prio),
            affinity,
            idle,
        }
    }

    fn running(c: u8) -> ThreadState {
        ThreadState::Running {
            core: CoreId::new(c),
        }
    }

    #[test]
    fn flags_lower_running_thread() {
        let snap = KernelSnapshot {
            running: vec![Some(ThreadId::new(0)), Some(ThreadId::new(9))],
            threads: vec![
                view(0, running(0), 7, AffinityMask::ALL, false),
                view(1, ThreadState::Ready, 4, AffinityMask::ALL, false),
                view(9, running(1), 0, AffinityMask::ALL, true),
            ],
            mutex_owners: vec![],
        };
        let v = check_snapshot(&snap);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].contains("t1"));
    }

    #[test]
    fn respects_affinity() {
        let only0 = AffinityMask::only(CoreId::new(0));
        let snap = KernelSnapshot {
            running: vec![Some(ThreadId::new(0)), Some(ThreadId::new(9))],
            threads: vec![
                view(0, running(0), 7, AffinityMask::ALL, false),
                view(1, ThreadState::Ready, 4, only0, false),
                view(9, running(1), 0, AffinityMask::ALL, true),
            ],
            mutex_owners: vec![],
        };
        assert!(check_snapshot(&snap).is_empty());
    }

    #[test]
    fn flags_structural_faults() {
        let only1 = AffinityMask::only(CoreId::new(1));
        let snap = KernelSnapshot {
            running: vec![Some(ThreadId::new(0)), Some(ThreadId::new(0))],
            threads: vec![view(0, running(0), 7, only1, false)],
            mutex_owners: vec![],
        };
        let v = check_snapshot(&snap);
        assert!(v.iter().any(|m| m.contains("two cores")));
        assert!(v.iter().any(|m| m.contains("outside its affinity")));
        assert!(v.iter().any(|m| m.contains("state")));
    }

    #[test]
    fn generator_stays_in_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let sc = random_scenario(&mut rng, 3);
            assert!(sc.threads.len() <= MAX_FUZZ_THREADS);
            assert!(sc.threads.iter().all(|t| t.priority.is_application()));
        }
    }
}
