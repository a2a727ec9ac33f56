//! Core reallocation: map the highest priority runnable threads onto cores.

use serde::{Deserialize, Serialize};

use super::{Kernel, KernelEvent};
use crate::types::{AffinityMask, CoreId, ThreadId};

/// Thread assigned to each core by the last rebalance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationTable {
    slots: Vec<Option<ThreadId>>,
}

impl AllocationTable {
    pub fn new(num_cores: usize) -> Self {
        Self {
            slots: vec![None; num_cores],
        }
    }

    pub fn from_slots(slots: Vec<Option<ThreadId>>) -> Self {
        Self { slots }
    }

    pub fn get(&self, core: CoreId) -> Option<ThreadId> {
        self.slots[core.index()]
    }

    pub fn core_of(&self, tid: ThreadId) -> Option<CoreId> {
        self.slots
            .iter()
            .position(|s| *s == Some(tid))
            .map(|i| CoreId::new(i as u8))
    }

    pub fn slots(&self) -> &[Option<ThreadId>] {
        &self.slots
    }
}

impl Kernel {
    /// Recomputes the allocation table and returns the cores whose entry
    /// changed.
    ///
    /// Threads are taken in runqueue order (priority, then FIFO) and kept
    /// whenever the chosen set can still be matched onto distinct permitted
    /// cores, which yields a maximum-priority feasible set. That set is then
    /// placed so that as few table entries as possible differ from the
    /// previous table, preferring earlier-ranked threads on lower cores.
    pub fn rebalance(&mut self) -> Vec<CoreId> {
        let candidates: Vec<(ThreadId, AffinityMask)> = self
            .runqueue
            .iter()
            .map(|(tid, _)| (tid, self.tcb(tid).affinity))
            .collect();
        self.stats.rebalances += 1;
        self.stats.rebalance_work += candidates.len() as u64;

        let num_cores = self.config.num_cores;
        let selected = select_feasible(&candidates, num_cores);
        let table = place(&selected, &self.allocation, num_cores);
        let changed: Vec<CoreId> = (0..num_cores)
            .map(|c| CoreId::new(c as u8))
            .filter(|&c| table.get(c) != self.allocation.get(c))
            .collect();
        self.allocation = table;
        self.push_event(KernelEvent::Rebalance {
            changed: changed.clone(),
        });
        changed
    }
}

fn select_feasible(
    candidates: &[(ThreadId, AffinityMask)],
    num_cores: usize,
) -> Vec<(ThreadId, AffinityMask)> {
    let mut selected = Vec::with_capacity(num_cores);
    for &candidate in candidates {
        if selected.len() == num_cores {
            break;
        }
        selected.push(candidate);
        if !has_matching(&selected, num_cores) {
            selected.pop();
        }
    }
    selected
}

/// Whether every thread can get its own permitted core (augmenting paths).
fn has_matching(threads: &[(ThreadId, AffinityMask)], num_cores: usize) -> bool {
    fn augment(
        i: usize,
        threads: &[(ThreadId, AffinityMask)],
        owner: &mut [Option<usize>],
        seen: &mut [bool],
    ) -> bool {
        for core in threads[i].1.cores(owner.len()) {
            let c = core.index();
            if seen[c] {
                continue;
            }
            seen[c] = true;
            if owner[c].is_none_or(|j| augment(j, threads, owner, seen)) {
                owner[c] = Some(i);
                return true;
            }
        }
        false
    }

    let mut owner = vec![None; num_cores];
    (0..threads.len()).all(|i| {
        let mut seen = vec![false; num_cores];
        augment(i, threads, &mut owner, &mut seen)
    })
}

fn place(
    selected: &[(ThreadId, AffinityMask)],
    prev: &AllocationTable,
    num_cores: usize,
) -> AllocationTable {
    struct Search<'a> {
        selected: &'a [(ThreadId, AffinityMask)],
        prev: &'a AllocationTable,
        assign: Vec<Option<usize>>,
        used: Vec<bool>,
        best: Option<(usize, Vec<Option<usize>>)>,
    }

    impl Search<'_> {
        fn run(&mut self, core: usize, placed: usize, diff: usize) {
            if self.best.as_ref().is_some_and(|(d, _)| diff >= *d) {
                return;
            }
            let cores_left = self.assign.len() - core;
            if self.selected.len() - placed > cores_left {
                return;
            }
            if core == self.assign.len() {
                self.best = Some((diff, self.assign.clone()));
                return;
            }
            let id = CoreId::new(core as u8);
            let before = self.prev.get(id);
            for i in 0..self.selected.len() {
                let (tid, affinity) = self.selected[i];
                if self.used[i] || !affinity.allows(id) {
                    continue;
                }
                self.used[i] = true;
                self.assign[core] = Some(i);
                self.run(
                    core + 1,
                    placed + 1,
                    diff + usize::from(before != Some(tid)),
                );
                self.used[i] = false;
            }
            self.assign[core] = None;
            self.run(core + 1, placed, diff + usize::from(before.is_some()));
        }
    }

    let mut search = Search {
        selected,
        prev,
        assign: vec![None; num_cores],
        used: vec![false; selected.len()],
        best: None,
    };
    search.run(0, 0, 0);
    let (_, assign) = search.best.expect("selected threads are matchable");
    AllocationTable::from_slots(
        assign
            .into_iter()
            .map(|slot| slot.map(|i| selected[i].0))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(i: u8) -> ThreadId {
        ThreadId::new(i)
    }

    const ANY: AffinityMask = AffinityMask::ALL;

    #[test]
    fn feasible_selection_skips_unplaceable() {
        let c0 = AffinityMask::from_bits(0b01);
        // Two threads pinned to core 0: only the first can be chosen.
        let sel = select_feasible(&[(t(0), c0), (t(1), c0), (t(2), ANY)], 2);
        assert_eq!(
            sel.iter().map(|s| s.0).collect::<Vec<_>>(),
            vec![t(0), t(2)]
        );
    }

    #[test]
    fn placement_keeps_incumbents() {
        let prev = AllocationTable::from_slots(vec![Some(t(0)), Some(t(1))]);
        let table = place(&[(t(0), ANY), (t(2), ANY)], &prev, 2);
        assert_eq!(table.slots(), &[Some(t(0)), Some(t(2))]);

        let prev = AllocationTable::from_slots(vec![Some(t(5)), None]);
        let table = place(&[(t(1), ANY)], &prev, 2);
        assert_eq!(table.slots(), &[Some(t(1)), None]);
    }

    #[test]
    fn placement_respects_affinity() {
        let prev = AllocationTable::from_slots(vec![Some(t(0)), None]);
        let only1 = AffinityMask::from_bits(0b10);
        let only0 = AffinityMask::from_bits(0b01);
        let table = place(&[(t(0), only1), (t(1), only0)], &prev, 2);
        assert_eq!(table.slots(), &[Some(t(1)), Some(t(0))]);
    }
}
