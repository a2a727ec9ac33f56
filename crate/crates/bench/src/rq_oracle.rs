//! Exhaustive comparison of the runqueue against a stable-sorted list.
//!
//! The list holds `(thread, priority, key)` entries sorted by descending
//! priority, then ascending key. Tail insertion takes a key above every key
//! in use and head insertion one below; rotation re-keys the front entry of
//! a level as if it were inserted at the tail again.

use std::collections::HashMap;

use mcsched::runqueue::{Position, RunQueue, RunQueueError};
use mcsched::{AffinityMask, CoreId, Priority, ThreadId};

/// Dispatch order of a runqueue state.
type Order = Vec<(ThreadId, Priority)>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RqOp {
    Add(u8, u8, Position),
    Del(u8, u8),
    Advance(u8),
    Pop(u8),
}

#[derive(Clone, Debug, Default)]
struct SortedList {
    entries: Vec<(ThreadId, Priority, i64)>,
    next_key: i64,
}

impl SortedList {
    fn sort(&mut self) {
        self.entries
            .sort_by_key(|&(_, p, k)| (std::cmp::Reverse(p), k));
    }

    fn add(&mut self, t: ThreadId, p: Priority, pos: Position) {
        self.next_key += 1;
        let key = match pos {
            Position::Tail => self.next_key,
            Position::Head => -self.next_key,
        };
        self.entries.push((t, p, key));
        self.sort();
    }

    fn del(&mut self, t: ThreadId, p: Priority) -> Result<(), RunQueueError> {
        let i = self
            .entries
            .iter()
            .position(|&(x, q, _)| x == t && q == p)
            .ok_or(RunQueueError::NotFound)?;
        self.entries.remove(i);
        Ok(())
    }

    fn advance(&mut self, p: Priority) -> Result<(), RunQueueError> {
        let i = self
            .entries
            .iter()
            .position(|&(_, q, _)| q == p)
            .ok_or(RunQueueError::NotFound)?;
        self.next_key += 1;
        self.entries[i].2 = self.next_key;
        self.sort();
        Ok(())
    }

    fn pop(
        &mut self,
        core: CoreId,
        affinity: impl Fn(ThreadId) -> AffinityMask,
    ) -> Option<ThreadId> {
        let i = self
            .entries
            .iter()
            .position(|&(t, _, _)| affinity(t).allows(core))?;
        Some(self.entries.remove(i).0)
    }

    /// Observable state: dispatch order.
    fn order(&self) -> Order {
        self.entries.iter().map(|&(t, p, _)| (t, p)).collect()
    }
}

/// Thread 0 is pinned to core 1, thread 1 to core 0, the rest run anywhere.
pub fn oracle_affinity(t: ThreadId) -> AffinityMask {
    match t.index() {
        0 => AffinityMask::only(CoreId::new(1)),
        1 => AffinityMask::only(CoreId::new(0)),
        _ => AffinityMask::ALL,
    }
}

fn all_ops(threads: u8, prios: &[u8]) -> Vec<RqOp> {
    let mut ops = Vec::new();
    for t in 0..threads {
        for &p in prios {
            ops.push(RqOp::Add(t, p, Position::Head));
            ops.push(RqOp::Add(t, p, Position::Tail));
            ops.push(RqOp::Del(t, p));
        }
    }
    ops.extend(prios.iter().map(|&p| RqOp::Advance(p)));
    ops.extend([RqOp::Pop(0), RqOp::Pop(1)]);
    ops
}

fn observe(rq: &RunQueue, model: &SortedList, threads: u8) -> Result<(), String> {
    let order = model.order();
    let got: Vec<_> = rq.iter().collect();
    if got != order {
        return Err(format!("order {got:?}, expected {order:?}"));
    }
    let bits = order.iter().fold(0u32, |b, (_, p)| b | 1 << p.index());
    if rq.bitcache() != bits {
        return Err(format!("bitcache {:#b}, expected {bits:#b}", rq.bitcache()));
    }
    if rq.len() != order.len() || rq.peek_head() != order.first().map(|e| e.0) {
        return Err("length or head mismatch".into());
    }
    for p in 0..32u8 {
        let front = order.iter().find(|e| e.1.get() == p).map(|e| e.0);
        if rq.peek_level(Priority::level(p)) != front {
            return Err(format!("front of level {p} differs"));
        }
    }
    for t in 0..threads {
        let t = ThreadId::new(t);
        if rq.contains(t) != order.iter().any(|e| e.0 == t) {
            return Err(format!("membership of {t} differs"));
        }
    }
    Ok(())
}

/// Outcome of an exhaustive run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RqOracleStats {
    /// Operation sequences covered (including ones cut short by memoization).
    pub sequences: u64,
    /// Distinct states expanded.
    pub states: usize,
}

/// Checks every sequence of up to `max_ops` operations over `threads`
/// threads and the given priorities. Adding a thread that is already queued
/// is a caller error and is not generated. Because the runqueue's layout is
/// a function of its dispatch order, states reached twice with no more
/// remaining depth are not expanded again.
pub fn check_exhaustive(
    max_ops: usize,
    threads: u8,
    prios: &[u8],
) -> Result<RqOracleStats, String> {
    let ops = all_ops(threads, prios);
    let mut seen: HashMap<Order, usize> = HashMap::new();
    let mut counts: HashMap<(Order, usize), u64> = HashMap::new();

    #[allow(clippy::too_many_arguments)]
    fn dfs(
        rq: &RunQueue,
        model: &SortedList,
        depth: usize,
        ops: &[RqOp],
        threads: u8,
        seen: &mut HashMap<Order, usize>,
        counts: &mut HashMap<(Order, usize), u64>,
        trail: &mut Vec<RqOp>,
    ) -> Result<u64, String> {
        let key = model.order();
        if let Some(&n) = counts.get(&(key.clone(), depth)) {
            return Ok(n);
        }
        seen.entry(key.clone())
            .and_modify(|d| *d = (*d).max(depth))
            .or_insert(depth);
        let mut total = 1;
        if depth > 0 {
            for &op in ops {
                let mut rq = rq.clone();
                let mut model = model.clone();
                let fail = |trail: &[RqOp], op: RqOp, msg: String| {
                    format!("after {trail:?} then {op:?}: {msg}")
                };
                match op {
                    RqOp::Add(t, p, pos) => {
                        let t = ThreadId::new(t);
                        if rq.contains(t) {
                            continue;
                        }
                        rq.add(t, Priority::level(p), pos)
                            .map_err(|e| fail(trail, op, e.to_string()))?;
                        model.add(t, Priority::level(p), pos);
                    }
                    RqOp::Del(t, p) => {
                        let got = rq.del(ThreadId::new(t), Priority::level(p));
                        let want = model.del(ThreadId::new(t), Priority::level(p));
                        if got != want {
                            return Err(fail(
                                trail,
                                op,
                                format!("returned {got:?}, expected {want:?}"),
                            ));
                        }
                    }
                    RqOp::Advance(p) => {
                        let got = rq.advance(Priority::level(p));
                        let want = model.advance(Priority::level(p));
                        if got != want {
                            return Err(fail(
                                trail,
                                op,
                                format!("returned {got:?}, expected {want:?}"),
                            ));
                        }
                    }
                    RqOp::Pop(c) => {
                        let core = CoreId::new(c);
                        let got = rq.pop_head_filtered(core, oracle_affinity);
                        let want = model.pop(core, oracle_affinity);
                        if got != want {
                            return Err(fail(
                                trail,
                                op,
                                format!("popped {got:?}, expected {want:?}"),
                            ));
                        }
                    }
                }
                observe(&rq, &model, threads).map_err(|m| fail(trail, op, m))?;
                trail.push(op);
                total += dfs(&rq, &model, depth - 1, ops, threads, seen, counts, trail)?;
                trail.pop();
            }
        }
        counts.insert((key, depth), total);
        Ok(total)
    }

    let rq = RunQueue::new(threads as usize);
    let model = SortedList::default();
    observe(&rq, &model, threads)?;
    let sequences = dfs(
        &rq,
        &model,
        max_ops,
        &ops,
        threads,
        &mut seen,
        &mut counts,
        &mut Vec::new(),
    )?;
    Ok(RqOracleStats {
        sequences,
        states: seen.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_exhaustive_run() {
        let stats = check_exhaustive(3, 2, &[1, 2]).unwrap();
        assert!(stats.states > 1);
        assert!(stats.sequences > stats.states as u64);
    }

    #[test]
    fn model_orders_like_the_examples() {
        let mut m = SortedList::default();
        let t = ThreadId::new;
        m.add(t(1), Priority::level(2), Position::Tail);
        m.add(t(2), Priority::level(2), Position::Tail);
        m.add(t(3), Priority::level(5), Position::Tail);
        assert_eq!(
            m.order().iter().map(|e| e.0).collect::<Vec<_>>(),
            [t(3), t(1), t(2)]
        );
        m.add(t(0), Priority::level(2), Position::Head);
        assert_eq!(m.order()[1].0, t(0));
    }
}
