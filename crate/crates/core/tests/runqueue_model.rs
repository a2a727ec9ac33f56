use mcsched::runqueue::{Position, RunQueue, RunQueueError};
use mcsched::{AffinityMask, CoreId, Priority, ThreadId};
use proptest::prelude::*;

const THREADS: u8 = 6;

/// Reference: a list kept in dispatch order.
#[derive(Default)]
struct Model {
    list: Vec<(ThreadId, Priority)>,
}

impl Model {
    fn add(&mut self, tid: ThreadId, prio: Priority, pos: Position) {
        let at = match pos {
            Position::Head => self.list.iter().position(|&(_, p)| p <= prio),
            Position::Tail => self.list.iter().position(|&(_, p)| p < prio),
        };
        self.list.insert(at.unwrap_or(self.list.len()), (tid, prio));
    }

    fn del(&mut self, tid: ThreadId, prio: Priority) -> bool {
        match self.list.iter().position(|&e| e == (tid, prio)) {
            Some(i) => {
                self.list.remove(i);
                true
            }
            None => false,
        }
    }

    fn advance(&mut self, prio: Priority) -> bool {
        let Some(first) = self.list.iter().position(|&(_, p)| p == prio) else {
            return false;
        };
        let last = self.list.iter().rposition(|&(_, p)| p == prio).unwrap();
        let e = self.list.remove(first);
        self.list.insert(last, e);
        true
    }

    fn pop_for(&mut self, core: CoreId) -> Option<ThreadId> {
        let i = self
            .list
            .iter()
            .position(|&(t, _)| affinity(t).allows(core))?;
        Some(self.list.remove(i).0)
    }
}

/// Even threads may only run on core 0.
fn affinity(t: ThreadId) -> AffinityMask {
    if t.index().is_multiple_of(2) {
        AffinityMask::only(CoreId::new(0))
    } else {
        AffinityMask::ALL
    }
}

#[derive(Clone, Debug)]
enum Op {
    Add(u8, u8, bool),
    Del(u8, u8),
    Advance(u8),
    Pop(u8),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0..THREADS, 1u8..5, any::<bool>()).prop_map(|(t, p, h)| Op::Add(t, p, h)),
        2 => (0..THREADS, 1u8..5).prop_map(|(t, p)| Op::Del(t, p)),
        1 => (1u8..5).prop_map(Op::Advance),
        1 => (0u8..2).prop_map(Op::Pop),
    ]
}

fn check(rq: &RunQueue, model: &Model) {
    let got: Vec<_> = rq.iter().collect();
    assert_eq!(got, model.list);
    assert_eq!(rq.len(), model.list.len());
    assert_eq!(rq.peek_head(), model.list.first().map(|e| e.0));
    let bits = model.list.iter().fold(0u32, |b, (_, p)| b | 1 << p.index());
    assert_eq!(rq.bitcache(), bits);
    for t in 0..THREADS {
        let t = ThreadId::new(t);
        assert_eq!(rq.contains(t), model.list.iter().any(|e| e.0 == t));
    }
}

proptest! {
    #[test]
    fn matches_sorted_list(ops in prop::collection::vec(op(), 0..60)) {
        let mut rq = RunQueue::new(THREADS as usize);
        let mut model = Model::default();
        for op in ops {
            match op {
                Op::Add(t, p, head) => {
                    let tid = ThreadId::new(t);
                    if rq.contains(tid) {
                        continue;
                    }
                    let pos = if head { Position::Head } else { Position::Tail };
                    rq.add(tid, Priority::level(p), pos).unwrap();
                    model.add(tid, Priority::level(p), pos);
                }
                Op::Del(t, p) => {
                    let ok = model.del(ThreadId::new(t), Priority::level(p));
                    let r = rq.del(ThreadId::new(t), Priority::level(p));
                    prop_assert_eq!(r, if ok { Ok(()) } else { Err(RunQueueError::NotFound) });
                }
                Op::Advance(p) => {
                    let ok = model.advance(Priority::level(p));
                    prop_assert_eq!(rq.advance(Priority::level(p)).is_ok(), ok);
                }
                Op::Pop(c) => {
                    let core = CoreId::new(c);
                    prop_assert_eq!(rq.pop_head_filtered(core, affinity), model.pop_for(core));
                }
            }
            check(&rq, &model);
        }
    }

    #[test]
    fn full_rotation_restores_order(n in 1u8..THREADS, p in 1u8..31) {
        let mut rq = RunQueue::new(THREADS as usize);
        for t in 0..n {
            rq.add(ThreadId::new(t), Priority::level(p), Position::Tail).unwrap();
        }
        let before: Vec<_> = rq.iter().collect();
        for _ in 0..n {
            rq.advance(Priority::level(p)).unwrap();
        }
        prop_assert_eq!(rq.iter().collect::<Vec<_>>(), before);
    }
}

#[test]
fn insertion_examples() {
    let mut rq = RunQueue::new(8);
    let t = ThreadId::new;
    rq.add(t(1), Priority::level(2), Position::Tail).unwrap();
    rq.add(t(2), Priority::level(2), Position::Tail).unwrap();
    rq.add(t(3), Priority::level(5), Position::Tail).unwrap();
    let order: Vec<_> = rq.iter().map(|e| e.0).collect();
    assert_eq!(order, [t(3), t(1), t(2)]);
    rq.del(t(3), Priority::level(5)).unwrap();
    assert_eq!(rq.peek_head(), Some(t(1)));
    assert_eq!(rq.bitcache() & 1 << 5, 0);
    rq.advance(Priority::level(2)).unwrap();
    assert_eq!(rq.peek_head(), Some(t(2)));
}

#[test]
fn filtered_pop_skips_pinned() {
    let mut rq = RunQueue::new(8);
    let a = ThreadId::new(0);
    let b = ThreadId::new(1);
    rq.add(a, Priority::level(7), Position::Tail).unwrap();
    rq.add(b, Priority::level(4), Position::Tail).unwrap();
    let aff = |t: ThreadId| {
        if t == a {
            AffinityMask::only(CoreId::new(1))
        } else {
            AffinityMask::ALL
        }
    };
    assert_eq!(rq.pop_head_filtered(CoreId::new(0), aff), Some(b));
    assert!(rq.contains(a));
    assert_eq!(rq.pop_head_filtered(CoreId::new(0), aff), None);
}

#[test]
fn capacity_error() {
    let mut rq = RunQueue::new(2);
    assert_eq!(
        rq.add(ThreadId::new(2), Priority::level(1), Position::Tail),
        Err(RunQueueError::Capacity)
    );
}
