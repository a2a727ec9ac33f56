//! Global runqueue of ready threads.
//!
//! One circular singly-linked list per priority level, threaded through a
//! `next` array indexed by thread id, plus a 32-bit cache of the nonempty
//! levels. Each level only stores its tail; the head is `next[tail]`, so
//! adding at either end and rotating a level are O(1).

use thiserror::Error;

use crate::types::{AffinityMask, CoreId, Priority, ThreadId, PRIORITY_LEVELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum RunQueueError {
    #[error("runqueue is full")]
    Capacity,
    #[error("thread not found at the given priority level")]
    NotFound,
}

/// End of a level a thread is inserted at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Position {
    Head,
    Tail,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RunQueue {
    bitcache: u32,
    tails: [Option<ThreadId>; PRIORITY_LEVELS],
    next: Vec<Option<ThreadId>>,
    len: usize,
}

impl RunQueue {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity <= u8::MAX as usize, "thread ids are 8 bit");
        Self {
            bitcache: 0,
            tails: [None; PRIORITY_LEVELS],
            next: vec![None; capacity],
            len: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.next.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Bit `i` is set iff level `i` is nonempty.
    pub fn bitcache(&self) -> u32 {
        self.bitcache
    }

    pub fn contains(&self, tid: ThreadId) -> bool {
        self.next.get(tid.index()).is_some_and(|n| n.is_some())
    }

    /// Enqueues `tid` at one end of level `prio`.
    ///
    /// Panics if `tid` is already enqueued: the kernel owns every call site,
    /// so a double enqueue is a kernel defect.
    pub fn add(
        &mut self,
        tid: ThreadId,
        prio: Priority,
        pos: Position,
    ) -> Result<(), RunQueueError> {
        if tid.index() >= self.capacity() || self.len >= self.capacity() {
            return Err(RunQueueError::Capacity);
        }
        assert!(!self.contains(tid), "{tid} enqueued twice");

        let level = prio.index();
        match self.tails[level] {
            None => {
                self.next[tid.index()] = Some(tid);
                self.tails[level] = Some(tid);
                self.bitcache |= 1 << level;
            }
            Some(tail) => {
                self.next[tid.index()] = self.next[tail.index()];
                self.next[tail.index()] = Some(tid);
                if pos == Position::Tail {
                    self.tails[level] = Some(tid);
                }
            }
        }
        self.len += 1;
        Ok(())
    }

    /// Removes `tid` from level `prio`.
    pub fn del(&mut self, tid: ThreadId, prio: Priority) -> Result<(), RunQueueError> {
        let level = prio.index();
        let tail = self.tails[level].ok_or(RunQueueError::NotFound)?;
        let mut prev = tail;
        loop {
            let cur = self.link(prev);
            if cur == tid {
                self.unlink(level, prev, cur);
                return Ok(());
            }
            if cur == tail {
                return Err(RunQueueError::NotFound);
            }
            prev = cur;
        }
    }

    /// Front of the highest nonempty level.
    pub fn peek_head(&self) -> Option<ThreadId> {
        let level = self.highest_level()?;
        let tail = self.tails[level]?;
        Some(self.link(tail))
    }

    /// Front of level `prio`, if any.
    pub fn peek_level(&self, prio: Priority) -> Option<ThreadId> {
        self.tails[prio.index()].map(|tail| self.link(tail))
    }

    /// First thread, in priority then FIFO order, matching `pred`.
    pub fn find(
        &self,
        mut pred: impl FnMut(ThreadId, Priority) -> bool,
    ) -> Option<(ThreadId, Priority)> {
        self.iter().find(|&(tid, prio)| pred(tid, prio))
    }

    /// Removes and returns the first thread whose affinity permits `core`.
    ///
    /// Ineligible threads are skipped and stay queued.
    pub fn pop_head_filtered(
        &mut self,
        core: CoreId,
        affinity_of: impl Fn(ThreadId) -> AffinityMask,
    ) -> Option<ThreadId> {
        let mut bits = self.bitcache;
        while bits != 0 {
            let level = 31 - bits.leading_zeros() as usize;
            bits &= !(1 << level);
            let tail = self.tails[level].expect("bitcache out of sync");
            let mut prev = tail;
            loop {
                let cur = self.link(prev);
                if affinity_of(cur).allows(core) {
                    self.unlink(level, prev, cur);
                    return Some(cur);
                }
                if cur == tail {
                    break;
                }
                prev = cur;
            }
        }
        None
    }

    /// Moves the front of level `prio` to its tail.
    pub fn advance(&mut self, prio: Priority) -> Result<(), RunQueueError> {
        let level = prio.index();
        let tail = self.tails[level].ok_or(RunQueueError::NotFound)?;
        self.tails[level] = Some(self.link(tail));
        Ok(())
    }

    /// Threads in dispatch order: levels high to low, FIFO within a level.
    pub fn iter(&self) -> Iter<'_> {
        Iter {
            rq: self,
            levels: self.bitcache,
            cursor: None,
        }
    }

    fn highest_level(&self) -> Option<usize> {
        (self.bitcache != 0).then(|| 31 - self.bitcache.leading_zeros() as usize)
    }

    fn link(&self, tid: ThreadId) -> ThreadId {
        self.next[tid.index()].expect("broken runqueue link")
    }

    fn unlink(&mut self, level: usize, prev: ThreadId, cur: ThreadId) {
        if prev == cur {
            self.tails[level] = None;
            self.bitcache &= !(1 << level);
        } else {
            self.next[prev.index()] = self.next[cur.index()];
            if self.tails[level] == Some(cur) {
                self.tails[level] = Some(prev);
            }
        }
        self.next[cur.index()] = None;
        self.len -= 1;
    }
}

pub struct Iter<'a> {
    rq: &'a RunQueue,
    levels: u32,
    // (level, last yielded thread)
    cursor: Option<(usize, ThreadId)>,
}

impl Iterator for Iter<'_> {
    type Item = (ThreadId, Priority);

    fn next(&mut self) -> Option<Self::Item> {
        if let Some((level, last)) = self.cursor {
            let tail = self.rq.tails[level].expect("level emptied during iteration");
            if last != tail {
                let cur = self.rq.link(last);
                self.cursor = Some((level, cur));
                return Some((cur, Priority::level(level as u8)));
            }
        }
        if self.levels == 0 {
            self.cursor = None;
            return None;
        }
        let level = 31 - self.levels.leading_zeros() as usize;
        self.levels &= !(1 << level);
        let head = self
            .rq
            .link(self.rq.tails[level].expect("bitcache out of sync"));
        self.cursor = Some((level, head));
        Some((head, Priority::level(level as u8)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(i: u8) -> ThreadId {
        ThreadId::new(i)
    }

    fn p(l: u8) -> Priority {
        Priority::level(l)
    }

    fn order(rq: &RunQueue) -> Vec<u8> {
        rq.iter().map(|(tid, _)| tid.index() as u8).collect()
    }

    #[test]
    fn single_element() {
        let mut rq = RunQueue::new(16);
        rq.add(t(1), p(5), Position::Tail).unwrap();
        assert_eq!(rq.peek_head(), Some(t(1)));
        assert_eq!(rq.bitcache(), 1 << 5);
    }

    #[test]
    fn higher_level_first_then_fifo() {
        let mut rq = RunQueue::new(16);
        rq.add(t(1), p(2), Position::Tail).unwrap();
        rq.add(t(2), p(2), Position::Tail).unwrap();
        rq.add(t(3), p(5), Position::Tail).unwrap();
        assert_eq!(order(&rq), vec![3, 1, 2]);
        assert_eq!(rq.peek_head(), Some(t(3)));
    }

    #[test]
    fn capacity_boundary() {
        let mut rq = RunQueue::new(16);
        for i in 0..16 {
            rq.add(t(i), p(1), Position::Tail).unwrap();
        }
        assert_eq!(
            rq.add(t(16), p(1), Position::Tail),
            Err(RunQueueError::Capacity)
        );
    }

    #[test]
    #[should_panic(expected = "enqueued twice")]
    fn duplicate_enqueue_panics() {
        let mut rq = RunQueue::new(4);
        rq.add(t(1), p(2), Position::Tail).unwrap();
        let _ = rq.add(t(1), p(3), Position::Tail);
    }

    #[test]
    fn del_cases() {
        let mut rq = RunQueue::new(16);
        rq.add(t(3), p(5), Position::Tail).unwrap();
        rq.add(t(1), p(2), Position::Tail).unwrap();
        rq.del(t(3), p(5)).unwrap();
        assert_eq!(rq.peek_head(), Some(t(1)));
        assert_eq!(rq.bitcache() & (1 << 5), 0);

        assert_eq!(rq.del(t(1), p(5)), Err(RunQueueError::NotFound));
        rq.del(t(1), p(2)).unwrap();
        assert!(rq.is_empty());
        assert_eq!(rq.bitcache(), 0);
        assert_eq!(rq.peek_head(), None);
    }

    #[test]
    fn del_middle_and_tail() {
        let mut rq = RunQueue::new(8);
        for i in 0..4 {
            rq.add(t(i), p(3), Position::Tail).unwrap();
        }
        rq.del(t(2), p(3)).unwrap();
        assert_eq!(order(&rq), vec![0, 1, 3]);
        rq.del(t(3), p(3)).unwrap();
        rq.add(t(5), p(3), Position::Tail).unwrap();
        assert_eq!(order(&rq), vec![0, 1, 5]);
        assert_eq!(rq.del(t(7), p(3)), Err(RunQueueError::NotFound));
    }

    #[test]
    fn head_insertion() {
        let mut rq = RunQueue::new(8);
        rq.add(t(1), p(3), Position::Tail).unwrap();
        rq.add(t(2), p(3), Position::Head).unwrap();
        rq.add(t(3), p(3), Position::Tail).unwrap();
        assert_eq!(order(&rq), vec![2, 1, 3]);
    }

    #[test]
    fn advance_rotates() {
        let mut rq = RunQueue::new(8);
        assert_eq!(rq.advance(p(3)), Err(RunQueueError::NotFound));
        rq.add(t(1), p(3), Position::Tail).unwrap();
        rq.advance(p(3)).unwrap();
        assert_eq!(order(&rq), vec![1]);
        rq.add(t(2), p(3), Position::Tail).unwrap();
        rq.advance(p(3)).unwrap();
        assert_eq!(order(&rq), vec![2, 1]);
        assert_eq!(rq.peek_head(), Some(t(2)));

        let mut rq = RunQueue::new(8);
        for i in 1..=3 {
            rq.add(t(i), p(3), Position::Tail).unwrap();
        }
        for _ in 0..3 {
            rq.advance(p(3)).unwrap();
        }
        assert_eq!(order(&rq), vec![1, 2, 3]);
    }

    #[test]
    fn filtered_pop_skips_ineligible() {
        let core0 = CoreId::new(0);
        let core1 = CoreId::new(1);
        let affinity = |tid: ThreadId| {
            if tid == t(0) {
                AffinityMask::only(core1)
            } else {
                AffinityMask::ALL
            }
        };
        let mut rq = RunQueue::new(8);
        rq.add(t(0), p(7), Position::Tail).unwrap();
        rq.add(t(1), p(4), Position::Tail).unwrap();
        assert_eq!(rq.pop_head_filtered(core0, affinity), Some(t(1)));
        assert!(rq.contains(t(0)));
        assert_eq!(rq.pop_head_filtered(core0, affinity), None);
        assert_eq!(rq.pop_head_filtered(core1, affinity), Some(t(0)));
        assert!(rq.is_empty());
        assert_eq!(rq.pop_head_filtered(core0, affinity), None);
    }
}
