//! Identifier and value newtypes shared by every layer of the scheduler.

use core::fmt;

use serde::{Deserialize, Serialize};

/// Number of priority levels. Level 0 is reserved for idle threads.
pub const PRIORITY_LEVELS: usize = 32;

/// Maximum number of cores a [`crate::KernelConfig`] may describe.
pub const MAX_CORES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThreadId(u8);

impl ThreadId {
    pub const fn new(value: u8) -> Self {
        Self(value)
    }

    pub const fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<ThreadId> for usize {
    fn from(value: ThreadId) -> Self {
        value.index()
    }
}

impl fmt::Display for ThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoreId(u8);

impl CoreId {
    pub const fn new(value: u8) -> Self {
        Self(value)
    }

    pub const fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for CoreId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "core{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MutexId(u8);

impl MutexId {
    pub const fn new(value: u8) -> Self {
        Self(value)
    }

    pub const fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for MutexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

/// Scheduling priority. Higher values win; 0 belongs to the idle threads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Priority(u8);

impl Priority {
    pub const IDLE: Priority = Priority(0);
    pub const MIN: Priority = Priority(1);
    pub const MAX: Priority = Priority(PRIORITY_LEVELS as u8 - 1);

    /// Returns `None` for values outside `0..=31`.
    pub const fn new(level: u8) -> Option<Self> {
        if (level as usize) < PRIORITY_LEVELS {
            Some(Self(level))
        } else {
            None
        }
    }

    /// Like [`Priority::new`] but panics on an out-of-range level.
    ///
    /// Meant for literals in scenarios and tests.
    #[track_caller]
    pub const fn level(level: u8) -> Self {
        match Self::new(level) {
            Some(prio) => prio,
            None => panic!("priority level out of range"),
        }
    }

    pub const fn get(self) -> u8 {
        self.0
    }

    pub const fn index(self) -> usize {
        self.0 as usize
    }

    /// True for levels usable by application threads (1..=31).
    pub const fn is_application(self) -> bool {
        self.0 >= 1
    }
}

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Set of cores a thread may run on: bit `i` permits core `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AffinityMask(u8);

impl AffinityMask {
    pub const ALL: AffinityMask = AffinityMask(u8::MAX);

    pub const fn from_bits(bits: u8) -> Self {
        Self(bits)
    }

    pub const fn only(core: CoreId) -> Self {
        Self(1 << core.0)
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub const fn allows(self, core: CoreId) -> bool {
        self.0 & (1 << core.0) != 0
    }

    /// Whether at least one of the first `num_cores` cores is permitted.
    pub const fn is_valid_for(self, num_cores: usize) -> bool {
        let low = if num_cores >= 8 {
            u8::MAX
        } else {
            (1u8 << num_cores) - 1
        };
        self.0 & low != 0
    }

    pub fn cores(self, num_cores: usize) -> impl Iterator<Item = CoreId> {
        (0..num_cores as u8)
            .map(CoreId::new)
            .filter(move |c| self.allows(*c))
    }
}

/// Pending-flag word of a thread.
pub type ThreadFlags = u16;

/// Virtual time unit of the deterministic platform.
pub type Tick = u64;
