use thiserror::Error;

use crate::types::{CoreId, MutexId, ThreadId};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("no free thread slot (capacity {0})")]
    Capacity(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("no active thread {0}")]
    NotFound(ThreadId),
    #[error("no mutex {0}")]
    NoSuchMutex(MutexId),
    #[error("no application thread is running on {0}")]
    NoCurrentThread(CoreId),
    #[error("invalid state: {0}")]
    State(&'static str),
    #[error("{0} already owns {1}")]
    Deadlock(ThreadId, MutexId),
    #[error("{0} does not own {1}")]
    NotOwner(ThreadId, MutexId),
    #[error("invalid configuration: {0}")]
    Config(String),
}
