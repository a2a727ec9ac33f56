//! Preemptive priority scheduler for small multicore machines.
//!
//! The [`kernel`] keeps one global runqueue and maps ready threads onto
//! cores with one of three strategies. [`platform`] hosts the kernel on a
//! virtual multicore machine, either interleaving cores deterministically
//! from a seed or running one host thread per core. Thread bodies are step
//! functions that issue one [`Syscall`] at a time.

pub mod async_bridge;
pub mod body;
pub mod error;
pub mod kernel;
pub mod platform;
pub mod runqueue;
pub mod sync;
pub mod types;

pub use body::{Scenario, StepContext, Syscall, ThreadBody, ThreadSpec};
pub use error::KernelError;
pub use kernel::{Kernel, KernelConfig, Strategy, ThreadState, WaitMode};
pub use platform::{run, Backend, CostModel, RunOptions, RunOutcome, Trace};
pub use types::{AffinityMask, CoreId, MutexId, Priority, ThreadFlags, ThreadId, Tick};
