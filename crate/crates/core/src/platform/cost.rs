use serde::{Deserialize, Serialize};

use crate::types::Tick;

/// Virtual tick cost of each kind of platform event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub scheduler_invoke: Tick,
    pub context_switch: Tick,
    pub runqueue_op: Tick,
    pub rebalance_base: Tick,
    pub rebalance_per_ready_thread: Tick,
    pub ipi_delivery: Tick,
    pub flag_op: Tick,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            scheduler_invoke: 10,
            context_switch: 30,
            runqueue_op: 2,
            rebalance_base: 5,
            rebalance_per_ready_thread: 2,
            ipi_delivery: 5,
            flag_op: 2,
        }
    }
}

impl CostModel {
    /// A model where nothing costs time; handy for ordering-only tests.
    pub fn zero() -> Self {
        Self {
            scheduler_invoke: 0,
            context_switch: 0,
            runqueue_op: 0,
            rebalance_base: 0,
            rebalance_per_ready_thread: 0,
            ipi_delivery: 0,
            flag_op: 0,
        }
    }
}
