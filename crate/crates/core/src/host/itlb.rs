//! Instruction-TLB interference on cross-application context switches.

use serde::{Deserialize, Serialize};

use super::types::Owner;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ItlbModel {
    pub enabled: bool,
    /// Misses charged per page of the incoming code footprint.
    pub k_miss: f64,
    /// Stall cycles per miss.
    pub penalty_cycles: f64,
    /// Simulated clock used to convert cycles to seconds.
    pub clock_hz: f64,
}

impl Default for ItlbModel {
    fn default() -> Self {
        Self {
            enabled: true,
            k_miss: 4.0,
            penalty_cycles: 40.0,
            clock_hz: 3.8e9,
        }
    }
}

/// Cost charged to the incoming entity of a context switch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SwitchCost {
    pub flushes: u64,
    pub misses: f64,
    pub stall_seconds: f64,
}

impl ItlbModel {
    pub fn stall_cycles(&self, misses: f64) -> f64 {
        misses * self.penalty_cycles
    }

    /// Cost of running `incoming` on a core whose last resident was `last`.
    pub fn switch_cost(&self, last: Option<Owner>, incoming: Owner, footprint: f64) -> SwitchCost {
        if !self.enabled || last == Some(incoming) {
            return SwitchCost::default();
        }
        let misses = self.k_miss * footprint;
        SwitchCost {
            flushes: 1,
            misses,
            stall_seconds: self.stall_cycles(misses) / self.clock_hz,
        }
    }
}

/// Per-core residency tracker driving [`ItlbModel::switch_cost`].
#[derive(Debug, Clone, Default)]
pub struct CoreResidency {
    pub last_resident: Option<Owner>,
}

impl CoreResidency {
    /// Switch the core to `incoming`, returning what the incoming entity pays.
    /// An idle outgoing side is represented by `None` and changes nothing.
    pub fn account_context_switch(
        &mut self,
        model: &ItlbModel,
        _outgoing: Option<Owner>,
        incoming: Owner,
        footprint: f64,
    ) -> SwitchCost {
        let cost = model.switch_cost(self.last_resident, incoming, footprint);
        self.last_resident = Some(incoming);
        cost
    }
}
