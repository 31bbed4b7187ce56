//! CSMA/CA parameters and the collision rule used at receivers.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacParams {
    pub difs: f64,
    pub slot: f64,
    pub cw_min: u32,
    pub cw_max: u32,
    /// Retransmissions after the first attempt of a unicast frame.
    pub max_retries: u32,
    pub header_bytes: usize,
    pub queue_capacity: usize,
    /// Delay before a node senses a transmission that reached it (s).
    pub cca_delay: f64,
}

impl Default for MacParams {
    fn default() -> Self {
        Self {
            difs: 50e-6,
            slot: 20e-6,
            cw_min: 31,
            cw_max: 1023,
            max_retries: 7,
            header_bytes: 34,
            queue_capacity: 500,
            cca_delay: 15e-6,
        }
    }
}

impl MacParams {
    pub fn is_valid(&self) -> bool {
        self.difs >= 0.0
            && self.slot > 0.0
            && self.cw_min <= self.cw_max
            && self.queue_capacity > 0
            && self.cca_delay >= 0.0
    }

    pub fn next_cw(&self, cw: u32) -> u32 {
        (2 * cw + 1).min(self.cw_max)
    }
}

/// Open intervals `[a0, a1)` and `[b0, b1)` share some time.
pub fn overlaps(a0: f64, a1: f64, b0: f64, b1: f64) -> bool {
    a0 < b1 && b0 < a1
}
