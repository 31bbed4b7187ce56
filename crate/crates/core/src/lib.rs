//! Discrete-event simulation of a mission-oriented flying ad hoc network.
//!
//! The crate plans and integrates UAV trajectories for a four-group diamond
//! formation, derives a connectivity timeline from them, and runs a
//! trajectory-aware source routing protocol (CPR-TD) against simplified
//! AODV and DSDV baselines over a Friis radio and a CSMA/CA MAC.

pub mod baselines;
pub mod campaign;
pub mod config;
pub mod connectivity;
pub mod kinematics;
pub mod maneuvers;
pub mod metrics;
pub mod mobility;
pub mod netsim;
pub mod protocol;

use std::fmt;

use serde::{Deserialize, Serialize};

/// Index of a node in the formation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct NodeId(pub u16);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u16> for NodeId {
    fn from(v: u16) -> Self {
        NodeId(v)
    }
}

/// Identifier of an application packet within one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct PacketId(pub u32);

impl fmt::Display for PacketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
