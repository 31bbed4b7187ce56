//! Reactive and proactive reference protocols.

pub mod aodv;
pub mod dsdv;

pub use aodv::{AodvAgent, AodvMsg, AodvParams};
pub use dsdv::{DsdvAgent, DsdvMsg, DsdvParams};
