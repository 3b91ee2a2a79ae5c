//! Mean-field and agent-based modelling of bot-malware spread over wireless
//! device networks, with degree-aware patching policies.

pub mod abm;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod network;
pub mod optimizer;

pub use error::{Error, Result};
