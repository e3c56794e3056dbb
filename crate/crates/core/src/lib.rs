//! Enrollment certificates, clearance centers and ticket-based access for
//! users a server has never seen before.

// Errors carry the offending tokens by value.
#![allow(clippy::result_large_err)]

pub mod agents;
pub mod clearance;
pub mod codec;
pub mod envelope;
pub mod local;
pub mod messages;
pub mod modifier;
pub mod server;
pub mod tags;
pub mod token;
