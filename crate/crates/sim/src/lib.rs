//! Deterministic simulation of users, organizations, clearance centers and
//! servers, with scripted adversaries and transcript checks.

#![allow(clippy::result_large_err)]

pub mod attacks;
pub mod harness;
pub mod privacy;
pub mod scenario;

pub use harness::{AdversaryAction, Endpoint, Harness, HarnessError, Network, Note, SimClock, Transcript};
pub use scenario::{run, Deployment, Report, Scenario, ScenarioError, Step};
