//! Scenario-driven front end for `eerds-core`: configuration, the
//! electrostatics/dual/direct/evolution pipeline, reports and self checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod pipeline;
pub mod report;
pub mod scenario;
pub mod selfcheck;

pub use error::{Error, Result};
pub use pipeline::{run, write_outcome, RunOptions, RunOutcome, Status, Summary};
pub use scenario::{Scenario, Stages};
