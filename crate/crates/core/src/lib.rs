//! Test-automation copilot: turns validated system-test specifications into
//! executable test scripts through a bounded generate, execute and evaluate
//! loop, and leaves every candidate for human review.

pub mod cli;
pub mod clock;
pub mod evaluator;
pub mod exec_harness;
pub mod generator;
pub mod orchestrator;
pub mod reporting;
pub mod retrieval;
pub mod review;
pub mod script_dsl;
pub mod spec_model;
