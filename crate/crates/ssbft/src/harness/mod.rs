//! Scenario runner: parsing, execution and trace-based verdicts.

pub mod report;
pub mod runner;
pub mod scenario;
pub mod suite;

pub use report::{Property, Report, Status, Verdict};
pub use runner::{run_batch, run_scenario, Outcome, RunError};
pub use scenario::{Recycling, Scenario, ScenarioError};
