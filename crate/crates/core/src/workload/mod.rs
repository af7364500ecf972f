//! Scenario files, the driver that replays them and the built-in
//! phone-workload analog.

pub mod analog;
mod runner;
mod scenario;

pub use runner::{
    builtin_launch_time, run_scenario, simulate, CpuEvent, LaunchRecord, Replay, RunOutcome,
};
pub use scenario::{Action, Scenario, ScenarioError, ScenarioEvent};
