//! Scenario files, profile generators, CSV output and run drivers.

pub mod config;
pub mod io;
pub mod profiles;
pub mod run;

pub use config::{PotentialKind, RunMode, ScenarioConfig};
pub use profiles::Profile;
pub use run::{optimize_smooth, run_gradcheck, run_scenario, solve_obstacle, RunOptions, RunReport, Scenario};
