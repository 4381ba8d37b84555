//! Scenario files, presets, initial data, persistence and the commands
//! behind the `ksls` binary.

pub mod checkpoint;
pub mod config;
pub mod initial;
pub mod output;
pub mod presets;
pub mod refine;
pub mod run;
pub mod verify;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{load_config, InitialSpec, RawScenario, Scenario};
pub use initial::make_initial;
pub use refine::{refine, RefineReport};
pub use run::{run_scenario, RunOptions, RunSummary};
pub use verify::{verify, Suite, VerifyOptions, VerifyReport};
