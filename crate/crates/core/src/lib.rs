// The `!(x > 0.0)` checks are there to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod evolution;
pub mod grid;
pub mod motility;
pub mod operators;

pub use diagnostics::{Diagnostics, DiagnosticsRecord};
pub use error::{Error, Result};
pub use evolution::{Solver, SolverConfig, State, Trajectory};
pub use grid::{Field, FieldStats, Grid};
pub use motility::{MotilityClassification, MotilityFunction};
pub use operators::{Backend, NeumannOperators};
pub mod scenario;
pub use scenario::{load_config, Scenario};
