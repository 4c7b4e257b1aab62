//! Tabular constrained-MDP toolkit: the Triple-Q online learner, an exact
//! occupancy-measure LP baseline, and an experiment harness measuring regret
//! and constraint violation against that baseline.

pub mod cli;
pub mod cmdp;
pub mod envs;
pub mod error;
pub mod harness;
pub mod learner;
pub mod lp;
pub mod simplex;

pub use cmdp::{CmdpSpec, PolicyTable, ValueTables};
pub use error::{Error, Result};
pub use learner::{HyperParams, LearnerState, Mode};
pub use lp::{LpSolution, LpStatus, OccupancyMeasure};
