//! Experiment specs, runners, reports and self-checks.

pub mod checks;
pub mod report;
pub mod runner;
pub mod spec;

pub use checks::{gradcheck_suite, homophily_bound_check, GradCase, HomophilyCheck};
pub use report::{Aggregate, RunRecord, RunReport};
pub use runner::{evaluate, run_experiment, ExperimentOutput, RunArtifacts, RunOptions};
pub use spec::{DatasetSpec, ExperimentKind, ExperimentSpec, ModelSpec};
