//! Config-driven experiments, the verification suite and the acceptance
//! criteria.

mod acceptance;
mod run;
mod spec;
mod verify;

pub use acceptance::{
    quadratic_combination, rosenbrock_combination, run_criterion, CriterionOutcome, CRITERIA, MASTER_SEEDS,
    REQUIRED_SEEDS,
};
pub use run::{
    envelope_for, run_combination, run_experiment, EntryStatus, EnvelopeSummary, ExperimentReport, ReportEntry,
    REPORT_FILE,
};
pub use spec::{Combination, CombinationSpec, ExperimentSpec, Optimizer};
pub use verify::{verify_suite, verify_suite_with, Check, Faults, Level, VerifyReport};
