//! Experiment driver around the completion solver: seeded synthetic trials,
//! oversampling sweeps with median aggregation, and machine-readable
//! reports.

pub mod experiment;
pub mod report;

pub use experiment::{run_single, run_sweep, ExperimentSpec, SolverOverrides, SweepOutput, SweepRow, TrialRecord};
pub use report::{emit_report, ReportFormat};
