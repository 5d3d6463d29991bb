//! Experiment runner for the AoI analysis library: configuration parsing,
//! parameter sweeps with CSV output, and the cross-check suite.

pub mod spec;
pub mod sweep;
pub mod validate;

pub use spec::{parse_spec, Axis, ExperimentSpec, Mode, PolicyKind, SpecError, Sweep};
pub use sweep::{run_sweep, write_csv, SweepError, SweepFailure, SweepRow, SweepTable};
pub use validate::{validate, ValidateOptions, ValidationReport};
