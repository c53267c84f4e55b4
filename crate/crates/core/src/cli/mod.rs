//! Config-driven experiment runner behind the `hyperinv` binary.

mod config;
mod report;
mod run;

pub use config::{
    AuditConfig, CounterexampleConfig, ExperimentConfig, ExperimentKind, ForwardConfig,
    IdentityConfig, Inline, ReconstructConfig, SampleConfig, TruthConfig, UniquenessConfig,
    WeightConfig,
};
pub use report::{emit_report, write_gamma0, write_json, write_nodal, Format};
pub use run::{execute, exit_code, run_experiment, time_grid, Outcome, RunSummary};
