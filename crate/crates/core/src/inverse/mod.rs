//! Recovery of `(z0, z1, g2)` from the boundary trace on the observed portion and
//! the terminal state.

mod counterexample;
mod observation;
mod reconstruct;

pub use counterexample::{deterministic_counterexample, BumpSpec, Counterexample};
pub use observation::{
    forward_observation_map, mesh_id, ObservationOperator, ObservationRecord, PathObservation,
    Unknowns,
};
pub use reconstruct::{
    h1_seminorm_sq, observation_noise, reconstruct, relative_errors, uniqueness_probe,
    unknowns_norm_sq, InversionMode, InversionSettings, ReconstructionResult, UniquenessReport,
    UniquenessRow,
};
