//! Numerical checks of the weighted identity and of the weighted estimates built on it.

mod identity;
mod ratio;

pub use identity::{
    identity_refinement, loglog_slope, verify_pointwise_identity, IdentityReport, IdentityRow,
    IdentitySides, IdentityStudy, ManufacturedProcess, TemporalFactor, TemporalPath,
};
pub use ratio::*;
