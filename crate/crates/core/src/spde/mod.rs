//! Monte Carlo simulation of the stochastic wave equation with Dirichlet data.

mod coefficients;
pub mod dump;
mod noise;
mod norms;
mod operator;
mod solver;

pub use coefficients::{
    compute_a_norm, CoefficientSet, Force, SampledCoefficients, ScalarField, TimeProfile,
};
pub use noise::{brownian_increments, coarsen};
pub use norms::{
    boundary_normal_trace, energy, force_norm, gradient, gradient_norm_sq, h10_l2_norm,
    hidden_regularity_ratio, l2_norm, l2_norm_sq, time_trapezoid, trace_norm_sq,
    HiddenRegularity, TraceReport,
};
pub use operator::{assemble_divergence, assemble_gradient, assemble_spatial_operator, SparseMatrix};
pub use solver::{
    cfl_limit, simulate_forward, simulate_with_noise, solve_deterministic_reversed, Levels,
    PathEnsemble, PathRecord, Recording, Scratch, SimulationSpec, Stepper, TimeGrid,
};
