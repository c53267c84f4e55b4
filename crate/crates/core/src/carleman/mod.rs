//! Carleman weight, the two structural conditions, and the coefficient audit.

mod audit;
mod conditions;
mod weight;

pub use audit::{
    audit_proof_coefficients, doubling_grid, initial_form_matrix, initial_form_min_eigenvalue,
    AuditReport, AuditSettings, ThresholdSearch, WorstPoint,
};
pub use conditions::{
    condition_matrix, gradient_energy, verify_condition_d, verify_condition_params,
    ConditionDReport, ConditionParamsReport,
};
pub use weight::{
    weight_eval, CarlemanParams, DerivativeRoute, NodeTerms, WeightEvaluation, WeightEvaluator,
    WeightFunction,
};
