//! Condition checks and lambda thresholds for the one-dimensional audited weight.

use hyperinv::carleman::{audit_proof_coefficients, AuditSettings, CarlemanParams, WeightFunction};
use hyperinv::geometry::{build_mesh, Domain, PrincipalField};

fn main() -> hyperinv::Result<()> {
    let mesh = build_mesh(&Domain::unit_interval(), &[65])?;
    let field = PrincipalField::identity(1);
    let d = WeightFunction::shifted_quadratic(8.0, &[-1.0]);
    let params = CarlemanParams {
        lambda: 1.0,
        c0: 0.1,
        c1: 0.9,
        mu0: 32.0,
        horizon: 18.0,
    };
    let report = audit_proof_coefficients(&params, &d, &field, &mesh, &AuditSettings::default())?;
    println!("{}", serde_json::to_string_pretty(&report.to_json())?);
    Ok(())
}
