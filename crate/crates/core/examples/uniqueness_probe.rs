//! Estimate norms as the observations shrink to zero.

use hyperinv::carleman::WeightFunction;
use hyperinv::geometry::{build_mesh, extract_gamma0, Domain, PrincipalField};
use hyperinv::inverse::{uniqueness_probe, InversionSettings};
use hyperinv::spde::{CoefficientSet, Force, ScalarField, TimeGrid, TimeProfile};

fn main() -> hyperinv::Result<()> {
    let mesh = build_mesh(&Domain::unit_interval(), &[33])?;
    let field = PrincipalField::identity(1);
    let coeffs = CoefficientSet::wave(field.clone()).with_force(Force::Separable {
        g1: TimeProfile::Constant { value: 1.0 },
        g2: ScalarField::Zero,
    });
    let subset = extract_gamma0(&mesh, &field, &WeightFunction::shifted_quadratic(1.0, &[-1.0]))?;
    let grid = TimeGrid::with_steps(2.5, 160)?;
    let settings = InversionSettings {
        epsilon: 1e-6,
        tol: 1e-10,
        max_iter: 3000,
        mode: Default::default(),
    };
    let r = uniqueness_probe(&mesh, &coeffs, grid, &subset, &[0.0, 1e-2, 1e-3, 1e-4], 4, 4, &settings)?;
    for row in &r.rows {
        println!("delta={:<8} |u|={:.4e}", row.delta, row.estimate_norm);
    }
    println!("slope {:.4}", r.slope);
    Ok(())
}
