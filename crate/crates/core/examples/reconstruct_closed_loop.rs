//! Recovers `(z0, z1, g2)` from synthetic observations under frozen noise.

use hyperinv::carleman::WeightFunction;
use hyperinv::geometry::{build_mesh, extract_gamma0, Domain, PrincipalField};
use hyperinv::inverse::{forward_observation_map, reconstruct, InversionSettings, Unknowns};
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
    let truth = Unknowns {
        z0: ScalarField::sine(1.0, &[1.0]).on_mesh(&mesh)?,
        z1: vec![0.0; mesh.node_count()],
        g2: ScalarField::sine(1.0, &[2.0]).on_mesh(&mesh)?,
    };
    let obs = forward_observation_map(&mesh, &coeffs, &truth, &subset, grid, 21, 4)?;
    let settings = InversionSettings {
        epsilon: 1e-6,
        tol: 1e-9,
        max_iter: 3000,
        mode: Default::default(),
    };
    let r = reconstruct(&mesh, &coeffs, grid, &subset, &obs, &settings, None, Some(&truth))?;
    println!("iterations={} converged={} misfit={:.3e}", r.iterations, r.converged, r.misfit);
    println!("relative errors {:?}", r.relative_errors);
    Ok(())
}
