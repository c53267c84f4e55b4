//! Partial stability quotients on trajectories vanishing at the final time.

use hyperinv::carleman::{CarlemanParams, WeightFunction};
use hyperinv::geometry::{build_mesh, extract_gamma0, Domain, PrincipalField};
use hyperinv::identity_lab::{random_smooth_fields, reversed_ensemble, stability_ratio};
use hyperinv::spde::{CoefficientSet, TimeGrid};

fn main() -> hyperinv::Result<()> {
    let mesh = build_mesh(&Domain::unit_interval(), &[65])?;
    let field = PrincipalField::identity(1);
    let coeffs = CoefficientSet::wave(field.clone());
    let d = WeightFunction::shifted_quadratic(1.0, &[-1.0]);
    let params = CarlemanParams {
        lambda: 0.5,
        c0: 0.1,
        c1: 0.5,
        mu0: 8.0,
        horizon: 3.0,
    };
    let subset = extract_gamma0(&mesh, &field, &d)?;
    let grid = TimeGrid::with_steps(3.0, 384)?;
    let ens = reversed_ensemble(&mesh, &coeffs, &random_smooth_fields(&mesh, 16, 5, 9), grid)?;
    let plain = stability_ratio(&mesh, &coeffs, &ens, &subset, None, 1e-3)?;
    let weighted = stability_ratio(&mesh, &coeffs, &ens, &subset, Some((&params, &d)), 1e-3)?;
    println!("unweighted s in [{:.4}, {:.4}]", plain.min_s, plain.max_s);
    println!("weighted   s in [{:.4e}, {:.4e}]", weighted.min_s, weighted.max_s);
    Ok(())
}
