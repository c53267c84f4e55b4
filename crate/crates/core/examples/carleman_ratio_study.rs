//! Weighted left and right sides on reversed deterministic solutions across a lambda grid.

use hyperinv::carleman::{CarlemanParams, WeightFunction};
use hyperinv::geometry::{build_mesh, extract_gamma0, Domain, PrincipalField};
use hyperinv::identity_lab::{carleman_ratio, random_smooth_fields};
use hyperinv::spde::{solve_deterministic_reversed, CoefficientSet, TimeGrid};

fn main() -> hyperinv::Result<()> {
    let mesh = build_mesh(&Domain::unit_interval(), &[33])?;
    let field = PrincipalField::identity(1);
    let coeffs = CoefficientSet::wave(field.clone());
    let d = WeightFunction::shifted_quadratic(1.0, &[-1.0]);
    let params = CarlemanParams {
        lambda: 1.0,
        c0: 0.1,
        c1: 0.5,
        mu0: 8.0,
        horizon: 2.0,
    };
    let subset = extract_gamma0(&mesh, &field, &d)?;
    let grid = TimeGrid::with_steps(2.0, 128)?;
    let solutions = random_smooth_fields(&mesh, 10, 4, 1)
        .iter()
        .map(|w| solve_deterministic_reversed(&mesh, &coeffs, w, grid))
        .collect::<hyperinv::Result<Vec<_>>>()?;
    let study = carleman_ratio(&mesh, &params, &d, &subset, &grid, &solutions, &[1.0, 2.0, 4.0, 8.0])?;
    for r in &study.rows {
        println!("lambda={:<4} log max ratio={:.3}", r.lambda, r.log_max_ratio);
    }
    println!("z0 slope {:.3}, log spread {:.3}", study.z0_slope, study.log_max_ratio_spread);
    Ok(())
}
