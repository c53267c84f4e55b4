//! Refinement ladders for the weighted pointwise identity, with and without noise.

use hyperinv::carleman::{CarlemanParams, WeightFunction};
use hyperinv::geometry::{Domain, PrincipalField};
use hyperinv::identity_lab::{identity_refinement, IdentityStudy, ManufacturedProcess, TemporalFactor};
use hyperinv::spde::ScalarField;

fn main() -> hyperinv::Result<()> {
    let params = CarlemanParams {
        lambda: 1.0,
        c0: 0.1,
        c1: 0.5,
        mu0: 8.0,
        horizon: 1.0,
    };
    let d = WeightFunction::shifted_quadratic(1.0, &[-1.0]);
    let field = PrincipalField::identity(1);
    for temporal in [TemporalFactor::cubic_bump(1.0), TemporalFactor::Brownian { sigma: 1.0 }] {
        let u = ManufacturedProcess {
            profile: ScalarField::sine(1.0, &[1.0]),
            temporal,
        };
        let study = IdentityStudy {
            domain: Domain::unit_interval(),
            base_nodes: 9,
            base_steps: 8,
            levels: 4,
            paths: 256,
            seed: 3,
        };
        let r = identity_refinement(&u, &params, &d, &field, &study)?;
        for row in &r.rows {
            println!("dt={:.5} residual={:.3e} normalized={:.3e}", row.dt, row.residual, row.normalized_residual);
        }
        println!("observed order {:.3}\n", r.observed_order);
    }
    Ok(())
}
