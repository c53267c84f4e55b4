//! Monte Carlo forward run with additive noise and its hidden-regularity ratio.

use hyperinv::geometry::{build_mesh, Domain, PrincipalField};
use hyperinv::spde::{
    hidden_regularity_ratio, simulate_forward, CoefficientSet, Force, Recording, ScalarField,
    SimulationSpec, TimeProfile,
};

fn main() -> hyperinv::Result<()> {
    let mesh = build_mesh(&Domain::unit_interval(), &[65])?;
    let coeffs = CoefficientSet::wave(PrincipalField::identity(1)).with_force(Force::Separable {
        g1: TimeProfile::Constant { value: 1.0 },
        g2: ScalarField::sine(1.0, &[1.0]),
    });
    let z0 = ScalarField::sine(1.0, &[1.0]).on_mesh(&mesh)?;
    let z1 = vec![0.0; mesh.node_count()];
    let spec = SimulationSpec {
        horizon: 2.0,
        dt: 1.0 / 256.0,
        paths: 128,
        seed: 7,
        record: Recording::Observations,
    };
    let ens = simulate_forward(&mesh, &coeffs, &z0, &z1, &spec)?;
    let h = hidden_regularity_ratio(&mesh, &ens, &coeffs)?;
    println!("paths={} trace={:.4} data={:.4} force={:.4} ratio={:.4}",
        ens.len(), h.trace_norm, h.data_norm, h.force_norm, h.ratio);
    Ok(())
}
