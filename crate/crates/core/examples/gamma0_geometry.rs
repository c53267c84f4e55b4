//! Observed boundary portion on the unit square for a weight centred outside the domain.

use hyperinv::carleman::WeightFunction;
use hyperinv::geometry::{build_mesh, extract_gamma0, Domain, PrincipalField};

fn main() -> hyperinv::Result<()> {
    let mesh = build_mesh(&Domain::unit_square(), &[9])?;
    let d = WeightFunction::shifted_quadratic(1.0, &[-0.5, -0.5]);
    let subset = extract_gamma0(&mesh, &PrincipalField::identity(2), &d)?;
    for (slot, b) in mesh.boundary.iter().enumerate() {
        let x = mesh.coords(b.node);
        let mark = if subset.contains(slot) { "observed" } else { "" };
        println!("({:.3}, {:.3}) sigma={:+.3} {mark}", x[0], x[1], subset.sigma[slot]);
    }
    println!("{} of {} boundary nodes observed", subset.len(), mesh.boundary.len());
    Ok(())
}
