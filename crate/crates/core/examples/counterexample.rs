//! A source invisible to boundary and endpoint observations without noise.

use hyperinv::geometry::{build_mesh, Domain, PrincipalField};
use hyperinv::inverse::{deterministic_counterexample, BumpSpec};
use hyperinv::spde::TimeGrid;

fn main() -> hyperinv::Result<()> {
    let field = PrincipalField::identity(1);
    for n in [257, 513, 1025] {
        let mesh = build_mesh(&Domain::unit_interval(), &[n])?;
        let grid = TimeGrid::with_steps(1.0, 2 * (n - 1))?;
        let ce = deterministic_counterexample(&BumpSpec::standard(&mesh, 1.0), &field, &mesh, grid)?;
        let analytic = ce.forward_error(&mesh, &field, grid, false)?;
        let discrete = ce.forward_error(&mesh, &field, grid, true)?;
        println!(
            "n={n} trace={} |y(T)|={} |f|={:.4} |y|={:.4} error analytic={:.3e} discrete={:.3e}",
            ce.trace_norm, ce.terminal_norm, ce.f_norm, ce.y_norm, analytic, discrete
        );
    }
    Ok(())
}
