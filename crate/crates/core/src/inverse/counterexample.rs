use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PrincipalField, SpatialMesh};
use crate::spde::{l2_norm, simulate_with_noise, time_trapezoid, CoefficientSet, Recording, Stepper, TimeGrid};

/// `exp(-1 / (1 - r^2))` inside `|r| < 1` and its first two derivatives.
fn bump(r: f64) -> [f64; 3] {
    if r.abs() >= 1.0 {
        return [0.0; 3];
    }
    let s = 1.0 - r * r;
    let v = (-1.0 / s).exp();
    let g1 = -2.0 * r / (s * s);
    let g2 = -2.0 / (s * s) - 8.0 * r * r / (s * s * s);
    [v, v * g1, v * (g1 * g1 + g2)]
}

/// Smooth compactly supported `y(t, x) = amplitude * psi((t - tc) / rt) *
/// prod_a psi((x_a - c_a) / r_a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpSpec {
    pub amplitude: f64,
    pub time_center: f64,
    pub time_radius: f64,
    pub center: Vec<f64>,
    pub radius: Vec<f64>,
}

impl BumpSpec {
    /// Support `(T/4, 3T/4)` in time and the domain shrunk by 25% about its centre.
    pub fn standard(mesh: &SpatialMesh, horizon: f64) -> Self {
        let d = mesh.dim;
        Self {
            amplitude: 1.0,
            time_center: 0.5 * horizon,
            time_radius: 0.25 * horizon,
            center: (0..d).map(|a| 0.5 * (mesh.lo[a] + mesh.hi[a])).collect(),
            radius: (0..d).map(|a| 0.375 * (mesh.hi[a] - mesh.lo[a])).collect(),
        }
    }

    /// `y`, `y_t`, `y_tt`, gradient and Hessian at `(t, x)`.
    fn jet(&self, t: f64, x: [f64; 2], dim: usize) -> (f64, f64, f64, [f64; 2], [[f64; 2]; 2]) {
        let et = bump((t - self.time_center) / self.time_radius);
        let mut sp = [[1.0, 0.0, 0.0]; 2];
        for a in 0..dim {
            let b = bump((x[a] - self.center[a]) / self.radius[a]);
            sp[a] = [b[0], b[1] / self.radius[a], b[2] / (self.radius[a] * self.radius[a])];
        }
        let space = sp[0][0] * sp[1][0];
        let amp = self.amplitude;
        let mut grad = [0.0; 2];
        let mut hess = [[0.0; 2]; 2];
        for a in 0..dim {
            let o = 1 - a;
            grad[a] = amp * et[0] * sp[a][1] * sp[o][0];
            hess[a][a] = amp * et[0] * sp[a][2] * sp[o][0];
            if dim == 2 {
                hess[a][o] = amp * et[0] * sp[a][1] * sp[o][1];
            }
        }
        let rt = self.time_radius;
        (
            amp * et[0] * space,
            amp * et[1] / rt * space,
            amp * et[2] / (rt * rt) * space,
            grad,
            hess,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    #[serde(skip)]
    pub y: Vec<Vec<f64>>,
    /// Source reproducing `y` exactly under the leapfrog recursion.
    #[serde(skip)]
    pub f_discrete: Vec<Vec<f64>>,
    /// `y_tt - div(b grad y)` sampled on the grid.
    #[serde(skip)]
    pub f_analytic: Vec<Vec<f64>>,
    pub trace_norm: f64,
    pub terminal_norm: f64,
    pub terminal_velocity_norm: f64,
    pub initial_norm: f64,
    pub initial_velocity_norm: f64,
    /// `|f|_{L^2(Q)}` of the analytic source.
    pub f_norm: f64,
    pub f_discrete_norm: f64,
    /// `|y|_{L^2(Q)}`.
    pub y_norm: f64,
}

fn space_time_norm(mesh: &SpatialMesh, levels: &[Vec<f64>], dt: f64) -> f64 {
    let per: Vec<f64> = levels.iter().map(|v| l2_norm(mesh, v).powi(2)).collect();
    time_trapezoid(&per, dt).sqrt()
}

/// A nonzero source with zero initial data whose solution leaves no trace on
/// the boundary and vanishes at both ends of the time interval.
pub fn deterministic_counterexample(
    spec: &BumpSpec,
    field: &PrincipalField,
    mesh: &SpatialMesh,
    grid: TimeGrid,
) -> Result<Counterexample> {
    let dim = mesh.dim;
    if spec.center.len() != dim || spec.radius.len() != dim {
        return Err(Error::Config("bump centre and radius need one entry per axis".into()));
    }
    let lo_t = spec.time_center - spec.time_radius;
    let hi_t = spec.time_center + spec.time_radius;
    if lo_t < 2.0 * grid.dt || hi_t > grid.horizon - 2.0 * grid.dt || spec.time_radius <= 0.0 {
        return Err(Error::Construction(format!(
            "time support ({lo_t}, {hi_t}) needs two steps of margin inside (0, {})",
            grid.horizon
        )));
    }
    for a in 0..dim {
        let margin = 2.0 * mesh.spacing[a];
        if spec.radius[a] <= 0.0
            || spec.center[a] - spec.radius[a] < mesh.lo[a] + margin
            || spec.center[a] + spec.radius[a] > mesh.hi[a] - margin
        {
            return Err(Error::Construction(format!(
                "spatial support along axis {a} needs two cells of margin"
            )));
        }
    }
    if !field.is_analytic() {
        return Err(Error::Unsupported("the analytic source needs a closed-form field".into()));
    }
    let coeffs = CoefficientSet::wave(field.clone());
    let stepper = Stepper::new(mesh, &coeffs, grid)?;
    let n = mesh.node_count();
    let mut y = Vec::with_capacity(grid.levels());
    let mut f_analytic = Vec::with_capacity(grid.levels());
    let mut y_t0 = vec![0.0; n];
    let mut y_t_end = vec![0.0; n];
    for k in 0..grid.levels() {
        let t = grid.time(k);
        let mut yk = vec![0.0; n];
        let mut fk = vec![0.0; n];
        for node in 0..n {
            let x = mesh.coords(node);
            let (v, vt, vtt, g, h) = spec.jet(t, x, dim);
            yk[node] = v;
            let mut div = 0.0;
            if let Some(j) = field.jet(x) {
                for i in 0..dim {
                    for jj in 0..dim {
                        div += j.d1[i][jj][jj] * g[i] + j.value[i][jj] * h[i][jj];
                    }
                }
            }
            fk[node] = vtt - div;
            if k == 0 {
                y_t0[node] = vt;
            }
            if k == grid.steps {
                y_t_end[node] = vt;
            }
        }
        y.push(yk);
        f_analytic.push(fk);
    }
    let op = stepper.operator();
    let mut f_discrete = vec![vec![0.0; n]; grid.levels()];
    let mut ny = vec![0.0; n];
    for k in 1..grid.steps {
        op.apply(&y[k], &mut ny);
        for &i in &mesh.interior {
            f_discrete[k][i] = (y[k + 1][i] - 2.0 * y[k][i] + y[k - 1][i]) / (grid.dt * grid.dt) - ny[i];
        }
    }
    let traces: Vec<f64> = y
        .iter()
        .map(|yk| {
            (0..mesh.boundary.len())
                .map(|s| mesh.boundary[s].weight * mesh.normal_derivative(yk, s).powi(2))
                .sum()
        })
        .collect();
    Ok(Counterexample {
        trace_norm: time_trapezoid(&traces, grid.dt).sqrt(),
        terminal_norm: l2_norm(mesh, &y[grid.steps]),
        terminal_velocity_norm: l2_norm(mesh, &y_t_end),
        initial_norm: l2_norm(mesh, &y[0]),
        initial_velocity_norm: l2_norm(mesh, &y_t0),
        f_norm: space_time_norm(mesh, &f_analytic, grid.dt),
        f_discrete_norm: space_time_norm(mesh, &f_discrete, grid.dt),
        y_norm: space_time_norm(mesh, &y, grid.dt),
        y,
        f_discrete,
        f_analytic,
    })
}

impl Counterexample {
    /// `|z - y|_{L^2(Q)}` for the forward solution `z` driven by the chosen source
    /// from zero data.
    pub fn forward_error(
        &self,
        mesh: &SpatialMesh,
        field: &PrincipalField,
        grid: TimeGrid,
        discrete: bool,
    ) -> Result<f64> {
        let mut coeffs = CoefficientSet::wave(field.clone());
        coeffs.source = Some(if discrete {
            self.f_discrete.clone()
        } else {
            self.f_analytic.clone()
        });
        let zero = vec![0.0; mesh.node_count()];
        let e = simulate_with_noise(mesh, &coeffs, &zero, &zero, grid, vec![vec![0.0; grid.steps]], Recording::Full)?;
        let z = &e.paths[0].levels.as_ref().expect("full recording").z;
        let diff: Vec<Vec<f64>> = z
            .iter()
            .zip(&self.y)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        Ok(space_time_norm(mesh, &diff, grid.dt))
    }
}
