use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PrincipalField, SpatialMesh};

use super::coefficients::{CoefficientSet, SampledCoefficients};
use super::noise::brownian_increments;
use super::operator::{assemble_spatial_operator, SparseMatrix};

/// Uniform time levels `t_k = k dt`, `k = 0..=steps`, with `steps dt = T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon > 0.0 && dt > 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!("need T > 0 and dt > 0, got T={horizon}, dt={dt}")));
        }
        let steps = (horizon / dt).round() as usize;
        if steps == 0 || (steps as f64 * dt - horizon).abs() > 1e-9 * horizon {
            return Err(Error::Config(format!("dt = {dt} does not divide T = {horizon}")));
        }
        Ok(Self {
            horizon,
            dt: horizon / steps as f64,
            steps,
        })
    }

    pub fn with_steps(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("need at least one time step".into()));
        }
        Self::new(horizon, horizon / steps as f64)
    }

    pub fn levels(&self) -> usize {
        self.steps + 1
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

/// Largest stable step: `0.5 dx_min / sqrt(max eigenvalue of b)`.
pub fn cfl_limit(mesh: &SpatialMesh, field: &PrincipalField) -> f64 {
    0.5 * mesh.min_spacing() / field.max_eigenvalue(mesh).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Recording {
    /// `z` and `z_t` at every level, plus traces.
    Full,
    /// Boundary traces at every level and the terminal pair.
    #[default]
    Observations,
    /// Terminal pair only.
    Terminal,
}

/// State history of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Levels {
    pub z: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub index: usize,
    pub increments: Vec<f64>,
    pub levels: Option<Levels>,
    /// Outward normal derivative, `trace[k][slot]` over all boundary slots.
    pub trace: Vec<Vec<f64>>,
    pub z_final: Vec<f64>,
    pub w_final: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub seed: Option<u64>,
    pub grid: TimeGrid,
    pub z0: Vec<f64>,
    pub z1: Vec<f64>,
    pub paths: Vec<PathRecord>,
}

impl PathEnsemble {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// Kick-drift-kick leapfrog for the first-order system in `(z, z_t)`.
///
/// One step from level `k`:
/// `w~ = w + dt/2 (N z + b1 w + f_k) + (b4 z + g_k) dB_k`,
/// `z' = z + dt w~`,
/// `(1 - dt/2 b1) w' = w~ + dt/2 (N z' + f_{k+1})`.
/// The noise enters at the left endpoint of each interval.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    pub mesh: &'a SpatialMesh,
    pub grid: TimeGrid,
    pub coeffs: SampledCoefficients,
    op: SparseMatrix,
    interior: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Scratch {
    a: Vec<f64>,
    wt: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(mesh: &'a SpatialMesh, coeffs: &CoefficientSet, grid: TimeGrid) -> Result<Self> {
        let limit = cfl_limit(mesh, &coeffs.principal);
        if grid.dt > limit * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "dt = {} violates the CFL limit {limit}",
                grid.dt
            )));
        }
        let sampled = SampledCoefficients::new(coeffs, mesh, grid.steps, grid.dt)?;
        let op = assemble_spatial_operator(mesh, &coeffs.principal, &sampled.b2, &sampled.b3);
        let mut interior = vec![false; mesh.node_count()];
        for &n in &mesh.interior {
            interior[n] = true;
        }
        Ok(Self {
            mesh,
            grid,
            coeffs: sampled,
            op,
            interior,
        })
    }

    pub fn operator(&self) -> &SparseMatrix {
        &self.op
    }

    pub fn scratch(&self) -> Scratch {
        let n = self.mesh.node_count();
        Scratch {
            a: vec![0.0; n],
            wt: vec![0.0; n],
        }
    }

    fn check_initial(&self, name: &str, v: &[f64]) -> Result<()> {
        if v.len() != self.mesh.node_count() {
            return Err(Error::Data(format!(
                "{name} has {} values for {} nodes",
                v.len(),
                self.mesh.node_count()
            )));
        }
        let tol = 1e-12 * v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for b in &self.mesh.boundary {
            if v[b.node].abs() > tol {
                return Err(Error::Data(format!(
                    "{name} is {} at boundary node {}",
                    v[b.node], b.node
                )));
            }
        }
        Ok(())
    }

    /// Advances `(z, w)` from level `k` to `k + 1`.
    pub fn step(
        &self,
        k: usize,
        db: f64,
        g2: &[f64],
        z: &mut [f64],
        w: &mut [f64],
        s: &mut Scratch,
    ) {
        let h = 0.5 * self.grid.dt;
        let c = &self.coeffs;
        let src = |level: usize, i: usize| c.source.as_ref().map_or(0.0, |f| f[level][i]);
        let gtab = |i: usize| c.g_tab.as_ref().map_or(0.0, |g| g[k][i]);
        self.op.apply(z, &mut s.a);
        for i in 0..z.len() {
            if !self.interior[i] {
                continue;
            }
            let kick = s.a[i] + c.b1[i] * w[i] + src(k, i);
            let noise = c.b4[i] * z[i] + c.g1[k] * g2[i] + gtab(i);
            s.wt[i] = w[i] + h * kick + noise * db;
            z[i] += self.grid.dt * s.wt[i];
        }
        self.op.apply(z, &mut s.a);
        for i in 0..z.len() {
            if !self.interior[i] {
                continue;
            }
            w[i] = (s.wt[i] + h * (s.a[i] + src(k + 1, i))) / (1.0 - h * c.b1[i]);
        }
    }

    /// Transpose of the linear part of [`Stepper::step`].
    ///
    /// On entry `(zh, wh)` is the adjoint of level `k + 1`; on exit it is the
    /// adjoint of level `k`, and the sensitivity to `g2` is added to `g2h`.
    pub fn adjoint_step(
        &self,
        k: usize,
        db: f64,
        zh: &mut [f64],
        wh: &mut [f64],
        g2h: &mut [f64],
        s: &mut Scratch,
    ) {
        let h = 0.5 * self.grid.dt;
        let c = &self.coeffs;
        for i in 0..zh.len() {
            s.wt[i] = if self.interior[i] {
                wh[i] / (1.0 - h * c.b1[i])
            } else {
                0.0
            };
        }
        self.op.apply_transpose(&s.wt, &mut s.a);
        for i in 0..zh.len() {
            if !self.interior[i] {
                zh[i] = 0.0;
                continue;
            }
            zh[i] += h * s.a[i];
            s.wt[i] += self.grid.dt * zh[i];
        }
        self.op.apply_transpose(&s.wt, &mut s.a);
        for i in 0..zh.len() {
            if !self.interior[i] {
                wh[i] = 0.0;
                continue;
            }
            wh[i] = s.wt[i] + h * c.b1[i] * s.wt[i];
            zh[i] += h * s.a[i] + c.b4[i] * db * s.wt[i];
            g2h[i] += c.g1[k] * db * s.wt[i];
        }
    }

    /// Boundary normal derivatives of `z` at every slot.
    pub fn trace(&self, z: &[f64]) -> Vec<f64> {
        (0..self.mesh.boundary.len())
            .map(|slot| self.mesh.normal_derivative(z, slot))
            .collect()
    }

    /// Runs one path; `g2` overrides the spatial force factor when given.
    ///
    /// Boundary values of `z0`, `z1` must vanish up to rounding.
    pub fn run(
        &self,
        index: usize,
        z0: &[f64],
        z1: &[f64],
        g2: Option<&[f64]>,
        increments: Vec<f64>,
        record: Recording,
    ) -> Result<PathRecord> {
        self.check_initial("z0", z0)?;
        self.check_initial("z1", z1)?;
        if increments.len() != self.grid.steps {
            return Err(Error::Data(format!(
                "{} increments for {} steps",
                increments.len(),
                self.grid.steps
            )));
        }
        let g2 = g2.unwrap_or(&self.coeffs.g2);
        let mut z = z0.to_vec();
        let mut w = z1.to_vec();
        // values at rounding level, such as sin(pi), are cleared
        for b in &self.mesh.boundary {
            z[b.node] = 0.0;
            w[b.node] = 0.0;
        }
        let mut s = self.scratch();
        let mut levels = (record == Recording::Full).then(|| Levels {
            z: vec![z.clone()],
            w: vec![w.clone()],
        });
        let mut trace = Vec::new();
        if record != Recording::Terminal {
            trace.push(self.trace(&z));
        }
        for (k, &db) in increments.iter().enumerate() {
            self.step(k, db, g2, &mut z, &mut w, &mut s);
            if let Some(l) = levels.as_mut() {
                l.z.push(z.clone());
                l.w.push(w.clone());
            }
            if record != Recording::Terminal {
                trace.push(self.trace(&z));
            }
        }
        if z.iter().chain(&w).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("path {index} produced non-finite values")));
        }
        Ok(PathRecord {
            index,
            increments,
            levels,
            trace,
            z_final: z,
            w_final: w,
        })
    }
}

/// Settings of a Monte Carlo forward run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub horizon: f64,
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub record: Recording,
}

/// Simulates `paths` independent trajectories with seeded noise.
pub fn simulate_forward(
    mesh: &SpatialMesh,
    coeffs: &CoefficientSet,
    z0: &[f64],
    z1: &[f64],
    spec: &SimulationSpec,
) -> Result<PathEnsemble> {
    let grid = TimeGrid::new(spec.horizon, spec.dt)?;
    let noise: Vec<Vec<f64>> = (0..spec.paths)
        .into_par_iter()
        .map(|p| brownian_increments(spec.seed, p as u64, grid.steps, grid.dt))
        .collect();
    let mut ens = simulate_with_noise(mesh, coeffs, z0, z1, grid, noise, spec.record)?;
    ens.seed = Some(spec.seed);
    Ok(ens)
}

/// Simulates one trajectory per supplied increment sequence.
pub fn simulate_with_noise(
    mesh: &SpatialMesh,
    coeffs: &CoefficientSet,
    z0: &[f64],
    z1: &[f64],
    grid: TimeGrid,
    increments: Vec<Vec<f64>>,
    record: Recording,
) -> Result<PathEnsemble> {
    let stepper = Stepper::new(mesh, coeffs, grid)?;
    let paths = increments
        .into_par_iter()
        .enumerate()
        .map(|(p, inc)| stepper.run(p, z0, z1, None, inc, record))
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble {
        seed: None,
        grid,
        z0: z0.to_vec(),
        z1: z1.to_vec(),
        paths,
    })
}

/// Deterministic trajectory with `z(T) = 0`, `z_t(T) = w`.
///
/// The equation is integrated in `tau = T - t`, where it reads
/// `y_tautau = div(b grad y) - b1 y_tau + b2 . grad y + b3 y`, from `y = 0`,
/// `y_tau = -w`, and mapped back with `z(t_k) = y(tau_{K-k})`, `z_t = -y_tau`.
pub fn solve_deterministic_reversed(
    mesh: &SpatialMesh,
    coeffs: &CoefficientSet,
    w: &[f64],
    grid: TimeGrid,
) -> Result<Levels> {
    if !coeffs.is_deterministic() {
        return Err(Error::Unsupported(
            "the reversed solver needs b4 = 0 and g = 0".into(),
        ));
    }
    if coeffs.source.is_some() {
        return Err(Error::Unsupported("the reversed solver takes no source".into()));
    }
    let mut reversed = coeffs.clone();
    reversed.b1 = super::coefficients::ScalarField::Nodal {
        values: coeffs.b1.on_mesh(mesh)?.iter().map(|v| -v).collect(),
    };
    let stepper = Stepper::new(mesh, &reversed, grid)?;
    let zero = vec![0.0; mesh.node_count()];
    let minus_w: Vec<f64> = w.iter().map(|v| -v).collect();
    let rec = stepper.run(0, &zero, &minus_w, None, vec![0.0; grid.steps], Recording::Full)?;
    let l = rec.levels.expect("full recording");
    let z = l.z.into_iter().rev().collect();
    let w = l
        .w
        .into_iter()
        .rev()
        .map(|v| v.into_iter().map(|x| -x).collect())
        .collect();
    Ok(Levels { z, w })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, Domain};
    use crate::spde::coefficients::{Force, ScalarField, TimeProfile};
    use std::f64::consts::PI;

    fn wave_1d() -> CoefficientSet {
        CoefficientSet::wave(PrincipalField::identity(1))
    }

    #[test]
    fn zero_data_stays_zero() {
        let mesh = build_mesh(&Domain::unit_interval(), &[17]).unwrap();
        let zero = vec![0.0; 17];
        let spec = SimulationSpec {
            horizon: 1.0,
            dt: 1.0 / 64.0,
            paths: 3,
            seed: 5,
            record: Recording::Full,
        };
        let mut c = wave_1d();
        c.b4 = ScalarField::Constant { value: 1.0 };
        let e = simulate_forward(&mesh, &c, &zero, &zero, &spec).unwrap();
        for p in &e.paths {
            assert!(p.levels.as_ref().unwrap().z.iter().flatten().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn cfl_and_boundary_checks() {
        let mesh = build_mesh(&Domain::unit_interval(), &[17]).unwrap();
        let zero = vec![0.0; 17];
        let spec = SimulationSpec {
            horizon: 1.0,
            dt: 0.05,
            paths: 1,
            seed: 0,
            record: Recording::Terminal,
        };
        assert!(matches!(
            simulate_forward(&mesh, &wave_1d(), &zero, &zero, &spec),
            Err(Error::Config(_))
        ));
        let mut bad = zero.clone();
        bad[0] = 1.0;
        let spec = SimulationSpec { dt: 1.0 / 64.0, ..spec };
        assert!(matches!(
            simulate_forward(&mesh, &wave_1d(), &bad, &zero, &spec),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn eigenmode_is_second_order() {
        let err = |n: usize| {
            let mesh = build_mesh(&Domain::unit_interval(), &[n]).unwrap();
            let z0 = mesh.sample(|p| (PI * p[0]).sin());
            let zero = vec![0.0; n];
            let dt = 0.5 / (n - 1) as f64;
            let grid = TimeGrid::new(1.0, dt).unwrap();
            let e = simulate_with_noise(
                &mesh,
                &wave_1d(),
                &z0,
                &zero,
                grid,
                vec![vec![0.0; grid.steps]],
                Recording::Full,
            )
            .unwrap();
            let l = e.paths[0].levels.as_ref().unwrap();
            let mut s = 0.0;
            for (k, zk) in l.z.iter().enumerate() {
                let t = grid.time(k);
                for (i, v) in zk.iter().enumerate() {
                    let x = mesh.coords(i)[0];
                    s += (v - (PI * t).cos() * (PI * x).sin()).powi(2);
                }
            }
            (s * dt / (n - 1) as f64).sqrt()
        };
        let (a, b, c) = (err(17), err(33), err(65));
        assert!((3.5..4.5).contains(&(a / b)), "{}", a / b);
        assert!((3.5..4.5).contains(&(b / c)), "{}", b / c);
    }

    #[test]
    fn reversed_solution_hits_terminal_data() {
        let mesh = build_mesh(&Domain::unit_interval(), &[65]).unwrap();
        let w = mesh.sample(|p| (PI * p[0]).sin());
        let grid = TimeGrid::new(1.5, 1.0 / 128.0).unwrap();
        let l = solve_deterministic_reversed(&mesh, &wave_1d(), &w, grid).unwrap();
        assert!(l.z[grid.steps].iter().all(|v| *v == 0.0));
        assert!(l.w[grid.steps].iter().zip(&w).all(|(a, b)| (a - b).abs() < 1e-15));
        let t0 = l.z[0][32];
        let exact = -(PI * 1.5).sin() / PI;
        assert!((t0 - exact).abs() < 1e-3);
    }

    #[test]
    fn reversed_solution_runs_forward_consistently() {
        let mesh = build_mesh(&Domain::unit_interval(), &[33]).unwrap();
        let mut c = wave_1d();
        c.b1 = ScalarField::Constant { value: 0.3 };
        c.b3 = ScalarField::Constant { value: -0.5 };
        let w = mesh.sample(|p| p[0] * (1.0 - p[0]) * (3.0 * p[0]).exp());
        let grid = TimeGrid::new(1.0, 1.0 / 64.0).unwrap();
        let l = solve_deterministic_reversed(&mesh, &c, &w, grid).unwrap();
        let fwd = simulate_with_noise(
            &mesh,
            &c,
            &l.z[0],
            &l.w[0],
            grid,
            vec![vec![0.0; grid.steps]],
            Recording::Terminal,
        )
        .unwrap();
        let zt = &fwd.paths[0].z_final;
        let scale = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(zt.iter().all(|v| v.abs() < 1e-2 * scale));
    }

    #[test]
    fn adjoint_step_is_the_transpose() {
        let mesh = build_mesh(&Domain::unit_interval(), &[12]).unwrap();
        let mut c = wave_1d();
        c.b1 = ScalarField::sine(0.4, &[1.0]);
        c.b2 = vec![ScalarField::Constant { value: 0.7 }];
        c.b3 = ScalarField::Constant { value: -1.2 };
        c.b4 = ScalarField::Constant { value: 0.9 };
        c.force = Force::Separable {
            g1: TimeProfile::Constant { value: 1.3 },
            g2: ScalarField::Zero,
        };
        let grid = TimeGrid::new(1.0, 1.0 / 32.0).unwrap();
        let st = Stepper::new(&mesh, &c, grid).unwrap();
        let n = mesh.node_count();
        let pick = |s: f64| -> Vec<f64> {
            (0..n)
                .map(|i| if mesh.is_boundary(i) { 0.0 } else { (s * i as f64).sin() })
                .collect()
        };
        let (z, w, g2) = (pick(0.7), pick(1.1), pick(2.3));
        let (a, b) = (pick(0.4), pick(1.9));
        let db = 0.17;
        let mut s = st.scratch();
        let (mut z1, mut w1) = (z.clone(), w.clone());
        st.step(3, db, &g2, &mut z1, &mut w1, &mut s);
        let (mut zh, mut wh, mut gh) = (a.clone(), b.clone(), vec![0.0; n]);
        st.adjoint_step(3, db, &mut zh, &mut wh, &mut gh, &mut s);
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        let lhs = dot(&z1, &a) + dot(&w1, &b);
        let rhs = dot(&z, &zh) + dot(&w, &wh) + dot(&g2, &gh);
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0), "{lhs} {rhs}");
    }
}
