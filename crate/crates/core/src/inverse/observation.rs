use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundarySubset, SpatialMesh};
use crate::spde::{brownian_increments, CoefficientSet, Force, Recording, Stepper, TimeGrid};

/// The unknowns `(z0, z1, g2)`, one value per mesh node, zero on the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unknowns {
    pub z0: Vec<f64>,
    pub z1: Vec<f64>,
    pub g2: Vec<f64>,
}

impl Unknowns {
    pub fn zeros(n: usize) -> Self {
        Self {
            z0: vec![0.0; n],
            z1: vec![0.0; n],
            g2: vec![0.0; n],
        }
    }

    pub fn node_count(&self) -> usize {
        self.z0.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        [&self.z0[..], &self.z1, &self.g2].concat()
    }

    pub fn from_flat(v: &[f64]) -> Self {
        let n = v.len() / 3;
        Self {
            z0: v[..n].to_vec(),
            z1: v[n..2 * n].to_vec(),
            g2: v[2 * n..].to_vec(),
        }
    }

    pub fn components(&self) -> [&[f64]; 3] {
        [&self.z0, &self.z1, &self.g2]
    }
}

/// Observations along one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathObservation {
    /// `trace[k][m]`: normal derivative at level `k` and member `m` of the observed
    /// boundary portion.
    pub trace: Vec<Vec<f64>>,
    /// `z(T)` at every node.
    pub terminal: Vec<f64>,
}

impl PathObservation {
    fn zeros_like(&self) -> Self {
        Self {
            trace: self.trace.iter().map(|r| vec![0.0; r.len()]).collect(),
            terminal: vec![0.0; self.terminal.len()],
        }
    }

    fn axpy(&mut self, a: f64, x: &PathObservation) {
        for (r, xr) in self.trace.iter_mut().zip(&x.trace) {
            for (v, xv) in r.iter_mut().zip(xr) {
                *v += a * xv;
            }
        }
        for (v, xv) in self.terminal.iter_mut().zip(&x.terminal) {
            *v += a * xv;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub seed: u64,
    pub dt: f64,
    pub mesh_id: String,
    /// Boundary slots where the trace is recorded, ascending.
    pub members: Vec<usize>,
    pub paths: Vec<PathObservation>,
}

impl ObservationRecord {
    pub fn zeros_like(&self) -> Self {
        Self {
            paths: self.paths.iter().map(|p| p.zeros_like()).collect(),
            ..self.clone()
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.zeros_like();
        out.axpy(a, self);
        out
    }

    pub fn axpy(&mut self, a: f64, x: &ObservationRecord) {
        for (p, xp) in self.paths.iter_mut().zip(&x.paths) {
            p.axpy(a, xp);
        }
    }

    /// Traces as `[path][level][member]` and terminal states as `[path][1][node]`,
    /// the layout of the binary trajectory files.
    pub fn to_trajectories(&self) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>) {
        (
            self.paths.iter().map(|p| p.trace.clone()).collect(),
            self.paths.iter().map(|p| vec![p.terminal.clone()]).collect(),
        )
    }

    pub fn from_trajectories(
        seed: u64,
        dt: f64,
        mesh_id: String,
        members: Vec<usize>,
        traces: Vec<Vec<Vec<f64>>>,
        terminal: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if traces.len() != terminal.len() || terminal.iter().any(|t| t.len() != 1) {
            return Err(Error::Data("trace and terminal files disagree".into()));
        }
        Ok(Self {
            seed,
            dt,
            mesh_id,
            members,
            paths: traces
                .into_iter()
                .zip(terminal)
                .map(|(trace, mut t)| PathObservation {
                    trace,
                    terminal: t.remove(0),
                })
                .collect(),
        })
    }
}

pub fn mesh_id(mesh: &SpatialMesh) -> String {
    let c = &mesh.counts[..mesh.dim];
    let lo = &mesh.lo[..mesh.dim];
    let hi = &mesh.hi[..mesh.dim];
    format!("{:?}-{:?}-{:?}", c, lo, hi)
}

/// The linear map `(z0, z1, g2) -> (trace on the observed portion, z(T))` for frozen
/// increments, and its transpose.
///
/// Observation space carries the quadrature inner product
/// `1/P sum_p [int_0^T int_Gamma0 a b + int_G a(T) b(T)]`.
pub struct ObservationOperator<'a> {
    pub stepper: Stepper<'a>,
    pub members: Vec<usize>,
    pub increments: Vec<Vec<f64>>,
    time_weights: Vec<f64>,
    node_weights: Vec<f64>,
    interior: Vec<bool>,
}

impl<'a> ObservationOperator<'a> {
    pub fn new(
        mesh: &'a SpatialMesh,
        coeffs: &CoefficientSet,
        grid: TimeGrid,
        subset: &BoundarySubset,
        increments: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if !matches!(coeffs.force, Force::Separable { .. }) {
            return Err(Error::Unsupported(
                "the observation map needs a separable force g1(t) g2(x)".into(),
            ));
        }
        if coeffs.source.is_some() {
            return Err(Error::Unsupported("the observation map takes no source".into()));
        }
        if increments.is_empty() {
            return Err(Error::Config("at least one path is needed".into()));
        }
        let stepper = Stepper::new(mesh, coeffs, grid)?;
        let time_weights = (0..grid.levels())
            .map(|k| if k == 0 || k == grid.steps { 0.5 * grid.dt } else { grid.dt })
            .collect();
        let mut interior = vec![false; mesh.node_count()];
        for &n in &mesh.interior {
            interior[n] = true;
        }
        Ok(Self {
            stepper,
            members: subset.members.clone(),
            increments,
            time_weights,
            node_weights: mesh.trapezoid_weights(),
            interior,
        })
    }

    /// Operator with the increments of paths `0..paths` under `seed`.
    pub fn seeded(
        mesh: &'a SpatialMesh,
        coeffs: &CoefficientSet,
        grid: TimeGrid,
        subset: &BoundarySubset,
        seed: u64,
        paths: usize,
    ) -> Result<Self> {
        let inc = (0..paths)
            .into_par_iter()
            .map(|p| brownian_increments(seed, p as u64, grid.steps, grid.dt))
            .collect();
        Self::new(mesh, coeffs, grid, subset, inc)
    }

    pub fn paths(&self) -> usize {
        self.increments.len()
    }

    pub fn mask(&self, v: &mut [f64]) {
        for (x, &inside) in v.iter_mut().zip(&self.interior) {
            if !inside {
                *x = 0.0;
            }
        }
    }

    pub fn apply(&self, u: &Unknowns) -> Result<Vec<PathObservation>> {
        let mut u = u.clone();
        self.mask(&mut u.z0);
        self.mask(&mut u.z1);
        self.mask(&mut u.g2);
        self.increments
            .par_iter()
            .enumerate()
            .map(|(p, inc)| {
                let rec = self.stepper.run(
                    p,
                    &u.z0,
                    &u.z1,
                    Some(&u.g2),
                    inc.clone(),
                    Recording::Observations,
                )?;
                Ok(PathObservation {
                    trace: rec
                        .trace
                        .iter()
                        .map(|row| self.members.iter().map(|&s| row[s]).collect())
                        .collect(),
                    terminal: rec.z_final,
                })
            })
            .collect()
    }

    pub fn record(&self, u: &Unknowns, seed: u64) -> Result<ObservationRecord> {
        Ok(ObservationRecord {
            seed,
            dt: self.stepper.grid.dt,
            mesh_id: mesh_id(self.stepper.mesh),
            members: self.members.clone(),
            paths: self.apply(u)?,
        })
    }

    /// Weighted inner product of two observation sets.
    pub fn inner(&self, a: &[PathObservation], b: &[PathObservation]) -> f64 {
        let mesh = self.stepper.mesh;
        let mut total = 0.0;
        for (pa, pb) in a.iter().zip(b) {
            let mut s = 0.0;
            for (k, (ra, rb)) in pa.trace.iter().zip(&pb.trace).enumerate() {
                let mut row = 0.0;
                for (m, &slot) in self.members.iter().enumerate() {
                    row += mesh.boundary[slot].weight * ra[m] * rb[m];
                }
                s += self.time_weights[k] * row;
            }
            for ((x, y), w) in pa.terminal.iter().zip(&pb.terminal).zip(&self.node_weights) {
                s += w * x * y;
            }
            total += s;
        }
        total / a.len() as f64
    }

    /// `F^T O r`: the gradient of `inner(F u, r)` with respect to the nodal
    /// values of `u`, by the transposed recursion on the stored increments.
    pub fn adjoint(&self, r: &[PathObservation]) -> Unknowns {
        let mesh = self.stepper.mesh;
        let n = mesh.node_count();
        let scale = 1.0 / r.len() as f64;
        let parts: Vec<Unknowns> = r
            .par_iter()
            .zip(&self.increments)
            .map(|(obs, inc)| {
                let mut s = self.stepper.scratch();
                let mut zh: Vec<f64> = obs
                    .terminal
                    .iter()
                    .zip(&self.node_weights)
                    .map(|(v, w)| scale * w * v)
                    .collect();
                let mut wh = vec![0.0; n];
                let mut g2h = vec![0.0; n];
                let steps = self.stepper.grid.steps;
                self.add_trace(&mut zh, &obs.trace[steps], steps, scale);
                for k in (0..steps).rev() {
                    self.stepper.adjoint_step(k, inc[k], &mut zh, &mut wh, &mut g2h, &mut s);
                    self.add_trace(&mut zh, &obs.trace[k], k, scale);
                }
                let mut u = Unknowns {
                    z0: zh,
                    z1: wh,
                    g2: g2h,
                };
                self.mask(&mut u.z0);
                self.mask(&mut u.z1);
                self.mask(&mut u.g2);
                u
            })
            .collect();
        let mut total = Unknowns::zeros(n);
        for p in &parts {
            for (t, v) in [&mut total.z0, &mut total.z1, &mut total.g2]
                .into_iter()
                .zip(p.components())
            {
                for (a, b) in t.iter_mut().zip(v) {
                    *a += b;
                }
            }
        }
        total
    }

    fn add_trace(&self, zh: &mut [f64], row: &[f64], k: usize, scale: f64) {
        let mesh = self.stepper.mesh;
        for (m, &slot) in self.members.iter().enumerate() {
            let c = scale * self.time_weights[k] * mesh.boundary[slot].weight * row[m];
            for (node, a) in mesh.normal_derivative_stencil(slot) {
                zh[node] += a * c;
            }
        }
    }
}

/// Observation record of `(z0, z1, g2)` for `paths` seeded paths.
#[allow(clippy::too_many_arguments)]
pub fn forward_observation_map(
    mesh: &SpatialMesh,
    coeffs: &CoefficientSet,
    unknowns: &Unknowns,
    subset: &BoundarySubset,
    grid: TimeGrid,
    seed: u64,
    paths: usize,
) -> Result<ObservationRecord> {
    ObservationOperator::seeded(mesh, coeffs, grid, subset, seed, paths)?.record(unknowns, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, Domain, PrincipalField};
    use crate::spde::{ScalarField, TimeProfile};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn setup(n: usize) -> (SpatialMesh, CoefficientSet, TimeGrid, BoundarySubset) {
        let mesh = build_mesh(&Domain::unit_interval(), &[n]).unwrap();
        let coeffs = CoefficientSet::wave(PrincipalField::identity(1)).with_force(Force::Separable {
            g1: TimeProfile::Constant { value: 1.0 },
            g2: ScalarField::Zero,
        });
        let grid = TimeGrid::with_steps(2.0, 4 * (n - 1)).unwrap();
        let sub = BoundarySubset {
            sigma: vec![-1.0, 1.0],
            members: vec![1],
        };
        (mesh, coeffs, grid, sub)
    }

    fn random(mesh: &SpatialMesh, rng: &mut ChaCha8Rng) -> Unknowns {
        let mut f = || -> Vec<f64> {
            (0..mesh.node_count())
                .map(|i| if mesh.is_boundary(i) { 0.0 } else { rng.gen_range(-1.0..1.0) })
                .collect()
        };
        Unknowns {
            z0: f(),
            z1: f(),
            g2: f(),
        }
    }

    #[test]
    fn zero_unknowns_give_zero_record() {
        let (mesh, coeffs, grid, sub) = setup(17);
        let r = forward_observation_map(&mesh, &coeffs, &Unknowns::zeros(17), &sub, grid, 1, 2).unwrap();
        assert!(r.paths.iter().all(|p| p.terminal.iter().all(|v| *v == 0.0)
            && p.trace.iter().flatten().all(|v| *v == 0.0)));
        assert_eq!(r.paths[0].trace.len(), grid.levels());
        assert_eq!(r.paths[0].trace[0].len(), 1);
    }

    #[test]
    fn map_is_additive() {
        let (mesh, coeffs, grid, sub) = setup(17);
        let op = ObservationOperator::seeded(&mesh, &coeffs, grid, &sub, 4, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (u, v) = (random(&mesh, &mut rng), random(&mesh, &mut rng));
        let sum = Unknowns::from_flat(
            &u.flatten().iter().zip(v.flatten()).map(|(a, b)| a + b).collect::<Vec<_>>(),
        );
        let (fu, fv, fs) = (op.apply(&u).unwrap(), op.apply(&v).unwrap(), op.apply(&sum).unwrap());
        for p in 0..3 {
            for k in 0..grid.levels() {
                let e = fs[p].trace[k][0] - fu[p].trace[k][0] - fv[p].trace[k][0];
                assert!(e.abs() < 1e-11);
            }
        }
    }

    #[test]
    fn adjoint_inner_product_test() {
        let (mesh, mut coeffs, grid, sub) = setup(33);
        coeffs.b1 = ScalarField::Constant { value: -0.3 };
        coeffs.b4 = ScalarField::sine(0.5, &[1.0]);
        coeffs.b3 = ScalarField::Constant { value: 0.7 };
        let op = ObservationOperator::seeded(&mesh, &coeffs, grid, &sub, 9, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let u = random(&mesh, &mut rng);
            let w: Vec<PathObservation> = op
                .apply(&random(&mesh, &mut rng))
                .unwrap()
                .into_iter()
                .map(|p| PathObservation {
                    trace: p.trace.iter().map(|r| r.iter().map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
                    terminal: p.terminal,
                })
                .collect();
            let lhs = op.inner(&op.apply(&u).unwrap(), &w);
            let at = op.adjoint(&w).flatten();
            let rhs: f64 = u.flatten().iter().zip(&at).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()), "{lhs} {rhs}");
        }
    }

    #[test]
    fn trajectory_layout_round_trips() {
        let (mesh, coeffs, grid, sub) = setup(9);
        let mut u = Unknowns::zeros(9);
        u.z0 = mesh.sample(|x| (std::f64::consts::PI * x[0]).sin());
        let r = forward_observation_map(&mesh, &coeffs, &u, &sub, grid, 3, 2).unwrap();
        let (tr, te) = r.to_trajectories();
        let mut bt = Vec::new();
        let mut be = Vec::new();
        crate::spde::dump::write_trajectories(&mut bt, &tr).unwrap();
        crate::spde::dump::write_trajectories(&mut be, &te).unwrap();
        let back = ObservationRecord::from_trajectories(
            r.seed,
            r.dt,
            r.mesh_id.clone(),
            r.members.clone(),
            crate::spde::dump::read_trajectories(&bt[..]).unwrap(),
            crate::spde::dump::read_trajectories(&be[..]).unwrap(),
        )
        .unwrap();
        assert_eq!(back, r);
    }
}
