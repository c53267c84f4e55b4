use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundarySubset, SpatialMesh};
use crate::spde::{l2_norm, CoefficientSet, Force, TimeGrid};

use super::observation::{ObservationOperator, ObservationRecord, PathObservation, Unknowns};

/// `sum_edges w_e (z_b - z_a)^2`, the squared `H^1_0` seminorm on the grid.
pub fn h1_seminorm_sq(mesh: &SpatialMesh, z: &[f64]) -> f64 {
    let mut s = 0.0;
    for_each_edge(mesh, |a, b, w| s += w * (z[b] - z[a]).powi(2));
    s
}

fn apply_stiffness(mesh: &SpatialMesh, z: &[f64], out: &mut [f64]) {
    for_each_edge(mesh, |a, b, w| {
        let d = w * (z[b] - z[a]);
        out[b] += d;
        out[a] -= d;
    });
}

fn for_each_edge(mesh: &SpatialMesh, mut f: impl FnMut(usize, usize, f64)) {
    for axis in 0..mesh.dim {
        let s = mesh.stride(axis);
        let h = mesh.spacing[axis];
        for a in 0..mesh.node_count() {
            let idx = mesh.index(a);
            if idx[axis] + 1 >= mesh.counts[axis] {
                continue;
            }
            let mut w = 1.0 / h;
            for other in 0..mesh.dim {
                if other != axis {
                    let end = idx[other] == 0 || idx[other] == mesh.counts[other] - 1;
                    w *= if end { 0.5 * mesh.spacing[other] } else { mesh.spacing[other] };
                }
            }
            f(a, a + s, w);
        }
    }
}

/// `|z0|_{H^1_0}^2 + |z1|^2 + |g2|^2`.
pub fn unknowns_norm_sq(mesh: &SpatialMesh, u: &Unknowns) -> f64 {
    h1_seminorm_sq(mesh, &u.z0) + l2_norm(mesh, &u.z1).powi(2) + l2_norm(mesh, &u.g2).powi(2)
}

fn apply_regularizer(mesh: &SpatialMesh, u: &Unknowns) -> Unknowns {
    let n = mesh.node_count();
    let w = mesh.trapezoid_weights();
    let mut out = Unknowns::zeros(n);
    apply_stiffness(mesh, &u.z0, &mut out.z0);
    for i in 0..n {
        out.z1[i] = w[i] * u.z1[i];
        out.g2[i] = w[i] * u.g2[i];
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InversionMode {
    /// The increments of the observation generator are reused.
    #[default]
    Frozen,
    /// Fresh increments; only the path-mean observation is fitted, which
    /// determines `(z0, z1)` through the mean dynamics.
    Blind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionSettings {
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default)]
    pub mode: InversionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructionResult {
    #[serde(skip)]
    pub estimate: Unknowns,
    /// `false` in blind mode, where `g2` is not estimated.
    pub g2_estimated: bool,
    pub epsilon: f64,
    pub mode: InversionMode,
    /// `1/2 |F u - obs|^2` in the observation inner product.
    pub misfit: f64,
    pub initial_residual: f64,
    pub normal_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Relative `L^2` errors of `(z0, z1, g2)` against a supplied truth.
    pub relative_errors: Option<[f64; 3]>,
}

/// Relative `L^2` error of each component; a zero true component is measured
/// against the `L^2` norm of the whole true triple.
pub fn relative_errors(mesh: &SpatialMesh, estimate: &Unknowns, truth: &Unknowns) -> [f64; 3] {
    let total = truth
        .components()
        .iter()
        .map(|c| l2_norm(mesh, c).powi(2))
        .sum::<f64>()
        .sqrt();
    let mut out = [0.0; 3];
    for (k, (e, t)) in estimate.components().iter().zip(truth.components()).enumerate() {
        let diff: Vec<f64> = e.iter().zip(t).map(|(a, b)| a - b).collect();
        let tn = l2_norm(mesh, t);
        out[k] = l2_norm(mesh, &diff) / if tn > 0.0 { tn } else { total };
    }
    out
}

fn path_mean(obs: &[PathObservation]) -> PathObservation {
    let scale = 1.0 / obs.len() as f64;
    let mut m = PathObservation {
        trace: obs[0].trace.iter().map(|r| vec![0.0; r.len()]).collect(),
        terminal: vec![0.0; obs[0].terminal.len()],
    };
    for p in obs {
        for (r, pr) in m.trace.iter_mut().zip(&p.trace) {
            for (v, x) in r.iter_mut().zip(pr) {
                *v += scale * x;
            }
        }
        for (v, x) in m.terminal.iter_mut().zip(&p.terminal) {
            *v += scale * x;
        }
    }
    m
}

/// The fitted map: every path separately, or the path mean only.
struct FitMap<'o, 'a> {
    op: &'o ObservationOperator<'a>,
    mean_only: bool,
}

impl FitMap<'_, '_> {
    fn apply(&self, u: &Unknowns) -> Result<Vec<PathObservation>> {
        if self.mean_only {
            let mut u = u.clone();
            u.g2.iter_mut().for_each(|v| *v = 0.0);
            Ok(vec![path_mean(&self.op.apply(&u)?)])
        } else {
            self.op.apply(u)
        }
    }

    fn adjoint(&self, r: &[PathObservation]) -> Unknowns {
        if self.mean_only {
            let mut u = self.op.adjoint(&vec![r[0].clone(); self.op.paths()]);
            u.g2.iter_mut().for_each(|v| *v = 0.0);
            u
        } else {
            self.op.adjoint(r)
        }
    }

    fn inner(&self, a: &[PathObservation], b: &[PathObservation]) -> f64 {
        self.op.inner(a, b)
    }
}

struct NormalOperator<'f, 'o, 'a> {
    map: &'f FitMap<'o, 'a>,
    epsilon: f64,
}

impl NormalOperator<'_, '_, '_> {
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let op = self.map.op;
        let mesh = op.stepper.mesh;
        let u = Unknowns::from_flat(x);
        let fu = self.map.apply(&u)?;
        let mut out = self.map.adjoint(&fu).flatten();
        let r = apply_regularizer(mesh, &u).flatten();
        for (o, v) in out.iter_mut().zip(r) {
            *o += self.epsilon * v;
        }
        let mut u = Unknowns::from_flat(&out);
        op.mask(&mut u.z0);
        op.mask(&mut u.z1);
        op.mask(&mut u.g2);
        Ok(u.flatten())
    }
}

/// Diagonal of the regularizer, one on the boundary.
fn regularizer_diagonal(mesh: &SpatialMesh) -> Vec<f64> {
    let n = mesh.node_count();
    let mut k = vec![0.0; n];
    for_each_edge(mesh, |a, b, w| {
        k[a] += w;
        k[b] += w;
    });
    let w = mesh.trapezoid_weights();
    let mut d = [k, w.clone(), w].concat();
    for block in 0..3 {
        for b in &mesh.boundary {
            d[block * n + b.node] = 1.0;
        }
    }
    d
}

/// Preconditioned conjugate gradients from `x = 0` with the diagonal
/// preconditioner `diag`; stops when `|r| <= tol |b|`.
fn conjugate_gradient(
    apply: impl Fn(&[f64]) -> Result<Vec<f64>>,
    diag: &[f64],
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64, f64, usize, bool)> {
    let mut x = vec![0.0; b.len()];
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok((x, 0.0, 0.0, 0, true));
    }
    let precond = |r: &[f64]| -> Vec<f64> { r.iter().zip(diag).map(|(a, d)| a / d).collect() };
    let mut r = b.to_vec();
    let mut zr = precond(&r);
    let mut p = zr.clone();
    let mut rz = dot(&r, &zr);
    for it in 0..max_iter {
        let ap = apply(&p)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Numerical(format!(
                "normal operator is not positive definite (p.Ap = {pap})"
            )));
        }
        let alpha = rz / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = dot(&r, &r).sqrt();
        if rnorm <= tol * bnorm {
            return Ok((x, bnorm, rnorm, it + 1, true));
        }
        zr = precond(&r);
        let rz_new = dot(&r, &zr);
        let beta = rz_new / rz;
        for i in 0..p.len() {
            p[i] = zr[i] + beta * p[i];
        }
        rz = rz_new;
    }
    log::warn!("conjugate gradients stopped after {max_iter} iterations");
    Ok((x, bnorm, dot(&r, &r).sqrt(), max_iter, false))
}

/// Tikhonov least squares for `(z0, z1, g2)` by conjugate gradients on the
/// normal equations `(F^T O F + eps R) u = F^T O obs`.
///
/// In frozen mode the increments are regenerated from `obs.seed`. In blind mode
/// they are drawn from `blind_seed` and only path means are fitted, which pins
/// down `(z0, z1)` through the mean dynamics; `g2` is then not reported.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct(
    mesh: &SpatialMesh,
    coeffs: &CoefficientSet,
    grid: TimeGrid,
    subset: &BoundarySubset,
    obs: &ObservationRecord,
    settings: &InversionSettings,
    blind_seed: Option<u64>,
    truth: Option<&Unknowns>,
) -> Result<ReconstructionResult> {
    if !(settings.epsilon > 0.0) {
        return Err(Error::Config("epsilon must be positive".into()));
    }
    match &coeffs.force {
        Force::Separable { g1, .. } => {
            if g1.levels(grid.steps, grid.dt).iter().all(|v| *v == 0.0) {
                return Err(Error::Config("g1 must not vanish identically".into()));
            }
        }
        _ => {
            return Err(Error::Unsupported(
                "reconstruction needs a separable force".into(),
            ))
        }
    }
    if obs.members != subset.members {
        return Err(Error::Data("observation record was taken on another boundary portion".into()));
    }
    if (obs.dt - grid.dt).abs() > 1e-12 * grid.dt {
        return Err(Error::Data("observation time step differs from the grid".into()));
    }
    let paths = obs.paths.len();
    let blind = settings.mode == InversionMode::Blind;
    let seed = if blind {
        blind_seed.ok_or_else(|| Error::Config("blind mode needs blind_seed".into()))?
    } else {
        obs.seed
    };
    let op = ObservationOperator::seeded(mesh, coeffs, grid, subset, seed, paths)?;
    let map = FitMap {
        op: &op,
        mean_only: blind,
    };
    let data = if blind {
        vec![path_mean(&obs.paths)]
    } else {
        obs.paths.clone()
    };
    let b = map.adjoint(&data).flatten();
    let normal = NormalOperator {
        map: &map,
        epsilon: settings.epsilon,
    };
    let (x, initial_residual, normal_residual, iterations, converged) =
        conjugate_gradient(|v| normal.apply(v), &regularizer_diagonal(mesh), &b, settings.tol, settings.max_iter)?;
    let estimate = Unknowns::from_flat(&x);
    let fit = map.apply(&estimate)?;
    let resid: Vec<PathObservation> = fit
        .iter()
        .zip(&data)
        .map(|(f, d)| PathObservation {
            trace: f
                .trace
                .iter()
                .zip(&d.trace)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
            terminal: f.terminal.iter().zip(&d.terminal).map(|(x, y)| x - y).collect(),
        })
        .collect();
    let misfit = 0.5 * map.inner(&resid, &resid);
    let g2_estimated = settings.mode == InversionMode::Frozen;
    let relative_errors = truth.map(|t| {
        let mut e = relative_errors(mesh, &estimate, t);
        if !g2_estimated {
            e[2] = f64::NAN;
        }
        e
    });
    Ok(ReconstructionResult {
        estimate,
        g2_estimated,
        epsilon: settings.epsilon,
        mode: settings.mode,
        misfit,
        initial_residual,
        normal_residual,
        iterations,
        converged,
        relative_errors,
    })
}

/// Gaussian perturbation scaled to norm `delta` in the observation inner product.
pub fn observation_noise(op: &ObservationOperator, like: &ObservationRecord, delta: f64, seed: u64) -> ObservationRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = like.zeros_like();
    for p in &mut out.paths {
        for row in &mut p.trace {
            for v in row.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
        for v in &mut p.terminal {
            *v = rng.sample(StandardNormal);
        }
        let m = op.stepper.mesh;
        for b in &m.boundary {
            p.terminal[b.node] = 0.0;
        }
    }
    let norm = op.inner(&out.paths, &out.paths).sqrt();
    if norm > 0.0 {
        out = out.scaled(delta / norm);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessRow {
    pub delta: f64,
    /// `|u|` in the `H^1_0 x L^2 x L^2` norm.
    pub estimate_norm: f64,
    pub z0_norm: f64,
    pub z1_norm: f64,
    pub g2_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub rows: Vec<UniquenessRow>,
    /// Slope of `log estimate_norm` against `log delta` over the positive deltas.
    pub slope: f64,
}

/// Reconstructs from observations of size `delta` and tracks the estimate norms.
#[allow(clippy::too_many_arguments)]
pub fn uniqueness_probe(
    mesh: &SpatialMesh,
    coeffs: &CoefficientSet,
    grid: TimeGrid,
    subset: &BoundarySubset,
    deltas: &[f64],
    paths: usize,
    seed: u64,
    settings: &InversionSettings,
) -> Result<UniquenessReport> {
    let op = ObservationOperator::seeded(mesh, coeffs, grid, subset, seed, paths)?;
    let template = op.record(&Unknowns::zeros(mesh.node_count()), seed)?;
    let pattern = observation_noise(&op, &template, 1.0, seed ^ 0x9e37_79b9);
    let mut rows = Vec::new();
    for &delta in deltas {
        let obs = pattern.scaled(delta);
        let r = reconstruct(mesh, coeffs, grid, subset, &obs, settings, None, None)?;
        rows.push(UniquenessRow {
            delta,
            estimate_norm: unknowns_norm_sq(mesh, &r.estimate).sqrt(),
            z0_norm: h1_seminorm_sq(mesh, &r.estimate.z0).sqrt(),
            z1_norm: l2_norm(mesh, &r.estimate.z1),
            g2_norm: l2_norm(mesh, &r.estimate.g2),
            iterations: r.iterations,
        });
    }
    let pos: Vec<&UniquenessRow> = rows.iter().filter(|r| r.delta > 0.0 && r.estimate_norm > 0.0).collect();
    let slope = if pos.len() > 1 {
        crate::identity_lab::loglog_slope(
            &pos.iter().map(|r| r.delta).collect::<Vec<_>>(),
            &pos.iter().map(|r| r.estimate_norm).collect::<Vec<_>>(),
        )
    } else {
        f64::NAN
    };
    Ok(UniquenessReport { rows, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, Domain, PrincipalField};
    use crate::inverse::forward_observation_map;
    use crate::spde::{ScalarField, TimeProfile};
    use std::f64::consts::PI;

    fn setup(n: usize, horizon: f64) -> (SpatialMesh, CoefficientSet, TimeGrid, BoundarySubset) {
        let mesh = build_mesh(&Domain::unit_interval(), &[n]).unwrap();
        let coeffs = CoefficientSet::wave(PrincipalField::identity(1)).with_force(Force::Separable {
            g1: TimeProfile::Constant { value: 1.0 },
            g2: ScalarField::Zero,
        });
        let grid = TimeGrid::with_steps(horizon, 2 * (n - 1) * horizon as usize).unwrap();
        let sub = BoundarySubset {
            sigma: vec![-1.0, 1.0],
            members: vec![1],
        };
        (mesh, coeffs, grid, sub)
    }

    fn settings(eps: f64) -> InversionSettings {
        InversionSettings {
            epsilon: eps,
            tol: 1e-10,
            max_iter: 2000,
            mode: InversionMode::Frozen,
        }
    }

    #[test]
    fn h1_seminorm_of_sine() {
        let mesh = build_mesh(&Domain::unit_interval(), &[257]).unwrap();
        let z = mesh.sample(|x| (PI * x[0]).sin());
        assert!((h1_seminorm_sq(&mesh, &z) / (PI * PI / 2.0) - 1.0).abs() < 1e-4);
        let sq = build_mesh(&Domain::unit_square(), &[65]).unwrap();
        let z = sq.sample(|x| (PI * x[0]).sin() * (PI * x[1]).sin());
        assert!((h1_seminorm_sq(&sq, &z) / (PI * PI / 2.0) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn zero_observation_gives_zero_estimate() {
        let (mesh, coeffs, grid, sub) = setup(17, 2.0);
        let obs = forward_observation_map(&mesh, &coeffs, &Unknowns::zeros(17), &sub, grid, 1, 2).unwrap();
        let r = reconstruct(&mesh, &coeffs, grid, &sub, &obs, &settings(1e-3), None, None).unwrap();
        assert!(r.estimate.flatten().iter().all(|v| *v == 0.0));
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn tikhonov_monotonicity() {
        let (mesh, coeffs, grid, sub) = setup(17, 2.0);
        let truth = Unknowns {
            z0: mesh.sample(|x| (PI * x[0]).sin()),
            z1: vec![0.0; 17],
            g2: mesh.sample(|x| (2.0 * PI * x[0]).sin()),
        };
        let obs = forward_observation_map(&mesh, &coeffs, &truth, &sub, grid, 5, 2).unwrap();
        let mut last: Option<(f64, f64)> = None;
        for eps in [1e-3, 2e-3, 4e-3] {
            let r = reconstruct(&mesh, &coeffs, grid, &sub, &obs, &settings(eps), None, None).unwrap();
            assert!(r.converged);
            let norm = unknowns_norm_sq(&mesh, &r.estimate);
            if let Some((m, n)) = last {
                assert!(r.misfit >= m * (1.0 - 1e-9));
                assert!(norm <= n * (1.0 + 1e-9));
            }
            last = Some((r.misfit, norm));
        }
    }

    #[test]
    fn normal_operator_is_symmetric_and_coercive() {
        let (mesh, coeffs, grid, sub) = setup(17, 2.0);
        let op = ObservationOperator::seeded(&mesh, &coeffs, grid, &sub, 3, 2).unwrap();
        let eps = 1e-2;
        let map = FitMap { op: &op, mean_only: false };
        let a = NormalOperator { map: &map, epsilon: eps };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut rand = || {
            let mut u = Unknowns::from_flat(&(0..51).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
            op.mask(&mut u.z0);
            op.mask(&mut u.z1);
            op.mask(&mut u.g2);
            u.flatten()
        };
        let (u, v) = (rand(), rand());
        let (au, av) = (a.apply(&u).unwrap(), a.apply(&v).unwrap());
        assert!((dot(&au, &v) - dot(&u, &av)).abs() < 1e-10 * dot(&au, &v).abs());
        let reg = dot(&apply_regularizer(&mesh, &Unknowns::from_flat(&u)).flatten(), &u);
        assert!(dot(&au, &u) >= eps * reg);
    }

    #[test]
    fn probe_scales_linearly() {
        let (mesh, coeffs, grid, sub) = setup(17, 2.0);
        let r = uniqueness_probe(&mesh, &coeffs, grid, &sub, &[0.0, 1e-2, 5e-3], 2, 1, &settings(1e-3)).unwrap();
        assert_eq!(r.rows[0].estimate_norm, 0.0);
        assert!((r.rows[2].estimate_norm / r.rows[1].estimate_norm - 0.5).abs() < 0.005);
    }

    #[test]
    fn blind_mode_recovers_mean_dynamics() {
        let (mesh, coeffs, grid, sub) = setup(17, 3.0);
        let truth = Unknowns {
            z0: mesh.sample(|x| (PI * x[0]).sin()),
            z1: vec![0.0; 17],
            g2: mesh.sample(|x| (2.0 * PI * x[0]).sin()),
        };
        let obs = forward_observation_map(&mesh, &coeffs, &truth, &sub, grid, 7, 256).unwrap();
        let mut s = settings(1e-5);
        s.mode = InversionMode::Blind;
        let r = reconstruct(&mesh, &coeffs, grid, &sub, &obs, &s, Some(99), Some(&truth)).unwrap();
        let e = r.relative_errors.unwrap();
        assert!(!r.g2_estimated);
        // the stochastic part survives in the path mean at the 1/sqrt(P) level
        assert!(e[0] < 0.1 && e[1] < 0.2, "{e:?}");
    }
}
