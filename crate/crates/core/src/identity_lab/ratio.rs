use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::carleman::{CarlemanParams, WeightFunction};
use crate::error::{Error, Result};
use crate::geometry::{BoundarySubset, SpatialMesh};
use crate::spde::{
    gradient, l2_norm, simulate_with_noise, solve_deterministic_reversed, CoefficientSet, Force,
    Levels, PathEnsemble, Recording, TimeGrid,
};

/// `log(sum exp(x))`, `-inf` for an empty or all `-inf` input.
pub(crate) fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn ln_pos(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Random smooth fields vanishing on the boundary: sums of the first `modes`
/// sine modes per axis with `N(0, 1) / k^2` amplitudes.
pub fn random_smooth_fields(mesh: &SpatialMesh, count: usize, modes: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let mut terms = Vec::new();
            let ks: Vec<[usize; 2]> = if mesh.dim == 1 {
                (1..=modes).map(|k| [k, 1]).collect()
            } else {
                (1..=modes).flat_map(|k| (1..=modes).map(move |l| [k, l])).collect()
            };
            for k in ks {
                let c: f64 = rng.sample(StandardNormal);
                terms.push((k, c / (k[0] * k[1]) as f64 / (k[0] * k[1]) as f64));
            }
            let mut f = mesh.sample(|x| {
                let mut v = 0.0;
                for (k, c) in &terms {
                    let mut m = *c;
                    for a in 0..mesh.dim {
                        let s = (x[a] - mesh.lo[a]) / (mesh.hi[a] - mesh.lo[a]);
                        m *= (k[a] as f64 * std::f64::consts::PI * s).sin();
                    }
                    v += m;
                }
                v
            });
            for b in &mesh.boundary {
                f[b.node] = 0.0;
            }
            f
        })
        .collect()
}

/// Logarithms of the weighted terms of one trajectory at one `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedTerms {
    /// `log int theta(0)^2 (lambda |z1|^2 + lambda |grad z0|^2 + lambda^3 |z0|^2)`.
    pub log_lhs_init: f64,
    /// `log lambda^3 int theta(0)^2 |z0|^2`.
    pub log_lhs_z0: f64,
    /// `log lambda int (T - t) theta^2 g^2`.
    pub log_lhs_force: f64,
    /// `log lambda int_{(0,T) x Gamma0} theta^2 |dz/dnu|^2`.
    pub log_rhs: f64,
}

impl WeightedTerms {
    pub fn log_lhs(&self) -> f64 {
        log_sum_exp([self.log_lhs_init, self.log_lhs_force])
    }

    pub fn log_ratio(&self) -> f64 {
        self.log_lhs() - self.log_rhs
    }
}

/// Weighted norms of one trajectory, kept in the log domain because `theta^2`
/// spans hundreds of decades at large `lambda`.
#[allow(clippy::too_many_arguments)]
pub fn weighted_terms(
    mesh: &SpatialMesh,
    params: &CarlemanParams,
    d: &WeightFunction,
    grid: &TimeGrid,
    z0: &[f64],
    z1: &[f64],
    trace: &[Vec<f64>],
    subset: &BoundarySubset,
    force: Option<&[Vec<f64>]>,
) -> WeightedTerms {
    let lam = params.lambda;
    let wts = mesh.trapezoid_weights();
    let dvals: Vec<f64> = (0..mesh.node_count())
        .map(|i| d.jet(mesh.dim, mesh.coords(i)).value)
        .collect();
    let two_ell = |t: f64, node: usize| 2.0 * params.ell(t, dvals[node]);
    let g0 = gradient(mesh, z0);
    let mut init = Vec::new();
    let mut zterm = Vec::new();
    for i in 0..mesh.node_count() {
        let gsq = g0[i][0] * g0[i][0] + g0[i][1] * g0[i][1];
        let e = two_ell(0.0, i);
        init.push(e + ln_pos(wts[i] * (lam * z1[i] * z1[i] + lam * gsq + lam.powi(3) * z0[i] * z0[i])));
        zterm.push(e + ln_pos(wts[i] * lam.powi(3) * z0[i] * z0[i]));
    }
    let tw = |k: usize| if k == 0 || k == grid.steps { 0.5 * grid.dt } else { grid.dt };
    let mut rhs = Vec::new();
    for (k, row) in trace.iter().enumerate() {
        let t = grid.time(k);
        for &s in &subset.members {
            let b = &mesh.boundary[s];
            rhs.push(two_ell(t, b.node) + ln_pos(lam * tw(k) * b.weight * row[s] * row[s]));
        }
    }
    let mut fterm = Vec::new();
    if let Some(g) = force {
        for (k, row) in g.iter().enumerate() {
            let t = grid.time(k);
            for i in 0..mesh.node_count() {
                fterm.push(two_ell(t, i) + ln_pos(lam * tw(k) * (grid.horizon - t) * wts[i] * row[i] * row[i]));
            }
        }
    }
    WeightedTerms {
        log_lhs_init: log_sum_exp(init),
        log_lhs_z0: log_sum_exp(zterm),
        log_lhs_force: log_sum_exp(fterm),
        log_rhs: log_sum_exp(rhs),
    }
}

/// Normal derivative at every boundary slot for every level of a trajectory.
pub fn trace_levels(mesh: &SpatialMesh, z: &[Vec<f64>]) -> Vec<Vec<f64>> {
    z.iter()
        .map(|zk| (0..mesh.boundary.len()).map(|s| mesh.normal_derivative(zk, s)).collect())
        .collect()
}

/// Force values `g(t_k, x)` on the time levels, `None` without a force.
pub fn force_levels(mesh: &SpatialMesh, coeffs: &CoefficientSet, grid: &TimeGrid) -> Result<Option<Vec<Vec<f64>>>> {
    Ok(match &coeffs.force {
        Force::None => None,
        Force::Separable { g1, g2 } => {
            let g2 = g2.on_mesh(mesh)?;
            Some(
                g1.levels(grid.steps, grid.dt)
                    .iter()
                    .map(|a| g2.iter().map(|b| a * b).collect())
                    .collect(),
            )
        }
        Force::Tabulated { values } => Some(values.clone()),
    })
}

/// One row per `lambda`. Aggregates over samples are means, except `ratio`, which is
/// the largest per-sample ratio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRow {
    pub lambda: f64,
    pub lhs_init: f64,
    pub lhs_force: f64,
    pub rhs_boundary: f64,
    pub ratio: f64,
    /// Standard error of the per-sample ratios.
    pub stderr: f64,
    pub samples: usize,
    #[serde(skip)]
    pub log_max_ratio: f64,
    #[serde(skip)]
    pub log_mean_z0_term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioStudy {
    pub rows: Vec<RatioRow>,
    /// `terms[l][s]` for lambda `l` and sample `s`.
    #[serde(skip)]
    pub terms: Vec<Vec<WeightedTerms>>,
    /// Samples with both sides zero.
    pub trivial: Vec<usize>,
    /// Samples with a zero right side under a positive left side.
    pub violations: Vec<usize>,
    /// Least-squares slope of `log` of the mean `|z0|^2` term against `log lambda`.
    pub z0_slope: f64,
    /// Largest over smallest max ratio across the lambda grid.
    pub max_ratio_spread: f64,
    /// `log` of `max_ratio_spread`, finite when the spread itself overflows.
    pub log_max_ratio_spread: f64,
}

impl RatioStudy {
    pub fn all_finite(&self) -> bool {
        self.violations.is_empty()
            && self.terms.iter().all(|per_lambda| {
                per_lambda
                    .iter()
                    .enumerate()
                    .all(|(i, t)| self.trivial.contains(&i) || t.log_ratio().is_finite())
            })
    }
}

fn summarize(lambda: f64, terms: &[WeightedTerms], admitted: &[usize]) -> RatioRow {
    let n = admitted.len();
    let ln_n = (n.max(1) as f64).ln();
    let mean = |f: &dyn Fn(&WeightedTerms) -> f64| log_sum_exp(admitted.iter().map(|&i| f(&terms[i]))) - ln_n;
    let logs: Vec<f64> = admitted.iter().map(|&i| terms[i].log_ratio()).collect();
    let log_max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let stderr = if n > 1 && log_max.is_finite() {
        let scaled: Vec<f64> = logs.iter().map(|l| (l - log_max).exp()).collect();
        let m = scaled.iter().sum::<f64>() / n as f64;
        let var = scaled.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
        log_max.exp() * (var / n as f64).sqrt()
    } else {
        0.0
    };
    RatioRow {
        lambda,
        lhs_init: mean(&|t| t.log_lhs_init).exp(),
        lhs_force: mean(&|t| t.log_lhs_force).exp(),
        rhs_boundary: mean(&|t| t.log_rhs).exp(),
        ratio: log_max.exp(),
        stderr,
        samples: n,
        log_max_ratio: log_max,
        log_mean_z0_term: mean(&|t| t.log_lhs_z0),
    }
}

/// Carleman ratio study on deterministic trajectories vanishing at `t = T`.
pub fn carleman_ratio(
    mesh: &SpatialMesh,
    params: &CarlemanParams,
    d: &WeightFunction,
    subset: &BoundarySubset,
    grid: &TimeGrid,
    solutions: &[Levels],
    lambdas: &[f64],
) -> Result<RatioStudy> {
    if lambdas.is_empty() {
        return Err(Error::EmptyStudy("empty lambda grid".into()));
    }
    for (i, s) in solutions.iter().enumerate() {
        if s.z.len() != grid.levels() {
            return Err(Error::Data(format!("solution {i} does not match the time grid")));
        }
        let last = s.z.last().map_or(0.0, |z| l2_norm(mesh, z));
        let scale = s.z.iter().map(|z| l2_norm(mesh, z)).fold(0.0, f64::max);
        if last > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Data(format!("solution {i} does not vanish at t = T")));
        }
    }
    let traces: Vec<Vec<Vec<f64>>> = solutions.par_iter().map(|s| trace_levels(mesh, &s.z)).collect();
    let terms: Vec<Vec<WeightedTerms>> = lambdas
        .iter()
        .map(|&lam| {
            let p = params.with_lambda(lam);
            solutions
                .par_iter()
                .zip(&traces)
                .map(|(s, tr)| weighted_terms(mesh, &p, d, grid, &s.z[0], &s.w[0], tr, subset, None))
                .collect()
        })
        .collect();
    let mut trivial = Vec::new();
    let mut violations = Vec::new();
    for (i, t) in terms[0].iter().enumerate() {
        match (t.log_lhs() == f64::NEG_INFINITY, t.log_rhs == f64::NEG_INFINITY) {
            (true, true) => trivial.push(i),
            (false, true) => violations.push(i),
            _ => {}
        }
    }
    let admitted: Vec<usize> = (0..solutions.len())
        .filter(|i| !trivial.contains(i) && !violations.contains(i))
        .collect();
    let rows: Vec<RatioRow> = lambdas
        .iter()
        .zip(&terms)
        .map(|(&lam, t)| summarize(lam, t, &admitted))
        .collect();
    let z0_slope = if rows.len() > 1 && !admitted.is_empty() {
        let lx: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
        let ly: Vec<f64> = rows.iter().map(|r| r.log_mean_z0_term).collect();
        log_slope(&lx, &ly)
    } else {
        f64::NAN
    };
    let logs: Vec<f64> = rows.iter().map(|r| r.log_max_ratio).collect();
    let hi = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = logs.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(RatioStudy {
        rows,
        terms,
        trivial,
        violations,
        z0_slope,
        max_ratio_spread: (hi - lo).exp(),
        log_max_ratio_spread: hi - lo,
    })
}

/// Slope of already-logarithmic `ly` against `log x`.
fn log_slope(x: &[f64], ly: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Forward simulations, without noise, of reversed solutions: the ensemble carries
/// the same trajectories in the form produced by the simulator.
pub fn reversed_ensemble(
    mesh: &SpatialMesh,
    coeffs: &CoefficientSet,
    terminal_velocities: &[Vec<f64>],
    grid: TimeGrid,
) -> Result<Vec<PathEnsemble>> {
    terminal_velocities
        .par_iter()
        .map(|w| {
            let l = solve_deterministic_reversed(mesh, coeffs, w, grid)?;
            simulate_with_noise(
                mesh,
                coeffs,
                &l.z[0],
                &l.w[0],
                grid,
                vec![vec![0.0; grid.steps]],
                Recording::Observations,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityRow {
    pub ensemble: usize,
    pub path: usize,
    /// `|theta(0) (z0, z1)|_{H^1_0 x L^2} + |theta sqrt(T - t) g|`.
    pub numerator: f64,
    /// `|theta dz/dnu|_{L^2(0,T; L^2(Gamma0))}`.
    pub denominator: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    /// Paths dropped because `z(T)` is not small enough.
    pub rejected: usize,
    /// Paths with zero data and zero force.
    pub trivial: usize,
    pub max_s: f64,
    pub min_s: f64,
}

/// Weighted partial stability ratios for paths with `z(T)` below
/// `tolerance * |(z0, z1)|`.
///
/// `weight = None` uses `theta = 1`.
pub fn stability_ratio(
    mesh: &SpatialMesh,
    coeffs: &CoefficientSet,
    ensembles: &[PathEnsemble],
    subset: &BoundarySubset,
    weight: Option<(&CarlemanParams, &WeightFunction)>,
    tolerance: f64,
) -> Result<StabilityReport> {
    let mut rows = Vec::new();
    let mut rejected = 0;
    let mut trivial = 0;
    for (e, ens) in ensembles.iter().enumerate() {
        let grid = ens.grid;
        let params = match weight {
            Some((p, _)) => *p,
            None => CarlemanParams {
                lambda: 0.0,
                c0: 0.0,
                c1: 0.0,
                mu0: 0.0,
                horizon: grid.horizon,
            },
        };
        let d = weight.map_or(WeightFunction::Constant { value: 0.0 }, |(_, d)| d.clone());
        let force = force_levels(mesh, coeffs, &grid)?;
        for p in &ens.paths {
            let data = crate::spde::h10_l2_norm(mesh, &ens.z0, &ens.z1);
            if l2_norm(mesh, &p.z_final) > tolerance * data {
                rejected += 1;
                continue;
            }
            let t = weighted_terms_unscaled(mesh, &params, &d, &grid, &ens.z0, &ens.z1, &p.trace, subset, force.as_deref());
            if t.0 == 0.0 && t.1 == 0.0 {
                trivial += 1;
                continue;
            }
            let numerator = t.0.sqrt() + t.1.sqrt();
            let denominator = t.2.sqrt();
            rows.push(StabilityRow {
                ensemble: e,
                path: p.index,
                numerator,
                denominator,
                s: numerator / denominator,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyStudy("no admissible trajectories".into()));
    }
    let max_s = rows.iter().map(|r| r.s).fold(f64::NEG_INFINITY, f64::max);
    let min_s = rows.iter().map(|r| r.s).fold(f64::INFINITY, f64::min);
    Ok(StabilityReport {
        rows,
        rejected,
        trivial,
        max_s,
        min_s,
    })
}

/// Squared weighted norms `(data, force, trace)` without powers of lambda, using
/// the quadrature of the spde norm routines.
#[allow(clippy::too_many_arguments)]
fn weighted_terms_unscaled(
    mesh: &SpatialMesh,
    params: &CarlemanParams,
    d: &WeightFunction,
    grid: &TimeGrid,
    z0: &[f64],
    z1: &[f64],
    trace: &[Vec<f64>],
    subset: &BoundarySubset,
    force: Option<&[Vec<f64>]>,
) -> (f64, f64, f64) {
    let wts = mesh.trapezoid_weights();
    let dvals: Vec<f64> = (0..mesh.node_count())
        .map(|i| d.jet(mesh.dim, mesh.coords(i)).value)
        .collect();
    let th2 = |t: f64, node: usize| (2.0 * params.ell(t, dvals[node])).exp();
    let g0 = gradient(mesh, z0);
    let data: f64 = (0..mesh.node_count())
        .map(|i| th2(0.0, i) * wts[i] * (g0[i][0] * g0[i][0] + g0[i][1] * g0[i][1]) + th2(0.0, i) * wts[i] * z1[i] * z1[i])
        .sum();
    let per_level = |f: &dyn Fn(usize) -> f64| -> f64 {
        let v: Vec<f64> = (0..grid.levels()).map(f).collect();
        crate::spde::time_trapezoid(&v, grid.dt)
    };
    let force_sq = match force {
        None => 0.0,
        Some(g) => per_level(&|k| {
            let t = grid.time(k);
            (0..mesh.node_count())
                .map(|i| th2(t, i) * (grid.horizon - t) * wts[i] * g[k][i] * g[k][i])
                .sum()
        }),
    };
    let trace_sq = per_level(&|k| {
        let t = grid.time(k);
        subset
            .members
            .iter()
            .map(|&s| {
                let b = &mesh.boundary[s];
                th2(t, b.node) * b.weight * trace[k][s] * trace[k][s]
            })
            .sum()
    });
    (data, force_sq, trace_sq)
}
