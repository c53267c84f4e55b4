use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{BoundarySubset, SpatialMesh};
use crate::tensor::bilinear;

use super::coefficients::{CoefficientSet, Force};
use super::solver::{PathEnsemble, TimeGrid};

/// Trapezoid rule over uniformly spaced samples.
pub fn time_trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dt * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1])),
    }
}

pub fn l2_norm_sq(mesh: &SpatialMesh, f: &[f64]) -> f64 {
    mesh.trapezoid_weights()
        .iter()
        .zip(f)
        .map(|(w, v)| w * v * v)
        .sum()
}

pub fn l2_norm(mesh: &SpatialMesh, f: &[f64]) -> f64 {
    l2_norm_sq(mesh, f).sqrt()
}

/// Second-order gradient: centered inside, three-point one-sided at the ends.
pub fn gradient(mesh: &SpatialMesh, f: &[f64]) -> Vec<[f64; 2]> {
    let mut g = vec![[0.0; 2]; f.len()];
    for axis in 0..mesh.dim {
        let s = mesh.stride(axis);
        let h = mesh.spacing[axis];
        let m = mesh.counts[axis];
        for (node, gn) in g.iter_mut().enumerate() {
            let i = mesh.index(node)[axis];
            gn[axis] = if i == 0 {
                (-3.0 * f[node] + 4.0 * f[node + s] - f[node + 2 * s]) / (2.0 * h)
            } else if i == m - 1 {
                (3.0 * f[node] - 4.0 * f[node - s] + f[node - 2 * s]) / (2.0 * h)
            } else {
                (f[node + s] - f[node - s]) / (2.0 * h)
            };
        }
    }
    g
}

pub fn gradient_norm_sq(mesh: &SpatialMesh, f: &[f64]) -> f64 {
    let g = gradient(mesh, f);
    mesh.trapezoid_weights()
        .iter()
        .zip(&g)
        .map(|(w, v)| w * (v[0] * v[0] + v[1] * v[1]))
        .sum()
}

/// `(|grad z0|^2 + |z1|^2)^(1/2)`.
pub fn h10_l2_norm(mesh: &SpatialMesh, z0: &[f64], z1: &[f64]) -> f64 {
    (gradient_norm_sq(mesh, z0) + l2_norm_sq(mesh, z1)).sqrt()
}

/// `1/2 int (z_t^2 + b grad z . grad z)`.
pub fn energy(mesh: &SpatialMesh, coeffs: &CoefficientSet, z: &[f64], w: &[f64]) -> f64 {
    let g = gradient(mesh, z);
    let wts = mesh.trapezoid_weights();
    (0..z.len())
        .map(|i| {
            let b = coeffs.principal.value_at_node(mesh, i);
            0.5 * wts[i] * (w[i] * w[i] + bilinear(mesh.dim, &b, &g[i], &g[i]))
        })
        .sum()
}

/// Squared `L^2(0, T; L^2(subset))` norm of one path's trace.
pub fn trace_norm_sq(
    mesh: &SpatialMesh,
    trace: &[Vec<f64>],
    subset: &BoundarySubset,
    dt: f64,
) -> f64 {
    let per_level: Vec<f64> = trace
        .iter()
        .map(|row| {
            subset
                .members
                .iter()
                .map(|&s| mesh.boundary[s].weight * row[s] * row[s])
                .sum()
        })
        .collect();
    time_trapezoid(&per_level, dt)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceReport {
    /// `series[p][k][m]` for member `m` of the subset.
    #[serde(skip)]
    pub series: Vec<Vec<Vec<f64>>>,
    pub path_norms: Vec<f64>,
    /// Root of the Monte Carlo mean of the squared path norms.
    pub norm: f64,
    pub empty_subset: bool,
}

/// Normal derivative restricted to `subset` and its mean-square norm.
pub fn boundary_normal_trace(
    mesh: &SpatialMesh,
    ensemble: &PathEnsemble,
    subset: &BoundarySubset,
) -> Result<TraceReport> {
    let mut series = Vec::with_capacity(ensemble.len());
    let mut sq = Vec::with_capacity(ensemble.len());
    for p in &ensemble.paths {
        if p.trace.len() != ensemble.grid.levels() {
            return Err(Error::Data(format!(
                "path {} has no recorded trace",
                p.index
            )));
        }
        series.push(
            p.trace
                .iter()
                .map(|row| subset.members.iter().map(|&s| row[s]).collect())
                .collect(),
        );
        sq.push(trace_norm_sq(mesh, &p.trace, subset, ensemble.grid.dt));
    }
    let empty_subset = subset.is_empty();
    if empty_subset {
        log::warn!("trace requested on an empty boundary subset");
    }
    let mean = if sq.is_empty() {
        0.0
    } else {
        sq.iter().sum::<f64>() / sq.len() as f64
    };
    Ok(TraceReport {
        series,
        path_norms: sq.iter().map(|v| v.sqrt()).collect(),
        norm: mean.sqrt(),
        empty_subset,
    })
}

/// `|g|_{L^2(0,T;L^2(G))}`; the separable force gives `|g1|_{L^2(0,T)} |g2|_{L^2(G)}`.
pub fn force_norm(mesh: &SpatialMesh, coeffs: &CoefficientSet, grid: &TimeGrid) -> Result<f64> {
    Ok(match &coeffs.force {
        Force::None => 0.0,
        Force::Separable { g1, g2 } => {
            let g1sq: Vec<f64> = g1.levels(grid.steps, grid.dt).iter().map(|v| v * v).collect();
            time_trapezoid(&g1sq, grid.dt).sqrt() * l2_norm(mesh, &g2.on_mesh(mesh)?)
        }
        Force::Tabulated { values } => {
            let per: Vec<f64> = values.iter().map(|row| l2_norm_sq(mesh, row)).collect();
            time_trapezoid(&per, grid.dt).sqrt()
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HiddenRegularity {
    pub trace_norm: f64,
    pub data_norm: f64,
    pub force_norm: f64,
    pub ratio: f64,
}

/// `|dz/dnu|_{L^2(Sigma)} / (|(z0, z1)|_{H^1_0 x L^2} + |g|)` over the whole boundary.
pub fn hidden_regularity_ratio(
    mesh: &SpatialMesh,
    ensemble: &PathEnsemble,
    coeffs: &CoefficientSet,
) -> Result<HiddenRegularity> {
    let trace = boundary_normal_trace(mesh, ensemble, &BoundarySubset::whole_boundary(mesh))?;
    let data_norm = h10_l2_norm(mesh, &ensemble.z0, &ensemble.z1);
    let force_norm = force_norm(mesh, coeffs, &ensemble.grid)?;
    let denom = data_norm + force_norm;
    if denom <= 0.0 {
        return Err(Error::UndefinedRatio(
            "initial data and force are both zero".into(),
        ));
    }
    Ok(HiddenRegularity {
        trace_norm: trace.norm,
        data_norm,
        force_norm,
        ratio: trace.norm / denom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, Domain, PrincipalField};
    use crate::spde::solver::{simulate_with_noise, Recording};
    use std::f64::consts::PI;

    #[test]
    fn norms_of_a_sine() {
        let mesh = build_mesh(&Domain::unit_interval(), &[257]).unwrap();
        let f = mesh.sample(|p| (PI * p[0]).sin());
        assert!((l2_norm_sq(&mesh, &f) - 0.5).abs() < 1e-5);
        assert!((gradient_norm_sq(&mesh, &f) - PI * PI / 2.0).abs() < 1e-3);
    }

    fn eigenmode(n: usize, horizon: f64) -> (crate::geometry::SpatialMesh, PathEnsemble) {
        let mesh = build_mesh(&Domain::unit_interval(), &[n]).unwrap();
        let z0 = mesh.sample(|p| (PI * p[0]).sin());
        let grid = TimeGrid::new(horizon, 0.5 / (n - 1) as f64).unwrap();
        let e = simulate_with_noise(
            &mesh,
            &CoefficientSet::wave(PrincipalField::identity(1)),
            &z0,
            &vec![0.0; n],
            grid,
            vec![vec![0.0; grid.steps]],
            Recording::Observations,
        )
        .unwrap();
        (mesh, e)
    }

    #[test]
    fn eigenmode_trace_norm_matches_closed_form() {
        let horizon = 1.25;
        let (mesh, e) = eigenmode(129, horizon);
        let right = BoundarySubset {
            sigma: vec![-1.0, 1.0],
            members: vec![1],
        };
        let r = boundary_normal_trace(&mesh, &e, &right).unwrap();
        let exact = PI * PI * (horizon / 2.0 + (2.0 * PI * horizon).sin() / (4.0 * PI));
        assert!((r.norm.powi(2) / exact - 1.0).abs() < 1e-3);
        assert!(!r.empty_subset);
    }

    #[test]
    fn hidden_regularity_is_stable_under_refinement() {
        let a = hidden_regularity_ratio(&eigenmode(33, 1.0).0, &eigenmode(33, 1.0).1, &wave())
            .unwrap()
            .ratio;
        let b = hidden_regularity_ratio(&eigenmode(65, 1.0).0, &eigenmode(65, 1.0).1, &wave())
            .unwrap()
            .ratio;
        // both boundary points carry pi^2 T / 2 each; data norm is pi / sqrt 2
        let exact = (2.0 * PI * PI * 0.5).sqrt() / (PI / 2f64.sqrt());
        assert!((a / b - 1.0).abs() < 0.05);
        assert!((b / exact - 1.0).abs() < 0.01);
    }

    fn wave() -> CoefficientSet {
        CoefficientSet::wave(PrincipalField::identity(1))
    }

    #[test]
    fn zero_solution_has_undefined_ratio() {
        let mesh = build_mesh(&Domain::unit_interval(), &[9]).unwrap();
        let grid = TimeGrid::new(1.0, 1.0 / 16.0).unwrap();
        let zero = vec![0.0; 9];
        let e = simulate_with_noise(
            &mesh,
            &wave(),
            &zero,
            &zero,
            grid,
            vec![vec![0.0; 16]],
            Recording::Observations,
        )
        .unwrap();
        assert!(matches!(
            hidden_regularity_ratio(&mesh, &e, &wave()),
            Err(Error::UndefinedRatio(_))
        ));
        let empty = BoundarySubset {
            sigma: vec![0.0, 0.0],
            members: vec![],
        };
        let r = boundary_normal_trace(&mesh, &e, &empty).unwrap();
        assert_eq!(r.norm, 0.0);
        assert!(r.empty_subset);
    }
}
