use serde::Serialize;

use crate::error::{Error, Result};
use crate::fd;
use crate::geometry::{PrincipalField, SpatialMesh};
use crate::tensor::{bilinear, min_sym_eigenvalue, Mat2, Ten3};

use super::weight::{CarlemanParams, WeightFunction};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionDReport {
    /// Largest `mu0` satisfying the matrix inequality at every node.
    pub mu0_max: f64,
    pub mu0_argmin_node: usize,
    pub min_grad_d: f64,
    pub min_grad_node: usize,
    /// Smallest value of `d` over the nodes; `d` must be positive.
    pub min_d: f64,
    pub pass: bool,
}

/// Per-node `d b^ij / d x_k`, analytic when available.
pub(crate) fn principal_derivatives(field: &PrincipalField, mesh: &SpatialMesh) -> Vec<Ten3> {
    let nodes = mesh.node_count();
    let n = mesh.dim;
    if field.is_analytic() {
        return (0..nodes)
            .map(|k| field.jet(mesh.coords(k)).map(|j| j.d1).unwrap_or_default())
            .collect();
    }
    let values = field.nodal_values(mesh);
    let mut out = vec![Ten3::default(); nodes];
    for i in 0..n {
        for j in 0..n {
            let entry: Vec<f64> = values.iter().map(|m| m[i][j]).collect();
            for k in 0..n {
                let der = fd::derivative(mesh, &entry, k);
                for (node, v) in der.into_iter().enumerate() {
                    out[node][i][j][k] = v;
                }
            }
        }
    }
    out
}

/// Smallest `mu` with `det(M - mu b) = 0`, `b` positive definite.
fn min_generalized_eigenvalue(n: usize, m: &Mat2, b: &Mat2) -> f64 {
    if n == 1 {
        return m[0][0] / b[0][0];
    }
    let det_b = b[0][0] * b[1][1] - b[0][1] * b[1][0];
    let det_m = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let mid = m[0][0] * b[1][1] + m[1][1] * b[0][0] - 2.0 * m[0][1] * b[0][1];
    let disc = (mid * mid - 4.0 * det_b * det_m).max(0.0);
    (mid - disc.sqrt()) / (2.0 * det_b)
}

/// Matrix of the quadratic form on the left of the `d` condition at one node.
pub fn condition_matrix(n: usize, b: &Mat2, db: &Ten3, grad: &[f64; 2], hess: &Mat2) -> Mat2 {
    let mut m = [[0.0; 2]; 2];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for ip in 0..n {
                for jp in 0..n {
                    let flux_der = db[ip][j][jp] * grad[ip] + b[ip][j] * hess[ip][jp];
                    s += 2.0 * b[i][jp] * flux_der - db[i][j][jp] * b[ip][jp] * grad[ip];
                }
            }
            m[i][j] = s;
        }
    }
    let off = 0.5 * (m[0][1] + m[1][0]);
    m[0][1] = off;
    m[1][0] = off;
    m
}

/// Checks the matrix inequality on `d` and the absence of critical points.
pub fn verify_condition_d(
    d: &WeightFunction,
    field: &PrincipalField,
    mesh: &SpatialMesh,
) -> Result<ConditionDReport> {
    field.validate(mesh)?;
    let n = mesh.dim;
    let values = field.nodal_values(mesh);
    let derivs = principal_derivatives(field, mesh);
    let mut rep = ConditionDReport {
        mu0_max: f64::INFINITY,
        mu0_argmin_node: 0,
        min_grad_d: f64::INFINITY,
        min_grad_node: 0,
        min_d: f64::INFINITY,
        pass: false,
    };
    for node in 0..mesh.node_count() {
        let b = &values[node];
        if min_sym_eigenvalue(n, b) <= 0.0 {
            return Err(Error::InvalidField(format!(
                "b^ij is not positive definite at node {node}"
            )));
        }
        let jet = d.jet(n, mesh.coords(node));
        let m = condition_matrix(n, b, &derivs[node], &jet.grad, &jet.hess);
        let mu = min_generalized_eigenvalue(n, &m, b);
        if mu < rep.mu0_max {
            rep.mu0_max = mu;
            rep.mu0_argmin_node = node;
        }
        let g = (0..n).map(|i| jet.grad[i] * jet.grad[i]).sum::<f64>().sqrt();
        if g < rep.min_grad_d {
            rep.min_grad_d = g;
            rep.min_grad_node = node;
        }
        rep.min_d = rep.min_d.min(jet.value);
    }
    rep.pass = rep.mu0_max > 4.0 && rep.min_grad_d > 0.0 && rep.min_d > 0.0;
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionParamsReport {
    pub part1_margin: f64,
    /// `4 c1^2 T^2 - sup q`.
    pub part2_lower_margin: f64,
    /// `mu0 / (8 c1 + c0) * inf q - 4 c1^2 T^2`.
    pub part2_upper_margin: f64,
    pub inf_q: f64,
    pub sup_q: f64,
    /// Violated parameter constraints, if any.
    pub violations: Vec<String>,
    pub pass: bool,
}

/// `q(x) = sum_ij b^ij d_i d_j` at every node.
pub fn gradient_energy(d: &WeightFunction, field: &PrincipalField, mesh: &SpatialMesh) -> Vec<f64> {
    (0..mesh.node_count())
        .map(|node| {
            let g = d.jet(mesh.dim, mesh.coords(node)).grad;
            bilinear(mesh.dim, &field.value_at_node(mesh, node), &g, &g)
        })
        .collect()
}

/// Both parts of the parameter condition, part 2 read with `inf q` and `sup q`.
pub fn verify_condition_params(
    params: &CarlemanParams,
    d: &WeightFunction,
    field: &PrincipalField,
    mesh: &SpatialMesh,
) -> Result<ConditionParamsReport> {
    field.validate(mesh)?;
    let q = gradient_energy(d, field, mesh);
    let inf_q = q.iter().copied().fold(f64::INFINITY, f64::min);
    let sup_q = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (c0, c1, t) = (params.c0, params.c1, params.horizon);
    let mid = 4.0 * c1 * c1 * t * t;
    let part1_margin = params.mu0 - 4.0 * c1 - c0;
    let part2_lower_margin = mid - sup_q;
    let part2_upper_margin = params.mu0 / (8.0 * c1 + c0) * inf_q - mid;
    let violations = params.constraint_violations();
    let pass = violations.is_empty()
        && part1_margin > 0.0
        && part2_lower_margin > 0.0
        && part2_upper_margin > 0.0;
    Ok(ConditionParamsReport {
        part1_margin,
        part2_lower_margin,
        part2_upper_margin,
        inf_q,
        sup_q,
        violations,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, Domain, PrincipalKind};

    fn params(horizon: f64) -> CarlemanParams {
        CarlemanParams {
            lambda: 1.0,
            c0: 0.1,
            c1: 0.9,
            mu0: 32.0,
            horizon,
        }
    }

    #[test]
    fn quadratic_weight_gives_four_a() {
        let mesh = build_mesh(&Domain::unit_interval(), &[11]).unwrap();
        for a in [0.5, 1.0, 3.0, 8.0] {
            let d = WeightFunction::shifted_quadratic(a, &[-1.0]);
            let r = verify_condition_d(&d, &PrincipalField::identity(1), &mesh).unwrap();
            assert!((r.mu0_max - 4.0 * a).abs() < 1e-12);
            assert!((r.min_grad_d - 2.0 * a).abs() < 1e-12);
            assert_eq!(r.pass, a > 1.0);
        }
    }

    #[test]
    fn quadratic_weight_in_two_dimensions() {
        let mesh = build_mesh(&Domain::unit_square(), &[6]).unwrap();
        let d = WeightFunction::shifted_quadratic(2.0, &[-1.0, -1.0]);
        let r = verify_condition_d(&d, &PrincipalField::identity(2), &mesh).unwrap();
        assert!((r.mu0_max - 8.0).abs() < 1e-12);
        assert!(r.pass);
    }

    #[test]
    fn interior_critical_point_fails_d2() {
        let mesh = build_mesh(&Domain::unit_interval(), &[5]).unwrap();
        let d = WeightFunction::shifted_quadratic(2.0, &[0.5]);
        let r = verify_condition_d(&d, &PrincipalField::identity(1), &mesh).unwrap();
        assert_eq!(r.min_grad_d, 0.0);
        assert!(!r.pass);
    }

    #[test]
    fn variable_coefficient_matches_one_dimensional_reduction() {
        // In 1D, M = b b' d' + 2 b^2 d'', so mu = b' d' + 2 b d''.
        let field = PrincipalField::new(
            1,
            PrincipalKind::Sine {
                base: 2.0,
                amplitude: 0.5,
                wavenumber: 1.0,
            },
            1.0,
        );
        let mesh = build_mesh(&Domain::unit_interval(), &[21]).unwrap();
        let d = WeightFunction::shifted_quadratic(3.0, &[-1.0]);
        let r = verify_condition_d(&d, &field, &mesh).unwrap();
        let pi = std::f64::consts::PI;
        let expect = (0..21)
            .map(|k| {
                let x = k as f64 / 20.0;
                let b = 2.0 + 0.5 * (pi * x).sin();
                let bp = 0.5 * pi * (pi * x).cos();
                bp * 6.0 * (x + 1.0) + 2.0 * b * 6.0
            })
            .fold(f64::INFINITY, f64::min);
        assert!((r.mu0_max - expect).abs() < 1e-10);
    }

    #[test]
    fn nodal_field_uses_difference_derivatives() {
        let mesh = build_mesh(&Domain::unit_interval(), &[41]).unwrap();
        let sine = PrincipalField::new(
            1,
            PrincipalKind::Sine {
                base: 2.0,
                amplitude: 0.5,
                wavenumber: 1.0,
            },
            1.0,
        );
        let nodal = PrincipalField::new(
            1,
            PrincipalKind::Nodal {
                values: sine.nodal_values(&mesh),
            },
            1.0,
        );
        let d = WeightFunction::shifted_quadratic(3.0, &[-1.0]);
        let a = verify_condition_d(&d, &sine, &mesh).unwrap().mu0_max;
        let b = verify_condition_d(&d, &nodal, &mesh).unwrap().mu0_max;
        assert!((a - b).abs() < 1e-4 * a.abs());
    }

    #[test]
    fn indefinite_field_is_an_error() {
        let mesh = build_mesh(&Domain::unit_square(), &[4]).unwrap();
        let field = PrincipalField::new(
            2,
            PrincipalKind::Constant {
                matrix: [[1.0, 0.0], [0.0, -1.0]],
            },
            0.1,
        );
        let d = WeightFunction::shifted_quadratic(2.0, &[-1.0, -1.0]);
        assert!(matches!(
            verify_condition_d(&d, &field, &mesh),
            Err(Error::InvalidField(_))
        ));
    }

    #[test]
    fn audited_configuration_margins() {
        let mesh = build_mesh(&Domain::unit_interval(), &[33]).unwrap();
        let d = WeightFunction::shifted_quadratic(8.0, &[-1.0]);
        let field = PrincipalField::identity(1);
        let r = verify_condition_params(&params(18.0), &d, &field, &mesh).unwrap();
        // independent arithmetic: inf q = 16^2, sup q = 32^2
        let mid = 4.0 * 0.81 * 324.0;
        assert!((r.inf_q - 256.0).abs() < 1e-9 && (r.sup_q - 1024.0).abs() < 1e-9);
        assert!((r.part1_margin - 28.3).abs() < 1e-12);
        assert!((r.part2_upper_margin - (32.0 / 7.3 * 256.0 - mid)).abs() < 1e-9);
        assert!((r.part2_upper_margin + mid - 8192.0 / 7.3).abs() < 1e-9);
        assert!((r.part2_lower_margin - (1049.76 - 1024.0)).abs() < 1e-9);
        assert!(r.pass);

        let r = verify_condition_params(&params(16.0), &d, &field, &mesh).unwrap();
        assert!((r.part2_lower_margin - (829.44 - 1024.0)).abs() < 1e-9);
        assert!(!r.pass);
    }

    #[test]
    fn small_mu0_is_reported_not_thrown() {
        let mesh = build_mesh(&Domain::unit_interval(), &[9]).unwrap();
        let d = WeightFunction::shifted_quadratic(8.0, &[-1.0]);
        let p = CarlemanParams {
            mu0: 4.0,
            c0: 0.5,
            ..params(18.0)
        };
        let r = verify_condition_params(&p, &d, &PrincipalField::identity(1), &mesh).unwrap();
        assert!((r.part1_margin - (4.0 - 3.6 - 0.5)).abs() < 1e-12);
        assert!(!r.pass);
        assert!(!r.violations.is_empty());
    }
}
