//! Spatial meshes, principal coefficients, and the observed boundary portion.
//!
//! Domains are intervals or axis-aligned rectangles discretized by uniform
//! grids. Node `(i, j)` of a rectangle has flat index `i + nx * j`.

use serde::{Deserialize, Serialize};

use crate::carleman::WeightFunction;
use crate::error::{config, Error, Result};
use crate::tensor::{min_sym_eigenvalue, Mat2, MatrixJet, Point, Vec2};

/// Smallest admissible node count along any axis.
pub const MIN_NODES_PER_AXIS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Interval { lo: f64, hi: f64 },
    Rectangle { lo: [f64; 2], hi: [f64; 2] },
}

impl Domain {
    pub fn unit_interval() -> Self {
        Domain::Interval { lo: 0.0, hi: 1.0 }
    }

    pub fn unit_square() -> Self {
        Domain::Rectangle {
            lo: [0.0, 0.0],
            hi: [1.0, 1.0],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Rectangle { .. } => 2,
        }
    }

    fn extents(&self) -> ([f64; 2], [f64; 2]) {
        match *self {
            Domain::Interval { lo, hi } => ([lo, 0.0], [hi, 0.0]),
            Domain::Rectangle { lo, hi } => (lo, hi),
        }
    }
}

/// A boundary node together with its outward unit normal.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryNode {
    pub node: usize,
    /// Axis the normal points along.
    pub axis: usize,
    /// `+1.0` on the upper face of `axis`, `-1.0` on the lower face.
    pub side: f64,
    pub normal: Vec2,
    /// Normal of the other face meeting at a rectangle corner.
    pub corner_normal: Option<Vec2>,
    /// Boundary quadrature weight: 1 in one dimension, spacing along the edge in two.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMesh {
    pub domain: Domain,
    pub dim: usize,
    pub counts: [usize; 2],
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub spacing: [f64; 2],
    pub boundary: Vec<BoundaryNode>,
    pub interior: Vec<usize>,
    boundary_slot: Vec<Option<usize>>,
}

/// Builds a uniform mesh with `resolution[k]` nodes along axis `k`.
///
/// A single resolution entry is reused for every axis.
pub fn build_mesh(domain: &Domain, resolution: &[usize]) -> Result<SpatialMesh> {
    let dim = domain.dim();
    let counts: Vec<usize> = match resolution.len() {
        1 => vec![resolution[0]; dim],
        n if n == dim => resolution.to_vec(),
        n => return config(format!("resolution has {n} entries for a {dim}-dimensional domain")),
    };
    for &c in &counts {
        if c < MIN_NODES_PER_AXIS {
            return config(format!(
                "resolution {c} below the minimum of {MIN_NODES_PER_AXIS} nodes per axis"
            ));
        }
    }
    let (lo, hi) = domain.extents();
    for k in 0..dim {
        if !(lo[k].is_finite() && hi[k].is_finite()) || hi[k] - lo[k] <= 0.0 {
            return config(format!("degenerate extent on axis {k}: [{}, {}]", lo[k], hi[k]));
        }
    }
    let mut full = [1usize; 2];
    full[..dim].copy_from_slice(&counts);
    let mut spacing = [0.0; 2];
    for k in 0..dim {
        spacing[k] = (hi[k] - lo[k]) / (full[k] - 1) as f64;
    }

    let total = full[0] * full[1];
    let mut boundary = Vec::new();
    let mut interior = Vec::new();
    let mut boundary_slot = vec![None; total];
    for node in 0..total {
        let idx = [node % full[0], node / full[0]];
        let mut faces = Vec::new();
        for k in 0..dim {
            if idx[k] == 0 {
                faces.push((k, -1.0));
            } else if idx[k] == full[k] - 1 {
                faces.push((k, 1.0));
            }
        }
        if faces.is_empty() {
            interior.push(node);
            continue;
        }
        let (axis, side) = faces[0];
        let mut normal = [0.0; 2];
        normal[axis] = side;
        let corner_normal = faces.get(1).map(|&(k, s)| {
            let mut n = [0.0; 2];
            n[k] = s;
            n
        });
        let weight = if dim == 1 { 1.0 } else { spacing[1 - axis] };
        boundary_slot[node] = Some(boundary.len());
        boundary.push(BoundaryNode {
            node,
            axis,
            side,
            normal,
            corner_normal,
            weight,
        });
    }

    Ok(SpatialMesh {
        domain: domain.clone(),
        dim,
        counts: full,
        lo,
        hi,
        spacing,
        boundary,
        interior,
        boundary_slot,
    })
}

impl SpatialMesh {
    pub fn node_count(&self) -> usize {
        self.counts[0] * self.counts[1]
    }

    pub fn index(&self, node: usize) -> [usize; 2] {
        [node % self.counts[0], node / self.counts[0]]
    }

    pub fn node_at(&self, idx: [usize; 2]) -> usize {
        idx[0] + self.counts[0] * idx[1]
    }

    /// Flat-index offset between neighbours along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        if axis == 0 {
            1
        } else {
            self.counts[0]
        }
    }

    pub fn coords(&self, node: usize) -> Point {
        let idx = self.index(node);
        let mut p = [0.0; 2];
        for k in 0..self.dim {
            p[k] = self.lo[k] + idx[k] as f64 * self.spacing[k];
        }
        p
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary_slot[node].is_some()
    }

    /// Position of `node` in [`SpatialMesh::boundary`], if it lies on the boundary.
    pub fn boundary_slot(&self, node: usize) -> Option<usize> {
        self.boundary_slot[node]
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing[..self.dim]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing[..self.dim].iter().product()
    }

    /// Trapezoid quadrature weights over the closed domain.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        (0..self.node_count())
            .map(|node| {
                let idx = self.index(node);
                let mut w = 1.0;
                for k in 0..self.dim {
                    let edge = idx[k] == 0 || idx[k] == self.counts[k] - 1;
                    w *= if edge { 0.5 * self.spacing[k] } else { self.spacing[k] };
                }
                w
            })
            .collect()
    }

    /// Samples `f` at every node.
    pub fn sample(&self, f: impl Fn(Point) -> f64) -> Vec<f64> {
        (0..self.node_count()).map(|n| f(self.coords(n))).collect()
    }

    /// Outward normal derivative at boundary slot `slot` by the three-point
    /// one-sided second-order stencil.
    pub fn normal_derivative(&self, field: &[f64], slot: usize) -> f64 {
        self.normal_derivative_stencil(slot)
            .iter()
            .map(|&(node, c)| c * field[node])
            .sum()
    }

    /// Nodes and coefficients of the stencil used by [`SpatialMesh::normal_derivative`].
    pub fn normal_derivative_stencil(&self, slot: usize) -> [(usize, f64); 3] {
        let b = &self.boundary[slot];
        let stride = self.stride(b.axis) as isize;
        let step = -(b.side as isize) * stride;
        let n0 = b.node as isize;
        let h2 = 2.0 * self.spacing[b.axis];
        [
            (b.node, 3.0 / h2),
            ((n0 + step) as usize, -4.0 / h2),
            ((n0 + 2 * step) as usize, 1.0 / h2),
        ]
    }
}

/// Closed-form or tabulated families for the principal coefficients `b^ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PrincipalKind {
    Identity,
    /// Spatially constant matrix; only the leading `dim x dim` block is used.
    Constant { matrix: Mat2 },
    /// One-dimensional `base + amplitude * sin(wavenumber * pi * x)`.
    Sine {
        base: f64,
        amplitude: f64,
        wavenumber: f64,
    },
    /// Values at every mesh node; derivatives by finite differences.
    Nodal { values: Vec<Mat2> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalField {
    pub dim: usize,
    pub kind: PrincipalKind,
    /// Declared ellipticity constant.
    pub s0: f64,
}

impl PrincipalField {
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            kind: PrincipalKind::Identity,
            s0: 1.0,
        }
    }

    pub fn new(dim: usize, kind: PrincipalKind, s0: f64) -> Self {
        Self { dim, kind, s0 }
    }

    pub fn is_analytic(&self) -> bool {
        !matches!(self.kind, PrincipalKind::Nodal { .. })
    }

    /// Analytic jet at `x`; `None` for tabulated fields.
    pub fn jet(&self, x: Point) -> Option<MatrixJet> {
        let mut jet = MatrixJet::default();
        match &self.kind {
            PrincipalKind::Identity => {
                for i in 0..self.dim {
                    jet.value[i][i] = 1.0;
                }
            }
            PrincipalKind::Constant { matrix } => {
                for i in 0..self.dim {
                    for j in 0..self.dim {
                        jet.value[i][j] = matrix[i][j];
                    }
                }
            }
            PrincipalKind::Sine {
                base,
                amplitude,
                wavenumber,
            } => {
                let k = wavenumber * std::f64::consts::PI;
                let (s, c) = (k * x[0]).sin_cos();
                jet.value[0][0] = base + amplitude * s;
                jet.d1[0][0][0] = amplitude * k * c;
                jet.d2[0][0][0][0] = -amplitude * k * k * s;
                jet.d3[0][0][0][0][0] = -amplitude * k * k * k * c;
            }
            PrincipalKind::Nodal { .. } => return None,
        }
        Some(jet)
    }

    pub fn value_at_node(&self, mesh: &SpatialMesh, node: usize) -> Mat2 {
        match &self.kind {
            PrincipalKind::Nodal { values } => values[node],
            _ => self.jet(mesh.coords(node)).map(|j| j.value).unwrap_or_default(),
        }
    }

    /// Value halfway between two neighbouring nodes.
    pub fn midpoint_value(&self, mesh: &SpatialMesh, a: usize, b: usize) -> Mat2 {
        match &self.kind {
            PrincipalKind::Nodal { values } => {
                let mut m = [[0.0; 2]; 2];
                for i in 0..2 {
                    for j in 0..2 {
                        m[i][j] = 0.5 * (values[a][i][j] + values[b][i][j]);
                    }
                }
                m
            }
            _ => {
                let (pa, pb) = (mesh.coords(a), mesh.coords(b));
                let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
                self.jet(mid).map(|j| j.value).unwrap_or_default()
            }
        }
    }

    pub fn nodal_values(&self, mesh: &SpatialMesh) -> Vec<Mat2> {
        (0..mesh.node_count())
            .map(|n| self.value_at_node(mesh, n))
            .collect()
    }

    /// Rejects tabulated fields of the wrong length and asymmetric entries.
    pub fn validate(&self, mesh: &SpatialMesh) -> Result<()> {
        if self.dim != mesh.dim {
            return Err(Error::InvalidField(format!(
                "field dimension {} does not match mesh dimension {}",
                self.dim, mesh.dim
            )));
        }
        if let PrincipalKind::Nodal { values } = &self.kind {
            if values.len() != mesh.node_count() {
                return Err(Error::InvalidField(format!(
                    "{} nodal values for {} nodes",
                    values.len(),
                    mesh.node_count()
                )));
            }
        }
        if let PrincipalKind::Sine { .. } = self.kind {
            if self.dim != 1 {
                return Err(Error::InvalidField("sine family is one-dimensional".into()));
            }
        }
        if self.dim == 2 {
            for node in 0..mesh.node_count() {
                let m = self.value_at_node(mesh, node);
                let scale = m[0][1].abs().max(m[1][0].abs()).max(1.0);
                if (m[0][1] - m[1][0]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidField(format!(
                        "b^12 != b^21 at node {node}: {} vs {}",
                        m[0][1], m[1][0]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Largest eigenvalue over the mesh, the squared maximal wave speed.
    pub fn max_eigenvalue(&self, mesh: &SpatialMesh) -> f64 {
        (0..mesh.node_count())
            .map(|n| crate::tensor::max_sym_eigenvalue(self.dim, &self.value_at_node(mesh, n)))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EllipticityReport {
    pub min_eigenvalue: f64,
    pub argmin_node: usize,
    pub s0: f64,
    pub pass: bool,
}

/// Minimum over nodes of the smallest eigenvalue of `b^ij`, compared with `s0`.
pub fn check_ellipticity(field: &PrincipalField, mesh: &SpatialMesh) -> Result<EllipticityReport> {
    field.validate(mesh)?;
    let mut min = f64::INFINITY;
    let mut argmin = 0;
    for node in 0..mesh.node_count() {
        let e = min_sym_eigenvalue(field.dim, &field.value_at_node(mesh, node));
        if e < min {
            min = e;
            argmin = node;
        }
    }
    Ok(EllipticityReport {
        min_eigenvalue: min,
        argmin_node: argmin,
        s0: field.s0,
        pass: min >= field.s0,
    })
}

/// Boundary nodes where `sum_ij b^ij d_{x_i} nu^j > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySubset {
    /// `sigma` for every boundary slot of the mesh, in slot order.
    pub sigma: Vec<f64>,
    /// Slots with `sigma > 0`, ascending.
    pub members: Vec<usize>,
}

impl BoundarySubset {
    pub fn contains(&self, slot: usize) -> bool {
        self.sigma[slot] > 0.0
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    /// The whole boundary, used for full-boundary trace norms.
    pub fn whole_boundary(mesh: &SpatialMesh) -> Self {
        Self {
            sigma: vec![1.0; mesh.boundary.len()],
            members: (0..mesh.boundary.len()).collect(),
        }
    }
}

/// Extracts the observed boundary portion.
///
/// At rectangle corners `sigma` is the smaller of the values computed with the
/// two face normals, so a corner belongs to the subset only when both faces agree
/// that it should.
pub fn extract_gamma0(
    mesh: &SpatialMesh,
    field: &PrincipalField,
    d: &WeightFunction,
) -> Result<BoundarySubset> {
    field.validate(mesh)?;
    let mut sigma = Vec::with_capacity(mesh.boundary.len());
    for b in &mesh.boundary {
        let x = mesh.coords(b.node);
        let grad = d.jet(mesh.dim, x).grad;
        let m = field.value_at_node(mesh, b.node);
        let flux = crate::tensor::mat_vec(mesh.dim, &m, &grad);
        let mut s = crate::tensor::dot(mesh.dim, &flux, &b.normal);
        if let Some(alt) = b.corner_normal {
            s = s.min(crate::tensor::dot(mesh.dim, &flux, &alt));
        }
        sigma.push(s);
    }
    let members = sigma
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 0.0)
        .map(|(i, _)| i)
        .collect();
    Ok(BoundarySubset { sigma, members })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interval(n: usize) -> SpatialMesh {
        build_mesh(&Domain::unit_interval(), &[n]).unwrap()
    }

    #[test]
    fn interval_nodes_and_normals() {
        let mesh = interval(5);
        let xs: Vec<f64> = (0..5).map(|n| mesh.coords(n)[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(mesh.boundary.len(), 2);
        assert_eq!(mesh.boundary[0].node, 0);
        assert_eq!(mesh.boundary[0].normal[0], -1.0);
        assert_eq!(mesh.boundary[1].node, 4);
        assert_eq!(mesh.boundary[1].normal[0], 1.0);
    }

    #[test]
    fn rectangle_spacing_and_boundary_count() {
        let mesh = build_mesh(
            &Domain::Rectangle {
                lo: [0.0, 0.0],
                hi: [1.0, 2.0],
            },
            &[3, 5],
        )
        .unwrap();
        assert_eq!(mesh.spacing, [0.5, 0.5]);
        assert_eq!(mesh.boundary.len(), 12);
        assert_eq!(mesh.interior.len(), 3);
        for b in &mesh.boundary {
            let norm: f64 = b.normal.iter().map(|v| v * v).sum();
            assert_eq!(norm, 1.0);
        }
        // corners take the normal of the lower-index axis
        let corner = mesh.boundary.iter().find(|b| b.node == 0).unwrap();
        assert_eq!(corner.normal, [-1.0, 0.0]);
        assert_eq!(corner.corner_normal, Some([0.0, -1.0]));
    }

    #[test]
    fn too_coarse_or_degenerate_is_rejected() {
        assert!(matches!(
            build_mesh(&Domain::unit_interval(), &[2]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_mesh(&Domain::Interval { lo: 1.0, hi: 1.0 }, &[5]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_mesh(&Domain::Interval { lo: 0.0, hi: f64::INFINITY }, &[5]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ellipticity_of_identity_sine_and_indefinite() {
        let mesh = interval(11);
        let r = check_ellipticity(&PrincipalField::identity(1), &mesh).unwrap();
        assert_eq!(r.min_eigenvalue, 1.0);
        assert!(r.pass);

        let sine = PrincipalField::new(
            1,
            PrincipalKind::Sine {
                base: 2.0,
                amplitude: 1.0,
                wavenumber: 1.0,
            },
            1.0,
        );
        // brute force over nodes
        let expected = (0..11)
            .map(|n| 2.0 + (std::f64::consts::PI * n as f64 / 10.0).sin())
            .fold(f64::INFINITY, f64::min);
        let r = check_ellipticity(&sine, &mesh).unwrap();
        assert!((r.min_eigenvalue - expected).abs() < 1e-15);
        assert!((r.min_eigenvalue - 2.0).abs() < 1e-12);

        let mesh2 = build_mesh(&Domain::unit_square(), &[4]).unwrap();
        let indefinite = PrincipalField::new(
            2,
            PrincipalKind::Constant {
                matrix: [[1.0, 0.0], [0.0, -1.0]],
            },
            0.1,
        );
        let r = check_ellipticity(&indefinite, &mesh2).unwrap();
        assert_eq!(r.min_eigenvalue, -1.0);
        assert!(!r.pass);
    }

    #[test]
    fn asymmetric_field_is_invalid() {
        let mesh = build_mesh(&Domain::unit_square(), &[4]).unwrap();
        let f = PrincipalField::new(
            2,
            PrincipalKind::Constant {
                matrix: [[1.0, 0.3], [0.0, 1.0]],
            },
            0.5,
        );
        assert!(matches!(
            check_ellipticity(&f, &mesh),
            Err(Error::InvalidField(_))
        ));
    }

    #[test]
    fn gamma0_in_one_dimension() {
        let mesh = interval(9);
        let d = WeightFunction::shifted_quadratic(1.0, &[-1.0]);
        let g = extract_gamma0(&mesh, &PrincipalField::identity(1), &d).unwrap();
        assert_eq!(g.sigma, vec![-2.0, 4.0]);
        assert_eq!(g.members, vec![1]);
    }

    #[test]
    fn gamma0_on_unit_square() {
        let mesh = build_mesh(&Domain::unit_square(), &[6]).unwrap();
        let d = WeightFunction::shifted_quadratic(1.0, &[-1.0, -1.0]);
        let g = extract_gamma0(&mesh, &PrincipalField::identity(2), &d).unwrap();
        for (slot, b) in mesh.boundary.iter().enumerate() {
            let x = mesh.coords(b.node);
            let on_right = (x[0] - 1.0).abs() < 1e-12;
            let on_top = (x[1] - 1.0).abs() < 1e-12;
            let on_left = x[0].abs() < 1e-12;
            let on_bottom = x[1].abs() < 1e-12;
            // mixed corners (1,0) and (0,1) disagree and are excluded
            let expected = (on_right || on_top) && !on_left && !on_bottom;
            assert_eq!(g.contains(slot), expected, "node at {x:?}");
        }
    }

    #[test]
    fn constant_weight_gives_empty_gamma0() {
        let mesh = interval(9);
        let g = extract_gamma0(
            &mesh,
            &PrincipalField::identity(1),
            &WeightFunction::Constant { value: 3.0 },
        )
        .unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn normal_derivative_is_exact_for_quadratics() {
        let mesh = interval(7);
        let f = mesh.sample(|x| x[0] * x[0] - 0.5 * x[0]);
        // f' = 2x - 0.5; outward at 0 is -f'(0), at 1 is f'(1)
        assert!((mesh.normal_derivative(&f, 0) - 0.5).abs() < 1e-12);
        assert!((mesh.normal_derivative(&f, 1) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_weights_sum_to_measure() {
        let mesh = build_mesh(
            &Domain::Rectangle {
                lo: [0.0, -1.0],
                hi: [2.0, 0.5],
            },
            &[5, 7],
        )
        .unwrap();
        let s: f64 = mesh.trapezoid_weights().iter().sum();
        assert!((s - 3.0).abs() < 1e-12);
    }
}
