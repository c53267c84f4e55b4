use crate::geometry::{PrincipalField, SpatialMesh};

/// Compressed sparse rows over all mesh nodes.
#[derive(Debug, Clone, Default)]
pub struct SparseMatrix {
    pub n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut m = SparseMatrix {
            n,
            row_ptr: vec![0],
            ..Default::default()
        };
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *m.vals.last_mut().unwrap() += v;
                } else {
                    m.cols.push(c);
                    m.vals.push(v);
                    last = Some(c);
                }
            }
            m.row_ptr.push(m.cols.len());
        }
        m
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for r in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            out[r] = s;
        }
    }

    pub fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.n {
            let xr = x[r];
            if xr == 0.0 {
                continue;
            }
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[self.cols[k]] += self.vals[k] * xr;
            }
        }
    }

    pub fn entry(&self, r: usize, c: usize) -> f64 {
        (self.row_ptr[r]..self.row_ptr[r + 1])
            .find(|&k| self.cols[k] == c)
            .map(|k| self.vals[k])
            .unwrap_or(0.0)
    }
}

/// Second-order divergence-form approximation of `div(b grad z)` on interior rows.
///
/// Diagonal entries of `b` are taken at cell midpoints; the mixed term uses nodal
/// `b^12` with centered differences, which keeps the matrix symmetric.
pub fn assemble_divergence(mesh: &SpatialMesh, field: &PrincipalField) -> SparseMatrix {
    let n = mesh.node_count();
    let nodal = field.nodal_values(mesh);
    let mut rows = vec![Vec::new(); n];
    for &node in &mesh.interior {
        let row = &mut rows[node];
        for axis in 0..mesh.dim {
            let s = mesh.stride(axis);
            let h2 = mesh.spacing[axis] * mesh.spacing[axis];
            let bp = field.midpoint_value(mesh, node, node + s)[axis][axis] / h2;
            let bm = field.midpoint_value(mesh, node, node - s)[axis][axis] / h2;
            row.push((node + s, bp));
            row.push((node - s, bm));
            row.push((node, -bp - bm));
        }
        if mesh.dim == 2 {
            let (sx, sy) = (mesh.stride(0), mesh.stride(1));
            let c = 1.0 / (4.0 * mesh.spacing[0] * mesh.spacing[1]);
            // d/dx (b12 dz/dy)
            let e = nodal[node + sx][0][1] * c;
            let w = nodal[node - sx][0][1] * c;
            row.push((node + sx + sy, e));
            row.push((node + sx - sy, -e));
            row.push((node - sx + sy, -w));
            row.push((node - sx - sy, w));
            // d/dy (b12 dz/dx)
            let nn = nodal[node + sy][0][1] * c;
            let ss = nodal[node - sy][0][1] * c;
            row.push((node + sy + sx, nn));
            row.push((node + sy - sx, -nn));
            row.push((node - sy + sx, -ss));
            row.push((node - sy - sx, ss));
        }
    }
    SparseMatrix::from_rows(n, rows)
}

/// Centered first difference along `axis` on interior rows.
pub fn assemble_gradient(mesh: &SpatialMesh, axis: usize) -> SparseMatrix {
    let n = mesh.node_count();
    let s = mesh.stride(axis);
    let c = 0.5 / mesh.spacing[axis];
    let mut rows = vec![Vec::new(); n];
    for &node in &mesh.interior {
        rows[node] = vec![(node + s, c), (node - s, -c)];
    }
    SparseMatrix::from_rows(n, rows)
}

/// `N = div(b grad .) + b2 . grad + b3` restricted to interior rows.
pub fn assemble_spatial_operator(
    mesh: &SpatialMesh,
    field: &PrincipalField,
    b2: &[Vec<f64>],
    b3: &[f64],
) -> SparseMatrix {
    let n = mesh.node_count();
    let base = assemble_divergence(mesh, field);
    let mut rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|r| {
            (base.row_ptr[r]..base.row_ptr[r + 1])
                .map(|k| (base.cols[k], base.vals[k]))
                .collect()
        })
        .collect();
    for (axis, coef) in b2.iter().enumerate() {
        if coef.iter().all(|v| *v == 0.0) {
            continue;
        }
        let g = assemble_gradient(mesh, axis);
        for &node in &mesh.interior {
            for k in g.row_ptr[node]..g.row_ptr[node + 1] {
                rows[node].push((g.cols[k], coef[node] * g.vals[k]));
            }
        }
    }
    for &node in &mesh.interior {
        if b3[node] != 0.0 {
            rows[node].push((node, b3[node]));
        }
    }
    SparseMatrix::from_rows(n, rows)
}
