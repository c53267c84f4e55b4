//! Finite-difference derivatives of nodal data along one mesh axis.

use crate::geometry::SpatialMesh;

/// First derivative along `axis`: fourth-order centered in the interior with
/// fourth-order one-sided stencils near the ends. Falls back to second order
/// when the axis has fewer than five nodes.
pub fn derivative(mesh: &SpatialMesh, values: &[f64], axis: usize) -> Vec<f64> {
    let n = mesh.counts[axis];
    let stride = mesh.stride(axis);
    let h = mesh.spacing[axis];
    let mut out = vec![0.0; values.len()];
    for node in 0..values.len() {
        let i = mesh.index(node)[axis];
        let at = |k: usize| values[node - i * stride + k * stride];
        out[node] = if n >= 5 {
            if i >= 2 && i + 2 < n {
                (-at(i + 2) + 8.0 * at(i + 1) - 8.0 * at(i - 1) + at(i - 2)) / (12.0 * h)
            } else if i == 0 {
                (-25.0 * at(0) + 48.0 * at(1) - 36.0 * at(2) + 16.0 * at(3) - 3.0 * at(4)) / (12.0 * h)
            } else if i == 1 {
                (-3.0 * at(0) - 10.0 * at(1) + 18.0 * at(2) - 6.0 * at(3) + at(4)) / (12.0 * h)
            } else if i == n - 2 {
                (3.0 * at(n - 1) + 10.0 * at(n - 2) - 18.0 * at(n - 3) + 6.0 * at(n - 4) - at(n - 5))
                    / (12.0 * h)
            } else {
                (25.0 * at(n - 1) - 48.0 * at(n - 2) + 36.0 * at(n - 3) - 16.0 * at(n - 4)
                    + 3.0 * at(n - 5))
                    / (12.0 * h)
            }
        } else if i == 0 {
            (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
        } else if i == n - 1 {
            (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h)
        } else {
            (at(i + 1) - at(i - 1)) / (2.0 * h)
        };
    }
    out
}
