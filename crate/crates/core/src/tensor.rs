//! Fixed-size tensors for spatial dimension at most two.
//!
//! Every spatial quantity is stored in a 2-slot array; in one dimension only
//! index 0 is meaningful and the remaining slots are zero.

/// A point of the spatial domain.
pub type Point = [f64; 2];

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];
pub type Ten3 = [Mat2; 2];
pub type Ten4 = [Ten3; 2];
pub type Ten5 = [Ten4; 2];

/// Value and analytic derivatives up to fourth order of a scalar function of `x`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScalarJet {
    pub value: f64,
    pub grad: Vec2,
    pub hess: Mat2,
    pub d3: Ten3,
    pub d4: Ten4,
}

/// Value and analytic derivatives up to third order of a symmetric matrix field.
///
/// `d1[i][j][k]` is the derivative of entry `(i, j)` along `x_k`; higher orders
/// append further derivative indices.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MatrixJet {
    pub value: Mat2,
    pub d1: Ten3,
    pub d2: Ten4,
    pub d3: Ten5,
}

pub fn dot(dim: usize, a: &Vec2, b: &Vec2) -> f64 {
    (0..dim).map(|i| a[i] * b[i]).sum()
}

/// `sum_ij m[i][j] a[i] b[j]`.
pub fn bilinear(dim: usize, m: &Mat2, a: &Vec2, b: &Vec2) -> f64 {
    let mut s = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            s += m[i][j] * a[i] * b[j];
        }
    }
    s
}

pub fn mat_vec(dim: usize, m: &Mat2, a: &Vec2) -> Vec2 {
    let mut out = [0.0; 2];
    for i in 0..dim {
        for j in 0..dim {
            out[i] += m[i][j] * a[j];
        }
    }
    out
}

/// Smallest eigenvalue of the symmetric part of a `dim x dim` matrix.
pub fn min_sym_eigenvalue(dim: usize, m: &Mat2) -> f64 {
    match dim {
        1 => m[0][0],
        _ => {
            let a = m[0][0];
            let d = m[1][1];
            let b = 0.5 * (m[0][1] + m[1][0]);
            let mean = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            mean - rad
        }
    }
}

pub fn max_sym_eigenvalue(dim: usize, m: &Mat2) -> f64 {
    match dim {
        1 => m[0][0],
        _ => {
            let a = m[0][0];
            let d = m[1][1];
            let b = 0.5 * (m[0][1] + m[1][0]);
            0.5 * (a + d) + (0.25 * (a - d) * (a - d) + b * b).sqrt()
        }
    }
}
