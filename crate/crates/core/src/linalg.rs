//! Small fixed-size linear algebra shared by the geometry, media and stepper.
//!
//! Points and tensors are stored in three components regardless of the
//! working dimension `d`; components with index `>= d` are kept at zero.

use nalgebra::{DMatrix, Matrix3, Vector3};

pub type Vector = Vector3<f64>;
pub type Matrix = Matrix3<f64>;

pub const MAX_DIM: usize = 3;

/// Builds a padded vector from the first `d` entries of `xs`.
pub fn vector_from(xs: &[f64]) -> Vector {
    let mut v = Vector::zeros();
    for (i, x) in xs.iter().take(MAX_DIM).enumerate() {
        v[i] = *x;
    }
    v
}

pub fn unit(dim: usize, axis: usize) -> Vector {
    debug_assert!(axis < dim);
    let mut v = Vector::zeros();
    v[axis] = 1.0;
    v
}

/// Scalar multiple of the identity on the leading `dim x dim` block.
pub fn scaled_identity(dim: usize, s: f64) -> Matrix {
    let mut m = Matrix::zeros();
    for i in 0..dim {
        m[(i, i)] = s;
    }
    m
}

/// Builds a padded matrix from row-major rows.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Matrix {
    let mut m = Matrix::zeros();
    for (i, row) in rows.iter().take(MAX_DIM).enumerate() {
        for (j, x) in row.iter().take(MAX_DIM).enumerate() {
            m[(i, j)] = *x;
        }
    }
    m
}

pub fn matrix_to_rows(m: &Matrix, dim: usize) -> Vec<Vec<f64>> {
    (0..dim)
        .map(|i| (0..dim).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Lower-triangular factor `L` with `L Lᵀ = a` on the leading `dim` block.
///
/// Returns `None` when the block is not positive definite.
pub fn cholesky_lower(a: &Matrix, dim: usize) -> Option<Matrix> {
    let mut l = Matrix::zeros();
    for j in 0..dim {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) {
            return None;
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..dim {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

/// Eigenvalues (ascending) of the symmetric leading `dim` block.
pub fn symmetric_eigenvalues(a: &Matrix, dim: usize) -> Vec<f64> {
    let block = DMatrix::from_fn(dim, dim, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut ev: Vec<f64> = block.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

pub fn is_diagonal(a: &Matrix, dim: usize) -> bool {
    (0..dim).all(|i| (0..dim).all(|j| i == j || a[(i, j)] == 0.0))
}

/// Returns `Some(s)` when the leading block equals `s * I`.
pub fn isotropic_value(a: &Matrix, dim: usize) -> Option<f64> {
    if is_diagonal(a, dim) && (1..dim).all(|i| a[(i, i)] == a[(0, 0)]) {
        Some(a[(0, 0)])
    } else {
        None
    }
}

pub fn max_abs_asymmetry(a: &Matrix, dim: usize) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            m = m.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    m
}
