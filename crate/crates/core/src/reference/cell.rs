//! Periodic cell problem on a uniform grid.
//!
//! Cell conductivities are diagonal and constant per grid cell; face values
//! are harmonic means, which is exact for laminates aligned with the grid.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::media::ConductivityField;

use super::cg::{conjugate_gradient, CgReport, CsrMatrix};

#[derive(Clone, Debug)]
pub struct CellTensor {
    pub tensor: Matrix,
    pub report: CgReport,
}

fn unflatten(mut c: usize, n: usize, dim: usize) -> [usize; 3] {
    let mut idx = [0; 3];
    for slot in idx.iter_mut().take(dim) {
        *slot = c % n;
        c /= n;
    }
    idx
}

fn flatten(idx: &[usize; 3], n: usize, dim: usize) -> usize {
    (0..dim).rev().fold(0, |acc, k| acc * n + idx[k])
}

fn neighbour(c: usize, axis: usize, n: usize, dim: usize) -> usize {
    let mut idx = unflatten(c, n, dim);
    idx[axis] = (idx[axis] + 1) % n;
    flatten(&idx, n, dim)
}

/// Effective tensor of the periodic medium with `n^dim` cells. `kappa(idx)`
/// returns the diagonal conductivity of cell `idx`.
pub fn effective_tensor_from_cells(
    dim: usize,
    n: usize,
    kappa: impl Fn([usize; 3]) -> [f64; 3],
) -> Result<CellTensor> {
    if !(1..=3).contains(&dim) || n < 2 {
        return Err(Error::Precondition("cell grid needs dim in 1..=3 and n >= 2".into()));
    }
    let cells = n.pow(dim as u32);
    let kap: Vec<[f64; 3]> = (0..cells).map(|c| kappa(unflatten(c, n, dim))).collect();
    if kap.iter().any(|k| k[..dim].iter().any(|v| !(*v > 0.0 && v.is_finite()))) {
        return Err(Error::Precondition("cell conductivities must be positive".into()));
    }
    // Face conductivity between cell c and its upper neighbour along each axis.
    let face: Vec<[f64; 3]> = (0..cells)
        .map(|c| {
            let mut f = [0.0; 3];
            for (a, fa) in f.iter_mut().enumerate().take(dim) {
                let b = neighbour(c, a, n, dim);
                *fa = 2.0 / (1.0 / kap[c][a] + 1.0 / kap[b][a]);
            }
            f
        })
        .collect();
    let mut trip = Vec::with_capacity(cells * (1 + 4 * dim));
    for c in 0..cells {
        for a in 0..dim {
            let b = neighbour(c, a, n, dim);
            let t = face[c][a];
            trip.extend([(c, c, t), (b, b, t), (c, b, -t), (b, c, -t)]);
        }
    }
    let m = CsrMatrix::from_triplets(cells, trip);
    let weights = vec![1.0; cells];
    let h = 1.0 / n as f64;
    let mut tensor = Matrix::zeros();
    let mut worst = CgReport {
        iterations: 0,
        relative_residual: 0.0,
    };
    for k in 0..dim {
        // Divergence of kappa e_k, integrated over each cell.
        let mut rhs = vec![0.0; cells];
        for c in 0..cells {
            let b = neighbour(c, k, n, dim);
            rhs[c] += h * face[c][k];
            rhs[b] -= h * face[c][k];
        }
        let (chi, report) = conjugate_gradient(&m, &rhs, 1e-12, 20 * cells, Some(&weights))?;
        if report.relative_residual > 1e-10 {
            return Err(Error::Solver(format!(
                "cell problem residual {:e} above 1e-10",
                report.relative_residual
            )));
        }
        if report.relative_residual > worst.relative_residual || report.iterations > worst.iterations {
            worst = CgReport {
                iterations: worst.iterations.max(report.iterations),
                relative_residual: worst.relative_residual.max(report.relative_residual),
            };
        }
        for j in 0..dim {
            let mut s = 0.0;
            for c in 0..cells {
                let b = neighbour(c, j, n, dim);
                let grad = (chi[b] - chi[c]) / h + if j == k { 1.0 } else { 0.0 };
                s += face[c][j] * grad;
            }
            tensor[(j, k)] = s / cells as f64;
        }
    }
    let tensor = (tensor + tensor.transpose()) * 0.5;
    Ok(CellTensor { tensor, report: worst })
}

/// Effective tensor of the periodized window `[origin, origin + window)^dim`
/// of a realized field, sampled at `n` cell centres per side. Lengths are
/// rescaled to the unit cell, which leaves the tensor unchanged.
pub fn fd_effective_tensor(field: &ConductivityField, origin: &Vector, window: f64, n: usize) -> Result<CellTensor> {
    let dim = field.dim();
    let h = window / n as f64;
    effective_tensor_from_cells(dim, n, |idx| {
        let mut x = *origin;
        for a in 0..dim {
            x[a] += (idx[a] as f64 + 0.5) * h;
        }
        let k = field.kappa_at(&x);
        [k[(0, 0)], k[(1, 1)], k[(2, 2)]]
    })
}
