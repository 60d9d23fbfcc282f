//! Sparse symmetric systems and Jacobi-preconditioned conjugate gradients.

use crate::error::{Error, Result};

/// Compressed sparse rows.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for (i, di) in d.iter_mut().enumerate() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.cols[k] == i {
                    *di += self.vals[k];
                }
            }
        }
        d
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// `|b - A x| / |b|`.
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Removes the weighted mean: `x -= (w . x / sum w)` on every entry.
fn project(x: &mut [f64], weights: &[f64]) {
    let m = dot(x, weights) / weights.iter().sum::<f64>();
    x.iter_mut().for_each(|v| *v -= m);
}

/// Solves `A x = b` for symmetric positive (semi)definite `A`.
///
/// With `nullspace_weights`, `A` is singular with constant null space: the
/// right-hand side must have zero sum, and the iterate is kept in the
/// subspace `w . x = 0`.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    nullspace_weights: Option<&[f64]>,
) -> Result<(Vec<f64>, CgReport)> {
    let n = a.n;
    let mut b = b.to_vec();
    let bnorm0 = dot(&b, &b).sqrt();
    if nullspace_weights.is_some() {
        let sum: f64 = b.iter().sum();
        let scale = b.iter().map(|v| v.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
        if sum.abs() > 1e-8 * scale {
            return Err(Error::Solver(format!(
                "singular system without compatibility: right-hand side sums to {sum:e}"
            )));
        }
        let m = sum / n as f64;
        b.iter_mut().for_each(|v| *v -= m);
    }
    let bnorm = dot(&b, &b).sqrt();
    if bnorm == 0.0 || bnorm0 == 0.0 {
        return Ok((
            vec![0.0; n],
            CgReport {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let diag = a.diagonal();
    if diag.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::Solver("matrix has a nonpositive diagonal entry".into()));
    }
    let mut x = vec![0.0; n];
    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut it = 0;
    let mut res = 1.0;
    while it < max_iter {
        a.mul(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        it += 1;
        res = dot(&r, &r).sqrt() / bnorm;
        if res <= tol {
            break;
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if let Some(w) = nullspace_weights {
        project(&mut x, w);
    }
    // True residual, not the recursively updated one.
    a.mul(&x, &mut ap);
    let true_res = ap.iter().zip(&b).map(|(ax, b)| (b - ax).powi(2)).sum::<f64>().sqrt() / bnorm;
    // Rounding can leave the true residual somewhat above a tight target;
    // callers hold it to their own bound.
    if !(res <= tol || true_res <= tol) {
        return Err(Error::Solver(format!(
            "conjugate gradients stalled after {it} iterations with residual {true_res:e}"
        )));
    }
    Ok((
        x,
        CgReport {
            iterations: it,
            relative_residual: true_res,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize, dirichlet: bool) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i, i, 1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i, i, 1.0));
            }
        }
        if dirichlet {
            t.push((0, 0, 1.0));
        }
        CsrMatrix::from_triplets(n, t)
    }

    #[test]
    fn solves_a_dirichlet_chain() {
        let a = laplacian_1d(50, true);
        let mut b = vec![0.0; 50];
        b[0] = 1.0;
        let (x, rep) = conjugate_gradient(&a, &b, 1e-12, 1000, None).unwrap();
        assert!(rep.relative_residual <= 1e-11);
        // Grounded at the left, free at the right: constant solution 1.
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn singular_system_needs_compatibility() {
        let a = laplacian_1d(20, false);
        let w = vec![1.0; 20];
        let mut b = vec![0.0; 20];
        b[0] = 1.0;
        assert!(conjugate_gradient(&a, &b, 1e-12, 1000, Some(&w)).is_err());
        b[19] = -1.0;
        let (x, _) = conjugate_gradient(&a, &b, 1e-12, 1000, Some(&w)).unwrap();
        assert!(x.iter().sum::<f64>().abs() < 1e-9);
        assert!((x[0] - x[19] - 19.0).abs() < 1e-8);
    }
}
