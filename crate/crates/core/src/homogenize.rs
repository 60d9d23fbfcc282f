//! Effective conductivity from the annealed mean-square displacement of
//! free diffusions, `xi . kappa* xi = lim E (X_t . xi)^2 / (2t)`.
//!
//! Samples are realization means: each realization of the medium carries
//! `n_paths_per_realization` paths started at the origin, and the standard
//! error is taken across realizations.

use serde::{Deserialize, Serialize};

use crate::diffusion::{advance, BcRoles, Functional, PathContext, PathState, PathStatus, StepperConfig};
use crate::error::{Error, Result};
use crate::feynman_kac::{estimate_electrode_currents, Bvp, BvpKind, McConfig};
use crate::geometry::{Domain, ElectrodeLayout};
use crate::linalg::{matrix_to_rows, symmetric_eigenvalues, unit, Matrix, Vector};
use crate::media::{realize, KappaValue, MediumKind, MediumSpec};
use crate::parallel::{map_chunks, DEFAULT_CHUNK_SIZE};
use crate::rng::{derive_seed, PathRng};
use crate::stats::{loglog_slope, Accumulator, McEstimate};

const TAG_REALIZATION: u64 = 0x7265616c;

#[derive(Clone, Debug, PartialEq)]
pub struct MsdRequest {
    pub spec: MediumSpec,
    pub directions: Vec<Vector>,
    pub t: f64,
    pub n_realizations: u64,
    pub n_paths_per_realization: u64,
    pub cfg: StepperConfig,
    pub seed: u64,
    pub antithetic: bool,
    pub chunk_size: u64,
    pub workers: usize,
}

impl MsdRequest {
    pub fn new(spec: MediumSpec, t: f64, n_realizations: u64, n_paths_per_realization: u64) -> Self {
        MsdRequest {
            spec,
            directions: Vec::new(),
            t,
            n_realizations,
            n_paths_per_realization,
            cfg: StepperConfig::default(),
            seed: 0,
            antithetic: true,
            chunk_size: DEFAULT_CHUNK_SIZE,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.cfg.validate()?;
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::config("t", "horizon must be positive"));
        }
        if self.n_realizations == 0 || self.n_paths_per_realization == 0 {
            return Err(Error::config("n_realizations", "need at least one realization and one path"));
        }
        if self.n_realizations * self.n_paths_per_realization < 2 {
            return Err(Error::config("n_paths_per_realization", "need at least two paths in total"));
        }
        for (k, xi) in self.directions.iter().enumerate() {
            if (xi.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::config(format!("directions[{k}]"), "direction must be a unit vector"));
            }
            if xi.iter().skip(self.spec.dim).any(|c| *c != 0.0) {
                return Err(Error::config(format!("directions[{k}]"), "direction has too many components"));
            }
        }
        Ok(())
    }

    fn samples_per_realization(&self) -> u64 {
        if self.antithetic {
            self.n_paths_per_realization.div_ceil(2)
        } else {
            self.n_paths_per_realization
        }
    }

    fn paths_per_sample(&self) -> u64 {
        if self.antithetic {
            2
        } else {
            1
        }
    }
}

/// Mean vector and co-moment matrix of vector samples.
#[derive(Clone, Debug, PartialEq)]
struct CoMoments {
    n: u64,
    mean: Vec<f64>,
    c: Vec<f64>,
}

impl CoMoments {
    fn new(k: usize) -> Self {
        CoMoments {
            n: 0,
            mean: vec![0.0; k],
            c: vec![0.0; k * k],
        }
    }

    fn push(&mut self, x: &[f64]) {
        let k = self.mean.len();
        self.n += 1;
        let dx: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, d) in self.mean.iter_mut().zip(&dx) {
            *m += d / self.n as f64;
        }
        for i in 0..k {
            for j in 0..k {
                self.c[i * k + j] += dx[i] * (x[j] - self.mean[j]);
            }
        }
    }

    fn merge(&mut self, o: &CoMoments) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = o.clone();
            return;
        }
        let k = self.mean.len();
        let n = (self.n + o.n) as f64;
        let f = self.n as f64 * o.n as f64 / n;
        let d: Vec<f64> = o.mean.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        for i in 0..k {
            for j in 0..k {
                self.c[i * k + j] += o.c[i * k + j] + d[i] * d[j] * f;
            }
            self.mean[i] += d[i] * o.n as f64 / n;
        }
        self.n += o.n;
    }

    /// Mean and standard error of `w . x`.
    fn linear(&self, w: &[f64]) -> (f64, f64) {
        let k = self.mean.len();
        let mean = w.iter().zip(&self.mean).map(|(a, b)| a * b).sum();
        if self.n < 2 {
            return (mean, f64::INFINITY);
        }
        let mut var = 0.0;
        for i in 0..k {
            for j in 0..k {
                var += w[i] * w[j] * self.c[i * k + j];
            }
        }
        let var = (var / (self.n - 1) as f64).max(0.0);
        (mean, (var / self.n as f64).sqrt())
    }
}

/// Per-realization means of `X_i X_j / (2t)` for every horizon, ordered as
/// `[horizon][i * dim + j]`.
struct MsdMoments {
    dim: usize,
    times: Vec<f64>,
    /// One entry per realization.
    realizations: Vec<Vec<Vec<f64>>>,
    /// Path-level moments, used when there is a single realization.
    paths: Vec<CoMoments>,
}

fn msd_moments(req: &MsdRequest, times: &[f64]) -> Result<MsdMoments> {
    req.validate()?;
    let dim = req.spec.dim;
    let domain = Domain::WholeSpace { dim };
    let horizon = times.iter().cloned().fold(0.0, f64::max);
    let cfg = StepperConfig {
        max_time: horizon,
        ..req.cfg
    };
    let per = req.samples_per_realization();
    let chunk = (req.chunk_size / req.paths_per_sample()).max(1);
    let chunks_per = per.div_ceil(chunk);
    let n_items = req.n_realizations * chunks_per;
    let nq = dim * dim;
    // Each item is one chunk of one realization; returns sums and path accumulators.
    let items = map_chunks(n_items, 1, req.workers, |item, _| -> Result<(Vec<Vec<f64>>, Vec<CoMoments>)> {
        let r = item / chunks_per;
        let c = item % chunks_per;
        let field = realize(&req.spec, derive_seed(req.seed, TAG_REALIZATION, r), 1.0)?;
        let ctx = PathContext::new(&field, &domain, BcRoles::REFLECT, &cfg, Functional::NONE);
        let mut sums = vec![vec![0.0; nq]; times.len()];
        let mut accs = vec![CoMoments::new(nq); times.len()];
        let partners: &[bool] = if req.antithetic { &[false, true] } else { &[false] };
        for k in c * chunk..((c + 1) * chunk).min(per) {
            let mut vals = vec![vec![0.0; nq]; times.len()];
            for &anti in partners {
                let mut rng = PathRng::new(req.seed, r, k, anti);
                let mut state = PathState::new(k, Vector::zeros());
                for (ti, &t) in times.iter().enumerate() {
                    advance(&mut state, &ctx, &mut rng, t, None)?;
                    if state.status != PathStatus::Running {
                        return Err(Error::NumericalFailure {
                            path_id: k,
                            reason: "free path stopped before its horizon".into(),
                        });
                    }
                    for i in 0..dim {
                        for j in 0..dim {
                            vals[ti][i * dim + j] += state.x[i] * state.x[j] / (2.0 * t) / partners.len() as f64;
                        }
                    }
                }
            }
            for ti in 0..times.len() {
                for q in 0..nq {
                    sums[ti][q] += vals[ti][q];
                }
                accs[ti].push(&vals[ti]);
            }
        }
        Ok((sums, accs))
    });
    let mut realizations = Vec::with_capacity(req.n_realizations as usize);
    let mut paths = vec![CoMoments::new(nq); times.len()];
    let mut current = vec![vec![0.0; nq]; times.len()];
    for (item, res) in items.into_iter().enumerate() {
        let (sums, accs) = res?;
        for ti in 0..times.len() {
            for q in 0..nq {
                current[ti][q] += sums[ti][q];
            }
            paths[ti].merge(&accs[ti]);
        }
        if (item as u64 + 1).is_multiple_of(chunks_per) {
            for row in current.iter_mut() {
                for v in row.iter_mut() {
                    *v /= per as f64;
                }
            }
            realizations.push(std::mem::replace(&mut current, vec![vec![0.0; nq]; times.len()]));
        }
    }
    Ok(MsdMoments {
        dim,
        times: times.to_vec(),
        realizations,
        paths,
    })
}

impl MsdMoments {
    fn total_paths(&self, req: &MsdRequest) -> u64 {
        req.n_realizations * req.samples_per_realization() * req.paths_per_sample()
    }

    /// Estimate of the linear functional `sum_q w_q m_q` of the second moments at horizon `ti`.
    fn functional(&self, req: &MsdRequest, ti: usize, w: &[f64]) -> (McEstimate, f64) {
        let eval = |m: &[f64]| m.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        let mut acc = Accumulator::new();
        for r in &self.realizations {
            acc.push(eval(&r[ti]));
        }
        let spread = acc.variance();
        let mut est = McEstimate::from_accumulator(&acc, 1, req.seed);
        est.n_paths = self.total_paths(req);
        if self.realizations.len() < 2 {
            est.stderr = self.paths[ti].linear(w).1;
        }
        (est, spread)
    }

    fn direction_weights(&self, xi: &Vector) -> Vec<f64> {
        let d = self.dim;
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                w[i * d + j] = xi[i] * xi[j];
            }
        }
        w
    }
}

/// `E (X_t . xi)^2 / (2t)` for the first direction of the request.
pub fn estimate_msd_direction(req: &MsdRequest) -> Result<McEstimate> {
    let xi = *req
        .directions
        .first()
        .ok_or_else(|| Error::config("directions", "need a direction"))?;
    let m = msd_moments(req, &[req.t])?;
    Ok(m.functional(req, 0, &m.direction_weights(&xi)).0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveTensorEstimate {
    pub matrix: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Direct `E X_i X_j / (2t)` for comparison with the polarized entries.
    pub covariance: Option<Vec<Vec<f64>>>,
    /// Eigenvalues inside the ellipticity interval up to three standard errors.
    pub within_bounds: bool,
    pub t: f64,
    pub n_realizations: u64,
    pub n_paths: u64,
    pub seed: u64,
}

impl EffectiveTensorEstimate {
    pub fn to_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros();
        for (i, row) in self.matrix.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }
}

/// Full tensor from the diagonal directions and the polarization directions
/// `(e_i + e_j) / sqrt 2`. Any directions in the request are ignored.
pub fn estimate_effective_tensor(req: &MsdRequest, covariance_check: bool) -> Result<EffectiveTensorEstimate> {
    let m = msd_moments(req, &[req.t])?;
    let d = m.dim;
    let mut matrix = vec![vec![0.0; d]; d];
    let mut stderr = vec![vec![0.0; d]; d];
    let mut q = vec![McEstimate::exact(0.0, 0, req.seed); d];
    for i in 0..d {
        let e = unit(d, i);
        q[i] = m.functional(req, 0, &m.direction_weights(&e)).0;
        matrix[i][i] = q[i].mean;
        stderr[i][i] = q[i].stderr;
    }
    for i in 0..d {
        for j in i + 1..d {
            let xi = (unit(d, i) + unit(d, j)) / 2f64.sqrt();
            let mut w = m.direction_weights(&xi);
            let (wi, wj) = (m.direction_weights(&unit(d, i)), m.direction_weights(&unit(d, j)));
            for k in 0..w.len() {
                w[k] -= 0.5 * (wi[k] + wj[k]);
            }
            let est = m.functional(req, 0, &w).0;
            matrix[i][j] = est.mean;
            matrix[j][i] = est.mean;
            stderr[i][j] = est.stderr;
            stderr[j][i] = est.stderr;
        }
    }
    let covariance = covariance_check.then(|| {
        (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        let mut w = vec![0.0; d * d];
                        w[i * d + j] = 0.5;
                        w[j * d + i] += 0.5;
                        m.functional(req, 0, &w).0.mean
                    })
                    .collect()
            })
            .collect()
    });
    let mut mat = Matrix::zeros();
    for i in 0..d {
        for j in 0..d {
            mat[(i, j)] = matrix[i][j];
        }
    }
    let eigenvalues = symmetric_eigenvalues(&mat, d);
    if eigenvalues.iter().any(|v| !(*v > 0.0)) || (0..d).any(|i| !(matrix[i][i] > 0.0)) {
        return Err(Error::NumericalFailure {
            path_id: 0,
            reason: format!("estimated tensor is not positive definite: eigenvalues {eigenvalues:?}"),
        });
    }
    let c = req.spec.bound();
    let slack = 3.0 * stderr.iter().flatten().cloned().fold(0.0, f64::max);
    let within_bounds = eigenvalues.iter().all(|v| *v >= 1.0 / c - slack && *v <= c + slack);
    Ok(EffectiveTensorEstimate {
        matrix,
        stderr,
        eigenvalues,
        covariance,
        within_bounds,
        t: req.t,
        n_realizations: req.n_realizations,
        n_paths: m.total_paths(req),
        seed: req.seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
    pub reference: f64,
    pub abs_error: f64,
    /// Variance of the realization means.
    pub realization_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCurve {
    pub direction: Vec<f64>,
    pub rows: Vec<CurveRow>,
    /// Least-squares slope of `log |error|` against `log t`.
    pub slope: f64,
}

impl ConvergenceCurve {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,mean,stderr,reference,abs_error")?;
        for r in &self.rows {
            writeln!(w, "{},{:.12e},{:.12e},{:.12e},{:.12e}", r.t, r.mean, r.stderr, r.reference, r.abs_error)?;
        }
        Ok(())
    }
}

/// MSD estimates along the first request direction at every horizon of
/// `t_grid`. All horizons share the same paths, read off at successive times.
pub fn convergence_curve(req: &MsdRequest, t_grid: &[f64], reference: f64) -> Result<ConvergenceCurve> {
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) || t_grid[0] <= 0.0 {
        return Err(Error::config("t_grid", "horizons must be positive and increasing"));
    }
    let xi = *req
        .directions
        .first()
        .ok_or_else(|| Error::config("directions", "need a direction"))?;
    let m = msd_moments(req, t_grid)?;
    let w = m.direction_weights(&xi);
    let rows: Vec<CurveRow> = m
        .times
        .iter()
        .enumerate()
        .map(|(ti, &t)| {
            let (est, spread) = m.functional(req, ti, &w);
            CurveRow {
                t,
                mean: est.mean,
                stderr: est.stderr,
                reference,
                abs_error: (est.mean - reference).abs(),
                realization_variance: spread,
            }
        })
        .collect();
    let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.abs_error.max(f64::MIN_POSITIVE)).collect();
    let slope = if rows.len() >= 2 { loglog_slope(&ts, &errs) } else { f64::NAN };
    Ok(ConvergenceCurve {
        direction: xi.iter().take(req.spec.dim).cloned().collect(),
        rows,
        slope,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub currents: Vec<McEstimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSweep {
    pub rows: Vec<SweepRow>,
    /// Currents of the constant medium `kappa*` with the same random numbers.
    pub homogenized: Option<Vec<McEstimate>>,
}

/// Mixed-CEM electrode currents for one realization of `spec` at each scale
/// `epsilon`, plus the currents of the homogenized medium when `kappa_star`
/// is given.
#[allow(clippy::too_many_arguments)]
pub fn epsilon_sweep_currents(
    domain: &Domain,
    spec: &MediumSpec,
    layout: &ElectrodeLayout,
    epsilons: &[f64],
    kappa_star: Option<&Matrix>,
    mc: &McConfig,
    cfg: &StepperConfig,
    nodes_per_electrode: usize,
) -> Result<EpsilonSweep> {
    if !matches!(domain, Domain::Hemisphere { .. }) {
        return Err(Error::Precondition("the sweep runs on a hemisphere".into()));
    }
    if epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::config("epsilons", "scales must be positive"));
    }
    let kind = BvpKind::MixedCem;
    let mut rows = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let field = realize(spec, mc.seed, epsilon)?;
        let bvp = Bvp {
            kind: &kind,
            domain,
            field: &field,
            layout: Some(layout),
        };
        rows.push(SweepRow {
            epsilon,
            currents: estimate_electrode_currents(&bvp, mc, cfg, nodes_per_electrode)?,
        });
    }
    let homogenized = match kappa_star {
        Some(k) => {
            let star = MediumSpec::new(
                spec.dim,
                MediumKind::Constant {
                    kappa: KappaValue::Matrix(matrix_to_rows(k, spec.dim)),
                },
            );
            let field = realize(&star, mc.seed, 1.0)?;
            let bvp = Bvp {
                kind: &kind,
                domain,
                field: &field,
                layout: Some(layout),
            };
            Some(estimate_electrode_currents(&bvp, mc, cfg, nodes_per_electrode)?)
        }
        None => None,
    };
    Ok(EpsilonSweep { rows, homogenized })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn co_moments_merge_like_a_single_pass() {
        let xs: Vec<[f64; 2]> = (0..50).map(|k| [(k as f64 * 0.7).sin(), (k as f64 * 1.3).cos() + 0.1 * k as f64]).collect();
        let mut all = CoMoments::new(2);
        xs.iter().for_each(|x| all.push(x));
        let mut a = CoMoments::new(2);
        let mut b = CoMoments::new(2);
        xs[..17].iter().for_each(|x| a.push(x));
        xs[17..].iter().for_each(|x| b.push(x));
        a.merge(&b);
        for (p, q) in a.c.iter().zip(&all.c) {
            assert!((p - q).abs() < 1e-10);
        }
        let (m1, s1) = a.linear(&[1.0, -2.0]);
        let (m2, s2) = all.linear(&[1.0, -2.0]);
        assert!((m1 - m2).abs() < 1e-12 && (s1 - s2).abs() < 1e-12);
        let direct: Vec<f64> = xs.iter().map(|x| x[0] - 2.0 * x[1]).collect();
        let mean = direct.iter().sum::<f64>() / 50.0;
        let var = direct.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 49.0;
        assert!((s2 - (var / 50.0).sqrt()).abs() < 1e-12);
    }
}
