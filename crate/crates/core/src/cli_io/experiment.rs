//! Experiment runner: results, provenance and artifacts of one configuration.

use std::path::Path;
use std::time::Instant;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::config::{point, ExperimentKind, OracleKind, RunConfig};
use crate::error::{Error, Result};
use crate::feynman_kac::{
    estimate_continuum, estimate_electrode_currents, estimate_potential, Bvp, BvpKind, McConfig,
};
use crate::geometry::ElectrodeLayout;
use crate::homogenize::{convergence_curve, epsilon_sweep_currents, estimate_effective_tensor, MsdRequest};
use crate::linalg::{isotropic_value, matrix_to_rows, Vector};
use crate::media::{ConductivityField, KappaValue, LayerLaw, MediumKind, MediumSpec};
use crate::reference::{checkerboard_symmetric, fd_effective_tensor, fd_solve, layered_effective, FdBc, FdProblem};
use crate::rng::derive_seed;
use crate::stats::McEstimate;

const TAG_PROBE: u64 = 0x70726f62;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

/// Everything a run produces. `results` depends only on the configuration;
/// wall time is kept apart so that results are byte-reproducible.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub results: Value,
    /// Named auxiliary files (CSV curves, FD grids).
    pub artifacts: Vec<(String, Vec<u8>)>,
    pub elapsed: f64,
}

/// SHA-256 of the resolved configuration, worker count and output path excluded.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let bytes = serde_json::to_vec(cfg).map_err(|e| Error::Data(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// The validated configuration with every default filled in.
pub fn resolved_config(cfg: &RunConfig) -> Result<Value> {
    serde_json::to_value(cfg).map_err(|e| Error::Data(e.to_string()))
}

/// Machine-readable record of a failure.
pub fn error_record(err: &Error) -> Value {
    let mut rec = json!({
        "error": err.kind(),
        "message": err.to_string(),
        "exit_code": err.exit_code(),
    });
    if let Error::Config { path, .. } = err {
        rec["path"] = json!(path);
    }
    if let Error::NumericalFailure { path_id, .. } = err {
        rec["path_id"] = json!(path_id);
    }
    rec
}

/// `xi . kappa* xi` for media whose effective tensor has a closed form.
pub fn closed_form_reference(spec: &MediumSpec, xi: &Vector) -> Option<f64> {
    let d = spec.dim;
    let scalars = |values: &[KappaValue]| -> Option<Vec<f64>> {
        values
            .iter()
            .map(|v| isotropic_value(&v.to_matrix(d), d))
            .collect()
    };
    match &spec.kind {
        MediumKind::Constant { kappa } => {
            let k = kappa.to_matrix(d);
            Some(xi.dot(&(k * xi)))
        }
        MediumKind::Layered { axis, values, law, .. } => {
            let v = scalars(values)?;
            let fractions = match law {
                LayerLaw::Alternating => vec![1.0 / v.len() as f64; v.len()],
                LayerLaw::Iid { probabilities } => probabilities.clone(),
            };
            let e = layered_effective(&v, &fractions).ok()?;
            let across = xi[*axis] * xi[*axis];
            Some(across * e.perpendicular + (1.0 - across) * e.parallel)
        }
        MediumKind::Checkerboard {
            values, probabilities, ..
        } if d == 2 && values.len() == 2 && probabilities.len() == 2 && probabilities[0] == probabilities[1] => {
            let v = scalars(values)?;
            checkerboard_symmetric(v[0], v[1]).ok()
        }
        _ => None,
    }
}

struct Context<'a> {
    cfg: &'a RunConfig,
    workers: usize,
    hash: String,
}

impl Context<'_> {
    fn mc(&self) -> McConfig {
        McConfig {
            workers: self.workers,
            ..self.cfg.mc.clone()
        }
    }

    fn msd_request(&self, t: f64) -> Result<MsdRequest> {
        let msd = self.cfg.msd()?;
        let mut req = MsdRequest::new(self.cfg.medium.clone(), t, msd.n_realizations, msd.n_paths_per_realization);
        req.directions = self.cfg.directions()?;
        req.cfg = self.cfg.stepper;
        req.seed = self.cfg.seed;
        req.antithetic = msd.antithetic;
        req.chunk_size = self.cfg.mc.chunk_size;
        req.workers = self.workers;
        Ok(req)
    }
}

fn estimate_json(e: &McEstimate) -> Value {
    json!({ "mean": e.mean, "stderr": e.stderr, "n_paths": e.n_paths })
}

/// Runs a validated configuration.
pub fn run_experiment(cfg: &RunConfig, workers: usize) -> Result<RunOutput> {
    let start = Instant::now();
    let ctx = Context {
        cfg,
        workers: workers.max(1),
        hash: config_hash(cfg)?,
    };
    let mut artifacts = Vec::new();
    let body = match cfg.experiment {
        ExperimentKind::Solve => run_solve(&ctx)?,
        ExperimentKind::Homogenize => run_homogenize(&ctx)?,
        ExperimentKind::Convergence => run_convergence(&ctx, &mut artifacts)?,
        ExperimentKind::Oracle => run_oracle(&ctx, &mut artifacts)?,
    };
    let results = json!({
        "experiment": cfg.experiment.name(),
        "provenance": {
            "config_hash": ctx.hash,
            "seed": cfg.seed,
            "version": VERSION,
            "chunk_size": cfg.mc.chunk_size,
            "config": resolved_config(cfg)?,
        },
        "results": body,
    });
    Ok(RunOutput {
        results,
        artifacts,
        elapsed: start.elapsed().as_secs_f64(),
    })
}

fn run_solve(ctx: &Context) -> Result<Value> {
    let cfg = ctx.cfg;
    let domain = cfg.domain()?;
    let field = cfg.field()?;
    let layout = cfg.layout()?;
    let kind = cfg
        .problem
        .as_ref()
        .ok_or_else(|| Error::config("problem", "this experiment needs a problem"))?;
    let bvp = Bvp {
        kind,
        domain: &domain,
        field: &field,
        layout: layout.as_ref(),
    };
    let mc = ctx.mc();
    let mut records = Vec::new();
    for (k, x) in cfg.probe_points()?.iter().enumerate() {
        let probe_mc = mc.with_key(derive_seed(mc.stream_key, TAG_PROBE, k as u64));
        let mut rec = json!({
            "kind": kind.name(),
            "x": x.iter().take(cfg.medium.dim).cloned().collect::<Vec<f64>>(),
            "h": cfg.stepper.h,
            "seed": cfg.seed,
            "config_hash": ctx.hash,
        });
        let est = if let BvpKind::Continuum { .. } = kind {
            let c = estimate_continuum(x, &bvp, &probe_mc, &cfg.stepper)?;
            rec["horizon"] = json!(c.horizon);
            rec["converged"] = json!(c.converged);
            c.estimate
        } else {
            estimate_potential(x, &bvp, &probe_mc, &cfg.stepper)?
        };
        rec["mean"] = json!(est.mean);
        rec["stderr"] = json!(est.stderr);
        rec["n_paths"] = json!(est.n_paths);
        records.push(rec);
    }
    let mut out = json!({ "probes": records });
    if let Some(c) = &cfg.currents {
        let nodes = c.nodes_per_electrode.unwrap_or(1);
        let currents = estimate_electrode_currents(&bvp, &mc, &cfg.stepper, nodes)?;
        let total: f64 = currents.iter().map(|j| j.mean).sum();
        out["currents"] = json!({
            "nodes_per_electrode": nodes,
            "electrodes": currents.iter().map(estimate_json).collect::<Vec<_>>(),
            "sum": total,
        });
    }
    Ok(out)
}

fn run_homogenize(ctx: &Context) -> Result<Value> {
    let cfg = ctx.cfg;
    let mut out = json!({});
    let mut estimated = None;
    if let Some(msd) = &cfg.msd {
        let tensor = estimate_effective_tensor(&ctx.msd_request(msd.t)?, msd.covariance_check)?;
        out["tensor"] = serde_json::to_value(&tensor).map_err(|e| Error::Data(e.to_string()))?;
        estimated = Some(tensor.to_matrix());
    }
    if let Some(s) = &cfg.sweep {
        let domain = cfg.domain()?;
        let layout = cfg
            .layout()?
            .ok_or_else(|| Error::config("layout", "the sweep needs an electrode layout"))?;
        let star = match &s.kappa_star {
            Some(k) => k.to_matrix(cfg.medium.dim),
            None => estimated.ok_or_else(|| Error::config("sweep.kappa_star", "no tensor to homogenize with"))?,
        };
        let nodes = s.nodes_per_electrode.unwrap_or(1);
        let sweep = epsilon_sweep_currents(&domain, &cfg.medium, &layout, &s.epsilons, Some(&star), &ctx.mc(), &cfg.stepper, nodes)?;
        let hom = sweep.homogenized.clone().unwrap_or_default();
        let rows: Vec<Value> = sweep
            .rows
            .iter()
            .map(|r| {
                let gap = r
                    .currents
                    .iter()
                    .zip(&hom)
                    .map(|(a, b)| (a.mean - b.mean).powi(2))
                    .sum::<f64>()
                    .sqrt();
                json!({
                    "epsilon": r.epsilon,
                    "currents": r.currents.iter().map(estimate_json).collect::<Vec<_>>(),
                    "distance_to_homogenized": gap,
                })
            })
            .collect();
        out["sweep"] = json!({
            "kappa_star": matrix_to_rows(&star, cfg.medium.dim),
            "nodes_per_electrode": nodes,
            "rows": rows,
            "homogenized": hom.iter().map(estimate_json).collect::<Vec<_>>(),
        });
    }
    Ok(out)
}

fn run_convergence(ctx: &Context, artifacts: &mut Vec<(String, Vec<u8>)>) -> Result<Value> {
    let msd = ctx.cfg.msd()?;
    let reference = ctx.cfg.reference()?;
    let req = ctx.msd_request(msd.t_grid[0])?;
    let curve = convergence_curve(&req, &msd.t_grid, reference)?;
    let mut csv = Vec::new();
    curve.write_csv(&mut csv)?;
    artifacts.push(("convergence.csv".to_string(), csv));
    let mut out = serde_json::to_value(&curve).map_err(|e| Error::Data(e.to_string()))?;
    out["reference"] = json!(reference);
    Ok(out)
}

fn fd_boundary<'a>(kind: &'a BvpKind, layout: Option<&'a ElectrodeLayout>, data: &'a (dyn Fn(&Vector) -> f64 + Sync)) -> Result<(FdBc<'a>, FdBc<'a>, f64)> {
    let electrodes = || layout.map(FdBc::Electrodes).ok_or_else(|| Error::config("layout", "electrode problems need a layout"));
    Ok(match kind {
        BvpKind::Dirichlet { .. } => (FdBc::Dirichlet(data), FdBc::Dirichlet(data), 0.0),
        BvpKind::Continuum { .. } => (FdBc::Flux(data), FdBc::Flux(data), 0.0),
        BvpKind::RobinKilled { alpha, .. } => (FdBc::Flux(data), FdBc::Flux(data), *alpha),
        BvpKind::Cem => (electrodes()?, electrodes()?, 0.0),
        BvpKind::MixedCem => (electrodes()?, FdBc::Dirichlet(data), 0.0),
    })
}

fn run_oracle(ctx: &Context, artifacts: &mut Vec<(String, Vec<u8>)>) -> Result<Value> {
    let cfg = ctx.cfg;
    let o = cfg
        .oracle
        .as_ref()
        .ok_or_else(|| Error::config("oracle", "this experiment needs an oracle section"))?;
    let field: ConductivityField = cfg.field()?;
    match o.kind {
        OracleKind::Solve => {
            let domain = cfg.domain()?;
            let layout = cfg.layout()?;
            let kind = cfg
                .problem
                .as_ref()
                .ok_or_else(|| Error::config("problem", "this experiment needs a problem"))?;
            let data = move |y: &Vector| match kind {
                BvpKind::Dirichlet { phi } => phi.eval(y),
                BvpKind::Continuum { flux } | BvpKind::RobinKilled { flux, .. } => flux.eval(y),
                BvpKind::Cem | BvpKind::MixedCem => 0.0,
            };
            let (accessible, inaccessible, alpha) = fd_boundary(kind, layout.as_ref(), &data)?;
            let sol = fd_solve(
                &FdProblem {
                    domain: &domain,
                    field: &field,
                    accessible,
                    inaccessible,
                    alpha,
                    source: None,
                },
                o.nr,
                o.ntheta,
            )?;
            let mut csv = Vec::new();
            sol.write_csv(&mut csv)?;
            artifacts.push(("fd_grid.csv".to_string(), csv));
            let probes: Vec<Value> = cfg
                .probe_points()?
                .iter()
                .map(|x| json!({ "x": [x[0], x[1]], "value": sol.value_at(x) }))
                .collect();
            let mut out = json!({
                "kind": kind.name(),
                "nr": o.nr,
                "ntheta": o.ntheta,
                "mean": sol.mean(),
                "probes": probes,
                "cg": { "iterations": sol.report.iterations, "relative_residual": sol.report.relative_residual },
            });
            if let Some(l) = &layout {
                out["currents"] = json!(sol.electrode_currents(&domain, l));
            }
            Ok(out)
        }
        OracleKind::CellTensor => {
            let origin = point(&o.origin, cfg.medium.dim, "oracle.origin")?;
            let cell = fd_effective_tensor(&field, &origin, o.window, o.cells)?;
            Ok(json!({
                "tensor": matrix_to_rows(&cell.tensor, cfg.medium.dim),
                "cells": o.cells,
                "window": o.window,
                "cg": { "iterations": cell.report.iterations, "relative_residual": cell.report.relative_residual },
            }))
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn pretty(v: &Value) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(v).map_err(|e| Error::Data(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes `results.json`, the artifacts and `timing.json` into `dir`.
pub fn write_outputs(dir: &Path, out: &RunOutput, workers: usize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    write_file(&dir.join("results.json"), &pretty(&out.results)?)?;
    for (name, bytes) in &out.artifacts {
        write_file(&dir.join(name), bytes)?;
    }
    let timing = json!({ "elapsed_seconds": out.elapsed, "workers": workers });
    write_file(&dir.join("timing.json"), &pretty(&timing)?)
}

/// Writes `error.json` into `dir`, best effort.
pub fn write_error(dir: &Path, err: &Error) {
    if std::fs::create_dir_all(dir).is_ok() {
        if let Ok(bytes) = pretty(&error_record(err)) {
            let _ = std::fs::write(dir.join("error.json"), bytes);
        }
    }
}
