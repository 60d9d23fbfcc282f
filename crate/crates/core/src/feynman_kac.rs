//! Monte Carlo estimators for boundary-value problems of `div(kappa grad u) = 0`.
//!
//! | problem      | representation                                  |
//! |--------------|-------------------------------------------------|
//! | Dirichlet    | `u(x) = E phi(X_tau)`, absorbed on all of the boundary |
//! | continuum    | `u(x) = lim_t E int_0^t f dL` (zero-mean solution) |
//! | killed Robin | `u(x) = E int_0^inf exp(-alpha t) f dL`         |
//! | CEM          | `u(x) = E int_0^inf exp(-int g dL) f dL`        |
//! | mixed CEM    | as CEM, stopped at the first hit of the inaccessible part |

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diffusion::{
    advance, simulate_path, BcRoles, BoundaryData, Functional, PathContext, PathState,
    StepperConfig,
};
use crate::error::{Error, Result};
use crate::geometry::{electrode_area, electrode_nodes, BoundaryPart, Domain, ElectrodeLayout};
use crate::linalg::Vector;
use crate::media::ConductivityField;
use crate::parallel::{map_chunks, map_owned, DEFAULT_CHUNK_SIZE};
use crate::rng::{derive_seed, PathRng};
use crate::stats::{Accumulator, McEstimate};

/// Scalar data on the boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryFunction {
    Zero,
    Constant {
        value: f64,
    },
    /// `a . y + b`.
    Linear {
        coefficients: Vec<f64>,
        #[serde(default)]
        constant: f64,
    },
    /// `amplitude * cos(harmonic * theta)` with `theta` the polar angle in the first two coordinates.
    AngularCosine {
        #[serde(default = "one_u32")]
        harmonic: u32,
        #[serde(default = "one_f64")]
        amplitude: f64,
    },
}

fn one_u32() -> u32 {
    1
}

fn one_f64() -> f64 {
    1.0
}

impl BoundaryFunction {
    pub fn eval(&self, y: &Vector) -> f64 {
        match self {
            BoundaryFunction::Zero => 0.0,
            BoundaryFunction::Constant { value } => *value,
            BoundaryFunction::Linear {
                coefficients,
                constant,
            } => coefficients.iter().enumerate().map(|(i, a)| a * y[i]).sum::<f64>() + constant,
            BoundaryFunction::AngularCosine { harmonic, amplitude } => {
                amplitude * (*harmonic as f64 * y[1].atan2(y[0])).cos()
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            BoundaryFunction::Zero => true,
            BoundaryFunction::Constant { value } => *value == 0.0,
            BoundaryFunction::Linear {
                coefficients,
                constant,
            } => *constant == 0.0 && coefficients.iter().all(|a| *a == 0.0),
            BoundaryFunction::AngularCosine { amplitude, .. } => *amplitude == 0.0,
        }
    }

    /// Upper bound of `|f|` on the boundary of `domain`.
    pub fn sup_bound(&self, domain: &Domain) -> f64 {
        match self {
            BoundaryFunction::Zero => 0.0,
            BoundaryFunction::Constant { value } => value.abs(),
            BoundaryFunction::Linear {
                coefficients,
                constant,
            } => {
                let a: f64 = coefficients.iter().map(|c| c * c).sum::<f64>().sqrt();
                if a == 0.0 {
                    constant.abs()
                } else {
                    a * domain.scale() + constant.abs()
                }
            }
            BoundaryFunction::AngularCosine { amplitude, .. } => amplitude.abs(),
        }
    }

    /// `int f dsigma` over the whole boundary by midpoint quadrature.
    pub fn boundary_integral(&self, domain: &Domain) -> Result<f64> {
        Ok(domain
            .boundary_nodes(512)?
            .iter()
            .map(|(n, _)| n.weight * self.eval(&n.point))
            .sum())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BvpKind {
    Dirichlet { phi: BoundaryFunction },
    Continuum { flux: BoundaryFunction },
    RobinKilled { flux: BoundaryFunction, alpha: f64 },
    Cem,
    MixedCem,
}

impl BvpKind {
    pub fn name(&self) -> &'static str {
        match self {
            BvpKind::Dirichlet { .. } => "dirichlet",
            BvpKind::Continuum { .. } => "continuum",
            BvpKind::RobinKilled { .. } => "robin_killed",
            BvpKind::Cem => "cem",
            BvpKind::MixedCem => "mixed_cem",
        }
    }
}

/// A boundary-value problem on a realized medium.
#[derive(Clone, Copy)]
pub struct Bvp<'a> {
    pub kind: &'a BvpKind,
    pub domain: &'a Domain,
    pub field: &'a ConductivityField,
    pub layout: Option<&'a ElectrodeLayout>,
}

impl<'a> Bvp<'a> {
    fn layout(&self) -> Result<&'a ElectrodeLayout> {
        self.layout
            .ok_or_else(|| Error::Precondition(format!("{} problem needs an electrode layout", self.kind.name())))
    }

    /// Physics preconditions: compatibility, grounding, domain parts.
    pub fn check(&self) -> Result<()> {
        match self.kind {
            BvpKind::Dirichlet { .. } => {
                self.domain.signed_distance(&Vector::zeros())?;
            }
            BvpKind::Continuum { flux } => {
                let total = flux.boundary_integral(self.domain)?;
                if total.abs() > 1e-10 {
                    return Err(Error::Precondition(format!(
                        "compatibility violated: boundary integral of the flux is {total:e}"
                    )));
                }
            }
            BvpKind::RobinKilled { alpha, .. } => {
                if !(*alpha > 0.0) {
                    return Err(Error::Precondition(format!("killing rate must be positive, got {alpha}")));
                }
                self.domain.signed_distance(&Vector::zeros())?;
            }
            BvpKind::Cem => {
                self.layout()?.check_grounding()?;
                self.domain.signed_distance(&Vector::zeros())?;
            }
            BvpKind::MixedCem => {
                self.layout()?.check_grounding()?;
                if !self.domain.has_inaccessible_part() {
                    return Err(Error::Precondition(
                        "mixed problem needs a domain with an inaccessible boundary part".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Monte Carlo budget and truncation tolerances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: u64,
    pub seed: u64,
    /// Key of the random streams; distinct keys give independent estimates.
    pub stream_key: u64,
    pub antithetic: bool,
    pub chunk_size: u64,
    #[serde(skip)]
    pub workers: usize,
    /// Gauge threshold below which CEM paths stop.
    pub tol_gauge: f64,
    /// Bound on the neglected tail of the killed functional.
    pub tol_killed: f64,
    /// Continuum truncation tolerance; `None` means a quarter of the standard error.
    pub tol_trunc: Option<f64>,
    /// First continuum horizon, doubled until the estimate settles.
    pub t_initial: f64,
    pub max_doublings: u32,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n_paths: 10_000,
            seed: 0,
            stream_key: 0,
            antithetic: true,
            chunk_size: DEFAULT_CHUNK_SIZE,
            workers: 1,
            tol_gauge: 1e-8,
            tol_killed: 1e-4,
            tol_trunc: None,
            t_initial: 1.0,
            max_doublings: 6,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::config("mc.n_paths", "need at least 2 paths"));
        }
        if self.chunk_size == 0 {
            return Err(Error::config("mc.chunk_size", "must be positive"));
        }
        if !(self.tol_gauge >= 0.0) || !(self.tol_killed > 0.0) {
            return Err(Error::config("mc.tol_gauge", "tolerances must be nonnegative"));
        }
        if !(self.t_initial > 0.0) {
            return Err(Error::config("mc.t_initial", "must be positive"));
        }
        Ok(())
    }

    pub fn with_key(&self, key: u64) -> McConfig {
        McConfig {
            stream_key: key,
            ..self.clone()
        }
    }

    fn paths_per_sample(&self) -> u64 {
        if self.antithetic {
            2
        } else {
            1
        }
    }

    fn n_samples(&self) -> u64 {
        self.n_paths.div_ceil(self.paths_per_sample()).max(2)
    }

    fn rng(&self, sample: u64, anti: bool) -> PathRng {
        PathRng::new(self.seed, self.stream_key, sample, anti)
    }
}

/// Runs `payoff` over all samples; an antithetic sample averages the two partner paths.
pub fn run_samples<F>(mc: &McConfig, payoff: F) -> Result<McEstimate>
where
    F: Fn(&mut PathRng, u64) -> Result<f64> + Sync + Send,
{
    let start = Instant::now();
    let pps = mc.paths_per_sample();
    let n = mc.n_samples();
    let chunk = (mc.chunk_size / pps).max(1);
    let chunks = map_chunks(n, chunk, mc.workers, |s, e| -> Result<Accumulator> {
        let mut acc = Accumulator::new();
        for k in s..e {
            let v = if mc.antithetic {
                let a = payoff(&mut mc.rng(k, false), 2 * k)?;
                let b = payoff(&mut mc.rng(k, true), 2 * k + 1)?;
                0.5 * (a + b)
            } else {
                payoff(&mut mc.rng(k, false), k)?
            };
            acc.push(v);
        }
        Ok(acc)
    });
    let mut total = Accumulator::new();
    for c in chunks {
        total.merge(&c?);
    }
    let mut est = McEstimate::from_accumulator(&total, pps, mc.seed);
    est.elapsed = start.elapsed().as_secs_f64();
    Ok(est)
}

fn exact_zero(mc: &McConfig) -> McEstimate {
    McEstimate::exact(0.0, mc.n_samples() * mc.paths_per_sample(), mc.seed)
}

fn check_start(domain: &Domain, x: &Vector) -> Result<()> {
    if !domain.is_whole_space() && domain.signed_distance(x)? > 1e-12 * domain.scale() {
        return Err(Error::Precondition(format!(
            "start point {:?} lies outside the domain",
            x.as_slice()
        )));
    }
    Ok(())
}

pub fn estimate_dirichlet(x: &Vector, bvp: &Bvp, mc: &McConfig, cfg: &StepperConfig) -> Result<McEstimate> {
    let BvpKind::Dirichlet { phi } = bvp.kind else {
        return Err(Error::Precondition("expected a Dirichlet problem".into()));
    };
    bvp.check()?;
    check_start(bvp.domain, x)?;
    if let BoundaryFunction::Constant { value } = phi {
        return Ok(McEstimate::exact(*value, mc.n_samples() * mc.paths_per_sample(), mc.seed));
    }
    let ctx = PathContext::new(bvp.field, bvp.domain, BcRoles::ABSORB, cfg, Functional::NONE);
    run_samples(mc, |rng, id| {
        let s = simulate_path(x, &ctx, rng, id, None)?;
        let v = phi.eval(&s.x);
        if !v.is_finite() {
            return Err(Error::Data(format!("boundary data is not finite at {:?}", s.x.as_slice())));
        }
        Ok(v)
    })
}

/// Continuum estimate together with the horizon at which it was accepted.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuumEstimate {
    pub estimate: McEstimate,
    pub horizon: f64,
    pub converged: bool,
}

/// One sample of the continuum functional: one or two live paths.
struct LiveSample {
    paths: Vec<(PathState, PathRng)>,
}

impl LiveSample {
    fn value(&self) -> f64 {
        self.paths.iter().map(|(s, _)| s.payoff).sum::<f64>() / self.paths.len() as f64
    }
}

pub fn estimate_continuum(x: &Vector, bvp: &Bvp, mc: &McConfig, cfg: &StepperConfig) -> Result<ContinuumEstimate> {
    let BvpKind::Continuum { flux } = bvp.kind else {
        return Err(Error::Precondition("expected a continuum problem".into()));
    };
    bvp.check()?;
    check_start(bvp.domain, x)?;
    if flux.is_zero() {
        return Ok(ContinuumEstimate {
            estimate: exact_zero(mc),
            horizon: 0.0,
            converged: true,
        });
    }
    let start = Instant::now();
    let f = |y: &Vector| flux.eval(y);
    let ctx = PathContext::new(bvp.field, bvp.domain, BcRoles::REFLECT, cfg, Functional::new(BoundaryData::Flux(&f)));
    let pps = mc.paths_per_sample();
    let n = mc.n_samples();
    let chunk = (mc.chunk_size / pps).max(1);
    let n_chunks = n.div_ceil(chunk);
    let mut live: Vec<Vec<LiveSample>> = (0..n_chunks)
        .map(|c| {
            (c * chunk..((c + 1) * chunk).min(n))
                .map(|k| LiveSample {
                    paths: if mc.antithetic {
                        vec![
                            (PathState::new(2 * k, *x), mc.rng(k, false)),
                            (PathState::new(2 * k + 1, *x), mc.rng(k, true)),
                        ]
                    } else {
                        vec![(PathState::new(k, *x), mc.rng(k, false))]
                    },
                })
                .collect()
        })
        .collect();

    // Advances every live path to `until`; returns per-chunk (value, value - previous) accumulators.
    let stage = |live: Vec<Vec<LiveSample>>, until: f64| -> Result<(Vec<Vec<LiveSample>>, Accumulator, Accumulator)> {
        let out = map_owned(live, mc.workers, |mut samples: Vec<LiveSample>| -> Result<(Vec<LiveSample>, Accumulator, Accumulator)> {
            let (mut val, mut diff) = (Accumulator::new(), Accumulator::new());
            for s in samples.iter_mut() {
                let before = s.value();
                for (state, rng) in s.paths.iter_mut() {
                    advance(state, &ctx, rng, until, None)?;
                }
                let after = s.value();
                val.push(after);
                diff.push(after - before);
            }
            Ok((samples, val, diff))
        });
        let mut next = Vec::with_capacity(out.len());
        let (mut val, mut diff) = (Accumulator::new(), Accumulator::new());
        for r in out {
            let (s, v, d) = r?;
            next.push(s);
            val.merge(&v);
            diff.merge(&d);
        }
        Ok((next, val, diff))
    };

    let mut horizon = mc.t_initial;
    let (next, mut val, _) = stage(std::mem::take(&mut live), horizon)?;
    live = next;
    let mut converged = false;
    for _ in 0..mc.max_doublings {
        horizon *= 2.0;
        let (next, v, d) = stage(std::mem::take(&mut live), horizon)?;
        live = next;
        val = v;
        let tol = mc.tol_trunc.unwrap_or(0.25 * val.stderr());
        if d.mean().abs() <= tol + 2.0 * d.stderr() {
            converged = true;
            break;
        }
    }
    let mut estimate = McEstimate::from_accumulator(&val, pps, mc.seed);
    estimate.elapsed = start.elapsed().as_secs_f64();
    Ok(ContinuumEstimate {
        estimate,
        horizon,
        converged,
    })
}

/// Horizon after which the killed tail is below `tol`.
pub fn killed_horizon(bvp: &Bvp, flux: &BoundaryFunction, alpha: f64, tol: f64) -> Result<f64> {
    let rate = bvp.domain.boundary_area()? / bvp.domain.volume()?;
    let sup = flux.sup_bound(bvp.domain);
    Ok(((sup * rate / tol).ln() / alpha).max(0.0))
}

pub fn estimate_robin_killed(x: &Vector, bvp: &Bvp, mc: &McConfig, cfg: &StepperConfig) -> Result<McEstimate> {
    let BvpKind::RobinKilled { flux, alpha } = bvp.kind else {
        return Err(Error::Precondition("expected a killed Robin problem".into()));
    };
    bvp.check()?;
    check_start(bvp.domain, x)?;
    if flux.is_zero() {
        return Ok(exact_zero(mc));
    }
    let horizon = killed_horizon(bvp, flux, *alpha, mc.tol_killed)?;
    let cfg = StepperConfig {
        max_time: horizon,
        ..*cfg
    };
    let f = |y: &Vector| flux.eval(y);
    let functional = Functional {
        alpha: *alpha,
        ..Functional::new(BoundaryData::Flux(&f))
    };
    let ctx = PathContext::new(bvp.field, bvp.domain, BcRoles::REFLECT, &cfg, functional);
    run_samples(mc, |rng, id| Ok(simulate_path(x, &ctx, rng, id, None)?.payoff))
}

fn cem_functional<'a>(layout: &'a ElectrodeLayout, mc: &McConfig) -> Functional<'a> {
    Functional {
        gauge_tol: mc.tol_gauge,
        ..Functional::new(BoundaryData::Electrodes(layout))
    }
}

/// A single CEM-type path: used by the estimators and by path-level checks.
pub fn cem_path(x: &Vector, bvp: &Bvp, mc: &McConfig, cfg: &StepperConfig, rng: &mut PathRng, id: u64, contact_scale: f64) -> Result<PathState> {
    let layout = bvp.layout()?;
    let roles = match bvp.kind {
        BvpKind::MixedCem => BcRoles::MIXED,
        _ => BcRoles::REFLECT,
    };
    let functional = Functional {
        contact_scale,
        ..cem_functional(layout, mc)
    };
    let ctx = PathContext::new(bvp.field, bvp.domain, roles, cfg, functional);
    simulate_path(x, &ctx, rng, id, None)
}

fn estimate_cem_like(x: &Vector, bvp: &Bvp, mc: &McConfig, cfg: &StepperConfig) -> Result<McEstimate> {
    let layout = bvp.layout()?;
    if layout.voltages.iter().all(|u| *u == 0.0) {
        return Ok(exact_zero(mc));
    }
    let roles = match bvp.kind {
        BvpKind::MixedCem => BcRoles::MIXED,
        _ => BcRoles::REFLECT,
    };
    let ctx = PathContext::new(bvp.field, bvp.domain, roles, cfg, cem_functional(layout, mc));
    run_samples(mc, |rng, id| Ok(simulate_path(x, &ctx, rng, id, None)?.payoff))
}

pub fn estimate_cem(x: &Vector, bvp: &Bvp, mc: &McConfig, cfg: &StepperConfig) -> Result<McEstimate> {
    if !matches!(bvp.kind, BvpKind::Cem) {
        return Err(Error::Precondition("expected a CEM problem".into()));
    }
    bvp.check()?;
    check_start(bvp.domain, x)?;
    estimate_cem_like(x, bvp, mc, cfg)
}

pub fn estimate_mixed_cem(x: &Vector, bvp: &Bvp, mc: &McConfig, cfg: &StepperConfig) -> Result<McEstimate> {
    if !matches!(bvp.kind, BvpKind::MixedCem) {
        return Err(Error::Precondition("expected a mixed CEM problem".into()));
    }
    bvp.check()?;
    check_start(bvp.domain, x)?;
    let d = bvp.domain.signed_distance(x)?;
    if d.abs() <= 1e-12 * bvp.domain.scale()
        && bvp.domain.nearest_boundary_frame(x, f64::INFINITY)?.part == BoundaryPart::Inaccessible
    {
        return Ok(exact_zero(mc));
    }
    estimate_cem_like(x, bvp, mc, cfg)
}

/// Dispatches on the problem kind.
pub fn estimate_potential(x: &Vector, bvp: &Bvp, mc: &McConfig, cfg: &StepperConfig) -> Result<McEstimate> {
    match bvp.kind {
        BvpKind::Dirichlet { .. } => estimate_dirichlet(x, bvp, mc, cfg),
        BvpKind::Continuum { .. } => Ok(estimate_continuum(x, bvp, mc, cfg)?.estimate),
        BvpKind::RobinKilled { .. } => estimate_robin_killed(x, bvp, mc, cfg),
        BvpKind::Cem => estimate_cem(x, bvp, mc, cfg),
        BvpKind::MixedCem => estimate_mixed_cem(x, bvp, mc, cfg),
    }
}

const TAG_NODE: u64 = 0x6e6f6465;

/// Electrode currents `J_l = |E_l|^-1 int_{E_l} (f - g u) dsigma` by midpoint
/// quadrature with boundary-started potential estimates at the nodes.
pub fn estimate_electrode_currents(
    bvp: &Bvp,
    mc: &McConfig,
    cfg: &StepperConfig,
    nodes_per_electrode: usize,
) -> Result<Vec<McEstimate>> {
    if !matches!(bvp.kind, BvpKind::Cem | BvpKind::MixedCem) {
        return Err(Error::Precondition("electrode currents need a CEM problem".into()));
    }
    bvp.check()?;
    let layout = bvp.layout()?;
    let mut out = Vec::with_capacity(layout.len());
    let mut node_index = 0u64;
    for (l, e) in layout.electrodes.iter().enumerate() {
        let area = electrode_area(bvp.domain, e);
        let nodes = electrode_nodes(bvp.domain, e, nodes_per_electrode);
        let (mut mean_u, mut var_u, mut paths) = (0.0, 0.0, 0u64);
        let mut elapsed = 0.0;
        for node in &nodes {
            let key = derive_seed(mc.stream_key, TAG_NODE, node_index);
            node_index += 1;
            let est = estimate_cem_like(&node.point, bvp, &mc.with_key(key), cfg)?;
            mean_u += node.weight * est.mean;
            var_u += (node.weight * est.stderr).powi(2);
            paths += est.n_paths;
            elapsed += est.elapsed;
        }
        let wsum: f64 = nodes.iter().map(|n| n.weight).sum();
        // Quadrature weights sum to the area up to rounding.
        let scale = area / wsum;
        mean_u *= scale / area;
        let se_u = var_u.sqrt() * scale / area;
        let z = layout.z[l];
        out.push(McEstimate {
            mean: (layout.voltages[l] - mean_u) / z,
            stderr: se_u / z,
            n_paths: paths,
            seed: mc.seed,
            elapsed,
        });
    }
    Ok(out)
}
