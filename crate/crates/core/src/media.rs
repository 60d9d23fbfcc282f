//! Conductivity fields: deterministic families and random ensembles.
//!
//! A realization is a pure function of `(spec, seed)`. Random cell values
//! are hashed from integer cell coordinates, so a field can be queried
//! anywhere in space without precomputation or shared state.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_lower, is_diagonal, matrix_from_rows, scaled_identity, symmetric_eigenvalues, unit,
    Matrix, Vector, MAX_DIM,
};
use crate::rng::{hash_words, unit_from_hash};

/// A phase value: an isotropic scalar or a full row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KappaValue {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl KappaValue {
    pub fn to_matrix(&self, dim: usize) -> Matrix {
        match self {
            KappaValue::Scalar(s) => scaled_identity(dim, *s),
            KappaValue::Matrix(rows) => matrix_from_rows(rows),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SmoothFamily {
    /// `(base + slope * x_axis) I`, clamped to the ellipticity bounds.
    LinearRamp { axis: usize, base: f64, slope: f64 },
    /// `(mean + amplitude * sin(2 pi x_axis / period)) I`.
    Sinusoidal {
        axis: usize,
        mean: f64,
        amplitude: f64,
        period: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum InterfaceShape {
    /// Region 1 is `{normal . x < offset}`.
    Hyperplane { normal: Vec<f64>, offset: f64 },
    /// Region 1 is the open ball.
    Sphere { center: Vec<f64>, radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum LayerLaw {
    Alternating,
    Iid { probabilities: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MediumKind {
    Constant {
        kappa: KappaValue,
    },
    Smooth {
        #[serde(flatten)]
        family: SmoothFamily,
    },
    TwoPhase {
        interface: InterfaceShape,
        kappa1: f64,
        kappa2: f64,
    },
    Checkerboard {
        cell_size: f64,
        values: Vec<KappaValue>,
        probabilities: Vec<f64>,
        #[serde(default)]
        random_offset: bool,
    },
    Layered {
        axis: usize,
        width: f64,
        values: Vec<KappaValue>,
        #[serde(default = "default_layer_law")]
        law: LayerLaw,
        #[serde(default)]
        random_offset: bool,
    },
    PoissonSpheres {
        intensity: f64,
        radius: f64,
        kappa_in: f64,
        kappa_out: f64,
    },
}

fn default_layer_law() -> LayerLaw {
    LayerLaw::Alternating
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediumSpec {
    pub dim: usize,
    /// Uniform ellipticity bound `c >= 1`; derived from the phase values when omitted.
    #[serde(default)]
    pub ellipticity: Option<f64>,
    #[serde(flatten)]
    pub kind: MediumKind,
}

impl MediumSpec {
    pub fn new(dim: usize, kind: MediumKind) -> Self {
        MediumSpec {
            dim,
            ellipticity: None,
            kind,
        }
    }

    pub fn constant(dim: usize, kappa: f64) -> Self {
        Self::new(
            dim,
            MediumKind::Constant {
                kappa: KappaValue::Scalar(kappa),
            },
        )
    }

    /// Phase matrices of piecewise-constant kinds.
    fn phase_matrices(&self) -> Vec<Matrix> {
        let d = self.dim;
        match &self.kind {
            MediumKind::Constant { kappa } => vec![kappa.to_matrix(d)],
            MediumKind::Smooth { .. } => vec![],
            MediumKind::TwoPhase { kappa1, kappa2, .. } => {
                vec![scaled_identity(d, *kappa1), scaled_identity(d, *kappa2)]
            }
            MediumKind::Checkerboard { values, .. } | MediumKind::Layered { values, .. } => {
                values.iter().map(|v| v.to_matrix(d)).collect()
            }
            MediumKind::PoissonSpheres {
                kappa_in, kappa_out, ..
            } => vec![scaled_identity(d, *kappa_in), scaled_identity(d, *kappa_out)],
        }
    }

    /// Smallest `c` with all phase eigenvalues in `[1/c, c]`.
    fn derived_bound(&self) -> Option<f64> {
        match &self.kind {
            MediumKind::Smooth {
                family:
                    SmoothFamily::Sinusoidal {
                        mean, amplitude, ..
                    },
            } => {
                let lo = mean - amplitude.abs();
                let hi = mean + amplitude.abs();
                Some(hi.max(1.0 / lo).max(1.0))
            }
            MediumKind::Smooth { .. } => None,
            _ => {
                let mut c: f64 = 1.0;
                for m in self.phase_matrices() {
                    for ev in symmetric_eigenvalues(&m, self.dim) {
                        c = c.max(ev).max(1.0 / ev);
                    }
                }
                Some(c)
            }
        }
    }

    pub fn bound(&self) -> f64 {
        self.ellipticity
            .or_else(|| self.derived_bound())
            .unwrap_or(f64::INFINITY)
    }

    /// True when the field is piecewise constant, so the stepper has no drift.
    pub fn is_piecewise(&self) -> bool {
        !matches!(
            self.kind,
            MediumKind::Constant { .. } | MediumKind::Smooth { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        if d == 0 || d > MAX_DIM {
            return Err(Error::config("medium.dim", format!("dimension must be 1..=3, got {d}")));
        }
        if let Some(c) = self.ellipticity {
            if !(c >= 1.0 && c.is_finite()) {
                return Err(Error::config("medium.ellipticity", "bound must be finite and >= 1"));
            }
        }
        let check_axis = |axis: usize, path: &str| {
            if axis >= d {
                Err(Error::config(path, format!("axis {axis} out of range for dimension {d}")))
            } else {
                Ok(())
            }
        };
        let check_probs = |p: &[f64], n: usize, path: &str| {
            if p.len() != n {
                return Err(Error::config(path, format!("expected {n} probabilities, got {}", p.len())));
            }
            if p.iter().any(|&q| !(0.0..=1.0).contains(&q)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::config(path, "probabilities must lie in [0,1] and sum to 1"));
            }
            Ok(())
        };
        let positive = |x: f64, path: &str| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::config(path, "must be positive"))
            }
        };
        match &self.kind {
            MediumKind::Constant { .. } => {}
            MediumKind::Smooth { family } => match family {
                SmoothFamily::LinearRamp { axis, base, slope } => {
                    check_axis(*axis, "medium.axis")?;
                    if self.ellipticity.is_none() {
                        return Err(Error::config(
                            "medium.ellipticity",
                            "a linear ramp needs an explicit ellipticity bound",
                        ));
                    }
                    if !base.is_finite() || !slope.is_finite() {
                        return Err(Error::config("medium.slope", "must be finite"));
                    }
                }
                SmoothFamily::Sinusoidal {
                    axis,
                    mean,
                    amplitude,
                    period,
                } => {
                    check_axis(*axis, "medium.axis")?;
                    positive(*period, "medium.period")?;
                    if !(mean - amplitude.abs() > 0.0) {
                        return Err(Error::config("medium.amplitude", "field must stay positive"));
                    }
                }
            },
            MediumKind::TwoPhase {
                interface,
                kappa1,
                kappa2,
            } => {
                positive(*kappa1, "medium.kappa1")?;
                positive(*kappa2, "medium.kappa2")?;
                match interface {
                    InterfaceShape::Hyperplane { normal, .. } => {
                        let n: f64 = normal.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if normal.len() != d || !(n > 0.0) {
                            return Err(Error::config("medium.interface.normal", "need a nonzero vector of length dim"));
                        }
                    }
                    InterfaceShape::Sphere { center, radius } => {
                        if center.len() != d {
                            return Err(Error::config("medium.interface.center", "length must equal dim"));
                        }
                        positive(*radius, "medium.interface.radius")?;
                    }
                }
            }
            MediumKind::Checkerboard {
                cell_size,
                values,
                probabilities,
                ..
            } => {
                positive(*cell_size, "medium.cell_size")?;
                if values.is_empty() {
                    return Err(Error::config("medium.values", "need at least one value"));
                }
                check_probs(probabilities, values.len(), "medium.probabilities")?;
            }
            MediumKind::Layered {
                axis,
                width,
                values,
                law,
                ..
            } => {
                check_axis(*axis, "medium.axis")?;
                positive(*width, "medium.width")?;
                if values.is_empty() {
                    return Err(Error::config("medium.values", "need at least one value"));
                }
                if let LayerLaw::Iid { probabilities } = law {
                    check_probs(probabilities, values.len(), "medium.law.probabilities")?;
                }
            }
            MediumKind::PoissonSpheres {
                intensity,
                radius,
                kappa_in,
                kappa_out,
            } => {
                positive(*intensity, "medium.intensity")?;
                positive(*radius, "medium.radius")?;
                positive(*kappa_in, "medium.kappa_in")?;
                positive(*kappa_out, "medium.kappa_out")?;
            }
        }
        let c = self.bound();
        for (k, m) in self.phase_matrices().iter().enumerate() {
            let path = format!("medium.values[{k}]");
            if crate::linalg::max_abs_asymmetry(m, d) > 1e-14 * m.norm() {
                return Err(Error::config(path, "matrix is not symmetric"));
            }
            let ev = symmetric_eigenvalues(m, d);
            if ev[0] <= 0.0 {
                return Err(Error::config(path, "matrix is not positive definite"));
            }
            if ev[0] < 1.0 / c - 1e-12 || ev[d - 1] > c + 1e-12 {
                return Err(Error::config(path, format!("eigenvalues {ev:?} violate the ellipticity bound {c}")));
            }
        }
        Ok(())
    }
}

/// A constant phase together with its diffusion factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Phase {
    pub kappa: Matrix,
    pub factor: Matrix,
}

impl Phase {
    fn new(kappa: Matrix, dim: usize) -> Self {
        let factor = cholesky_lower(&(kappa * 2.0), dim)
            .expect("phase values are validated positive definite");
        Phase { kappa, factor }
    }

    /// `n . kappa n` for a unit vector `n`.
    pub fn normal_conductivity(&self, n: &Vector) -> f64 {
        n.dot(&(self.kappa * n))
    }
}

/// The nearest interface to a point, seen from the phase containing it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalInterface {
    /// Distance from the query point to the interface.
    pub distance: f64,
    /// Unit normal pointing from the current phase into the other.
    pub normal: Vector,
    pub here: Phase,
    pub there: Phase,
}

/// Interfaces of an axis-aligned cell along one coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisFaces {
    pub here: Phase,
    /// Distance to the lower face and the phase behind it.
    pub below: (f64, Phase),
    pub above: (f64, Phase),
}

#[derive(Clone, Debug)]
enum Realized {
    Constant(Phase),
    Ramp {
        axis: usize,
        base: f64,
        slope: f64,
        lo: f64,
        hi: f64,
    },
    Sinusoid {
        axis: usize,
        mean: f64,
        amplitude: f64,
        wavenumber: f64,
    },
    TwoPhase {
        shape: Shape,
        phases: [Phase; 2],
    },
    Checkerboard {
        cell: f64,
        offset: Vector,
        phases: Vec<Phase>,
        cdf: Vec<f64>,
    },
    Layered {
        axis: usize,
        width: f64,
        offset: f64,
        phases: Vec<Phase>,
        cdf: Option<Vec<f64>>,
    },
    Poisson {
        mean_count: f64,
        radius: f64,
        inside: Phase,
        outside: Phase,
    },
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Plane { normal: Vector, offset: f64 },
    Sphere { center: Vector, radius: f64 },
}

impl Shape {
    /// Signed level, negative in region 1, with unit gradient.
    fn level(&self, y: &Vector) -> (f64, Vector) {
        match *self {
            Shape::Plane { normal, offset } => (normal.dot(y) - offset, normal),
            Shape::Sphere { center, radius } => {
                let r = y - center;
                let n = r.norm();
                let g = if n > 0.0 { r / n } else { Vector::new(1.0, 0.0, 0.0) };
                (n - radius, g)
            }
        }
    }
}

const TAG_OFFSET: i64 = 0x6f66;
const TAG_POISSON: i64 = 0x7073;

/// A realization of a medium at scale `epsilon`: `kappa(x) = kappa_1(x / epsilon)`.
#[derive(Clone, Debug)]
pub struct ConductivityField {
    spec: Arc<MediumSpec>,
    seed: u64,
    epsilon: f64,
    dim: usize,
    bound: f64,
    realized: Arc<Realized>,
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = p
        .iter()
        .map(|q| {
            acc += q;
            acc
        })
        .collect();
    if let Some(last) = cdf.last_mut() {
        *last = f64::INFINITY;
    }
    cdf
}

fn pick(cdf: &[f64], u: f64) -> usize {
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

/// Poisson count with the given mean from a single uniform.
fn poisson_count(mean: f64, u: f64) -> u32 {
    let mut k = 0u32;
    let mut p = (-mean).exp();
    let mut cdf = p;
    while u > cdf && k < 10_000 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k
}

pub fn realize(spec: &MediumSpec, seed: u64, epsilon: f64) -> Result<ConductivityField> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Precondition(format!("epsilon must be positive, got {epsilon}")));
    }
    spec.validate()?;
    let d = spec.dim;
    let phases = |vals: &[Matrix]| vals.iter().map(|m| Phase::new(*m, d)).collect::<Vec<_>>();
    let c = spec.bound();
    let realized = match &spec.kind {
        MediumKind::Constant { kappa } => Realized::Constant(Phase::new(kappa.to_matrix(d), d)),
        MediumKind::Smooth { family } => match *family {
            SmoothFamily::LinearRamp { axis, base, slope } => Realized::Ramp {
                axis,
                base,
                slope,
                lo: 1.0 / c,
                hi: c,
            },
            SmoothFamily::Sinusoidal {
                axis,
                mean,
                amplitude,
                period,
            } => Realized::Sinusoid {
                axis,
                mean,
                amplitude,
                wavenumber: 2.0 * std::f64::consts::PI / period,
            },
        },
        MediumKind::TwoPhase { interface, .. } => {
            let shape = match interface {
                InterfaceShape::Hyperplane { normal, offset } => {
                    let n = crate::linalg::vector_from(normal);
                    let len = n.norm();
                    Shape::Plane {
                        normal: n / len,
                        offset: offset / len,
                    }
                }
                InterfaceShape::Sphere { center, radius } => Shape::Sphere {
                    center: crate::linalg::vector_from(center),
                    radius: *radius,
                },
            };
            let p = phases(&spec.phase_matrices());
            Realized::TwoPhase {
                shape,
                phases: [p[0], p[1]],
            }
        }
        MediumKind::Checkerboard {
            cell_size,
            probabilities,
            random_offset,
            ..
        } => {
            let mut offset = Vector::zeros();
            if *random_offset {
                for i in 0..d {
                    offset[i] = cell_size * unit_from_hash(hash_words(seed, &[TAG_OFFSET, i as i64]));
                }
            }
            Realized::Checkerboard {
                cell: *cell_size,
                offset,
                phases: phases(&spec.phase_matrices()),
                cdf: cumulative(probabilities),
            }
        }
        MediumKind::Layered {
            axis,
            width,
            values,
            law,
            random_offset,
        } => {
            let (cdf, period) = match law {
                LayerLaw::Alternating => (None, *width * values.len() as f64),
                LayerLaw::Iid { probabilities } => (Some(cumulative(probabilities)), *width),
            };
            let offset = if *random_offset {
                period * unit_from_hash(hash_words(seed, &[TAG_OFFSET]))
            } else {
                0.0
            };
            Realized::Layered {
                axis: *axis,
                width: *width,
                offset,
                phases: phases(&spec.phase_matrices()),
                cdf,
            }
        }
        MediumKind::PoissonSpheres {
            intensity,
            radius,
            kappa_in,
            kappa_out,
        } => Realized::Poisson {
            mean_count: intensity * radius.powi(d as i32),
            radius: *radius,
            inside: Phase::new(scaled_identity(d, *kappa_in), d),
            outside: Phase::new(scaled_identity(d, *kappa_out), d),
        },
    };
    Ok(ConductivityField {
        spec: Arc::new(spec.clone()),
        seed,
        epsilon,
        dim: d,
        bound: c,
        realized: Arc::new(realized),
    })
}

impl ConductivityField {
    pub fn spec(&self) -> &MediumSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn has_analytic_drift(&self) -> bool {
        matches!(
            *self.realized,
            Realized::Constant(_) | Realized::Ramp { .. } | Realized::Sinusoid { .. }
        )
    }

    pub fn is_piecewise(&self) -> bool {
        !self.has_analytic_drift()
    }

    pub fn is_constant(&self) -> bool {
        matches!(*self.realized, Realized::Constant(_))
    }

    /// Checkerboards and laminates whose phases are all diagonal.
    pub fn is_axis_aligned(&self) -> bool {
        match &*self.realized {
            Realized::Checkerboard { phases, .. } | Realized::Layered { phases, .. } => {
                phases.iter().all(|p| is_diagonal(&p.kappa, self.dim))
            }
            _ => false,
        }
    }

    /// Same realization at a new scale.
    pub fn rescale(&self, epsilon: f64) -> Result<ConductivityField> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Precondition(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(ConductivityField {
            epsilon,
            ..self.clone()
        })
    }

    fn cell_phase(&self, seed_cell: &[i64], phases: &[Phase], cdf: &[f64]) -> Phase {
        let u = unit_from_hash(hash_words(self.seed, seed_cell));
        phases[pick(cdf, u)]
    }

    fn checker_cell(&self, y: &Vector, cell: f64, offset: &Vector) -> [i64; MAX_DIM] {
        let mut idx = [0i64; MAX_DIM];
        for i in 0..self.dim {
            idx[i] = ((y[i] - offset[i]) / cell).floor() as i64;
        }
        idx
    }

    fn layer_phase(&self, k: i64, phases: &[Phase], cdf: &Option<Vec<f64>>) -> Phase {
        match cdf {
            None => phases[k.rem_euclid(phases.len() as i64) as usize],
            Some(cdf) => self.cell_phase(&[k], phases, cdf),
        }
    }

    /// Visits every Poisson center whose cell is within `reach` of `y`.
    fn for_each_center(&self, y: &Vector, reach: f64, mean_count: f64, radius: f64, mut f: impl FnMut(Vector)) {
        let s = radius;
        let d = self.dim;
        let mut lo = [0i64; MAX_DIM];
        let mut hi = [0i64; MAX_DIM];
        for i in 0..d {
            lo[i] = ((y[i] - reach) / s).floor() as i64;
            hi[i] = ((y[i] + reach) / s).floor() as i64;
        }
        let mut idx = lo;
        loop {
            let key = [TAG_POISSON, idx[0], idx[1], idx[2]];
            let h = hash_words(self.seed, &key);
            let n = poisson_count(mean_count, unit_from_hash(h));
            for k in 0..n {
                let mut c = Vector::zeros();
                for i in 0..d {
                    let u = unit_from_hash(hash_words(h, &[k as i64, i as i64]));
                    c[i] = (idx[i] as f64 + u) * s;
                }
                f(c);
            }
            let mut i = 0;
            loop {
                if i == d {
                    return;
                }
                idx[i] += 1;
                if idx[i] <= hi[i] {
                    break;
                }
                idx[i] = lo[i];
                i += 1;
            }
        }
    }

    fn phase_at_scaled(&self, y: &Vector) -> Phase {
        match &*self.realized {
            Realized::Constant(p) => *p,
            Realized::Ramp { .. } | Realized::Sinusoid { .. } => {
                let k = self.smooth_value(y);
                Phase::new(scaled_identity(self.dim, k), self.dim)
            }
            Realized::TwoPhase { shape, phases } => {
                if shape.level(y).0 < 0.0 {
                    phases[0]
                } else {
                    phases[1]
                }
            }
            Realized::Checkerboard {
                cell,
                offset,
                phases,
                cdf,
            } => {
                let idx = self.checker_cell(y, *cell, offset);
                self.cell_phase(&idx[..self.dim], phases, cdf)
            }
            Realized::Layered {
                axis,
                width,
                offset,
                phases,
                cdf,
            } => {
                let k = ((y[*axis] - offset) / width).floor() as i64;
                self.layer_phase(k, phases, cdf)
            }
            Realized::Poisson {
                mean_count,
                radius,
                inside,
                outside,
            } => {
                let mut hit = false;
                self.for_each_center(y, *radius, *mean_count, *radius, |c| {
                    if (y - c).norm() < *radius {
                        hit = true;
                    }
                });
                if hit {
                    *inside
                } else {
                    *outside
                }
            }
        }
    }

    fn smooth_value(&self, y: &Vector) -> f64 {
        match *self.realized {
            Realized::Ramp {
                axis,
                base,
                slope,
                lo,
                hi,
            } => (base + slope * y[axis]).clamp(lo, hi),
            Realized::Sinusoid {
                axis,
                mean,
                amplitude,
                wavenumber,
            } => mean + amplitude * (wavenumber * y[axis]).sin(),
            _ => unreachable!(),
        }
    }

    pub fn kappa_at(&self, x: &Vector) -> Matrix {
        let y = x / self.epsilon;
        match &*self.realized {
            Realized::Ramp { .. } | Realized::Sinusoid { .. } => {
                scaled_identity(self.dim, self.smooth_value(&y))
            }
            _ => self.phase_at_scaled(&y).kappa,
        }
    }

    /// Lower-triangular `B` with `B Bᵀ = 2 kappa(x)`.
    pub fn diffusion_factor(&self, x: &Vector) -> Matrix {
        let y = x / self.epsilon;
        match &*self.realized {
            Realized::Ramp { .. } | Realized::Sinusoid { .. } => {
                scaled_identity(self.dim, (2.0 * self.smooth_value(&y)).sqrt())
            }
            _ => self.phase_at_scaled(&y).factor,
        }
    }

    pub fn phase_at(&self, x: &Vector) -> Phase {
        self.phase_at_scaled(&(x / self.epsilon))
    }

    /// Divergence of the rows of kappa.
    pub fn drift_at(&self, x: &Vector) -> Result<Vector> {
        let y = x / self.epsilon;
        match *self.realized {
            Realized::Constant(_) => Ok(Vector::zeros()),
            Realized::Ramp {
                axis,
                base,
                slope,
                lo,
                hi,
            } => {
                let v = base + slope * y[axis];
                let g = if v > lo && v < hi { slope } else { 0.0 };
                Ok(unit(self.dim, axis) * (g / self.epsilon))
            }
            Realized::Sinusoid {
                axis,
                amplitude,
                wavenumber,
                ..
            } => {
                let g = amplitude * wavenumber * (wavenumber * y[axis]).cos();
                Ok(unit(self.dim, axis) * (g / self.epsilon))
            }
            _ => Err(Error::UnsupportedCapability(
                "drift of a piecewise-constant medium".into(),
            )),
        }
    }

    /// Central-difference drift; `delta = None` uses `eps^(1/3) max(1, |x|)`.
    pub fn drift_fd(&self, x: &Vector, delta: Option<f64>) -> Result<Vector> {
        if self.is_piecewise() {
            return Err(Error::UnsupportedCapability(
                "drift of a piecewise-constant medium".into(),
            ));
        }
        let h = delta.unwrap_or_else(|| f64::EPSILON.cbrt() * x.norm().max(1.0));
        let mut out = Vector::zeros();
        for j in 0..self.dim {
            let e = unit(self.dim, j) * h;
            let dk = (self.kappa_at(&(x + e)) - self.kappa_at(&(x - e))) / (2.0 * h);
            for i in 0..self.dim {
                out[i] += dk[(i, j)];
            }
        }
        Ok(out)
    }

    /// Nearest interface within `band` of `x` across which the phase changes.
    pub fn local_interface(&self, x: &Vector, band: f64) -> Option<LocalInterface> {
        let eps = self.epsilon;
        let y = x / eps;
        let band_y = band / eps;
        let scale = |li: LocalInterface| LocalInterface {
            distance: li.distance * eps,
            ..li
        };
        match &*self.realized {
            Realized::Constant(_) | Realized::Ramp { .. } | Realized::Sinusoid { .. } => None,
            Realized::TwoPhase { shape, phases } => {
                let (lev, grad) = shape.level(&y);
                if lev.abs() > band_y {
                    return None;
                }
                let (here, there, normal) = if lev < 0.0 {
                    (phases[0], phases[1], grad)
                } else {
                    (phases[1], phases[0], -grad)
                };
                if here == there {
                    return None;
                }
                Some(scale(LocalInterface {
                    distance: lev.abs(),
                    normal,
                    here,
                    there,
                }))
            }
            Realized::Checkerboard { .. } | Realized::Layered { .. } => {
                let mut best: Option<LocalInterface> = None;
                for axis in 0..self.dim {
                    let Some(f) = self.axis_faces_scaled(&y, axis) else {
                        continue;
                    };
                    for (dist, there, sign) in [(f.below.0, f.below.1, -1.0), (f.above.0, f.above.1, 1.0)] {
                        if dist <= band_y
                            && there != f.here
                            && best.is_none_or(|b| dist < b.distance)
                        {
                            best = Some(LocalInterface {
                                distance: dist,
                                normal: unit(self.dim, axis) * sign,
                                here: f.here,
                                there,
                            });
                        }
                    }
                }
                best.map(scale)
            }
            Realized::Poisson {
                mean_count,
                radius,
                inside,
                outside,
            } => {
                let mut inside_depth: Option<(f64, Vector)> = None;
                let mut outside_gap: Option<(f64, Vector)> = None;
                self.for_each_center(&y, radius + band_y, *mean_count, *radius, |c| {
                    let r = y - c;
                    let n = r.norm();
                    let g = if n > 0.0 { r / n } else { Vector::new(1.0, 0.0, 0.0) };
                    if n < *radius {
                        let depth = radius - n;
                        if inside_depth.is_none_or(|(d0, _)| depth > d0) {
                            inside_depth = Some((depth, g));
                        }
                    } else {
                        let gap = n - radius;
                        if outside_gap.is_none_or(|(g0, _)| gap < g0) {
                            outside_gap = Some((gap, -g));
                        }
                    }
                });
                let li = match (inside_depth, outside_gap) {
                    (Some((depth, g)), _) => LocalInterface {
                        distance: depth,
                        normal: g,
                        here: *inside,
                        there: *outside,
                    },
                    (None, Some((gap, g))) => LocalInterface {
                        distance: gap,
                        normal: g,
                        here: *outside,
                        there: *inside,
                    },
                    (None, None) => return None,
                };
                if li.distance > band_y || inside == outside {
                    None
                } else {
                    Some(scale(li))
                }
            }
        }
    }

    fn axis_faces_scaled(&self, y: &Vector, axis: usize) -> Option<AxisFaces> {
        match &*self.realized {
            Realized::Checkerboard {
                cell,
                offset,
                phases,
                cdf,
            } => {
                let idx = self.checker_cell(y, *cell, offset);
                let lo = idx[axis] as f64 * cell + offset[axis];
                let here = self.cell_phase(&idx[..self.dim], phases, cdf);
                let mut below = idx;
                below[axis] -= 1;
                let mut above = idx;
                above[axis] += 1;
                Some(AxisFaces {
                    here,
                    below: ((y[axis] - lo).max(0.0), self.cell_phase(&below[..self.dim], phases, cdf)),
                    above: ((lo + cell - y[axis]).max(0.0), self.cell_phase(&above[..self.dim], phases, cdf)),
                })
            }
            Realized::Layered {
                axis: layer_axis,
                width,
                offset,
                phases,
                cdf,
            } if *layer_axis == axis => {
                let k = ((y[axis] - offset) / width).floor() as i64;
                let lo = k as f64 * width + offset;
                Some(AxisFaces {
                    here: self.layer_phase(k, phases, cdf),
                    below: ((y[axis] - lo).max(0.0), self.layer_phase(k - 1, phases, cdf)),
                    above: ((lo + width - y[axis]).max(0.0), self.layer_phase(k + 1, phases, cdf)),
                })
            }
            _ => None,
        }
    }

    /// Faces of the axis-aligned cell containing `x` along `axis`, in
    /// physical units. `None` when the medium has no faces normal to `axis`.
    pub fn axis_faces(&self, x: &Vector, axis: usize) -> Option<AxisFaces> {
        let eps = self.epsilon;
        self.axis_faces_scaled(&(x / eps), axis).map(|f| AxisFaces {
            below: (f.below.0 * eps, f.below.1),
            above: (f.above.0 * eps, f.above.1),
            ..f
        })
    }
}
