//! Analytic domains, boundary frames and electrode layouts.
//!
//! Conventions: the half-space is `{x_d < 0}`, the hemisphere is the lower
//! half `B(0, R) ∩ {x_d < 0}` whose flat face is the accessible boundary and
//! whose spherical cap is inaccessible. Balls and half-spaces are entirely
//! accessible. Points are stored in 3-vectors padded with zeros.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Vector, MAX_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Domain {
    HalfSpace { dim: usize },
    Hemisphere { dim: usize, radius: f64 },
    Ball { dim: usize, radius: f64 },
    WholeSpace { dim: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPart {
    Accessible,
    Inaccessible,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryFrame {
    pub point: Vector,
    pub normal: Vector,
    pub part: BoundaryPart,
}

/// Where a straight segment first leaves the domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exit {
    pub fraction: f64,
    pub point: Vector,
    pub part: BoundaryPart,
}

impl Domain {
    pub fn dim(&self) -> usize {
        match *self {
            Domain::HalfSpace { dim }
            | Domain::Hemisphere { dim, .. }
            | Domain::Ball { dim, .. }
            | Domain::WholeSpace { dim } => dim,
        }
    }

    /// Length scale used for relative tolerances.
    pub fn scale(&self) -> f64 {
        match *self {
            Domain::Hemisphere { radius, .. } | Domain::Ball { radius, .. } => radius,
            _ => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::config("domain.dim", format!("dimension must be 1..=3, got {dim}")));
        }
        if let Domain::Hemisphere { radius, .. } | Domain::Ball { radius, .. } = *self {
            if !(radius > 0.0 && radius.is_finite()) {
                return Err(Error::config("domain.radius", "radius must be positive"));
            }
        }
        Ok(())
    }

    pub fn is_whole_space(&self) -> bool {
        matches!(self, Domain::WholeSpace { .. })
    }

    pub fn has_inaccessible_part(&self) -> bool {
        matches!(self, Domain::Hemisphere { .. })
    }

    fn axis(&self) -> usize {
        self.dim() - 1
    }

    /// Euclidean norm of the components tangential to the flat face.
    fn flat_norm(&self, x: &Vector) -> f64 {
        let d = self.axis();
        (0..d).map(|i| x[i] * x[i]).sum::<f64>().sqrt()
    }

    pub fn signed_distance(&self, x: &Vector) -> Result<f64> {
        let d = self.axis();
        match *self {
            Domain::WholeSpace { .. } => Err(Error::UnsupportedQuery(
                "signed distance in whole space".into(),
            )),
            Domain::HalfSpace { .. } => Ok(x[d]),
            Domain::Ball { radius, .. } => Ok(x.norm() - radius),
            Domain::Hemisphere { radius, .. } => {
                let r = x.norm();
                let xd = x[d];
                if xd < 0.0 && r < radius {
                    return Ok(-(radius - r).min(-xd));
                }
                let rf = self.flat_norm(x);
                if xd >= 0.0 && rf <= radius {
                    Ok(xd)
                } else if xd <= 0.0 {
                    Ok(r - radius)
                } else {
                    Ok(((rf - radius).powi(2) + xd * xd).sqrt())
                }
            }
        }
    }

    /// True for points of the open domain.
    pub fn contains(&self, x: &Vector) -> bool {
        match self.signed_distance(x) {
            Ok(s) => s < 0.0,
            Err(_) => true,
        }
    }

    /// Closest boundary point of `x`, which must lie within `r_snap` of the boundary.
    pub fn nearest_boundary_frame(&self, x: &Vector, r_snap: f64) -> Result<BoundaryFrame> {
        let dist = self.signed_distance(x)?;
        if dist.abs() > r_snap {
            return Err(Error::OutOfBand {
                distance: dist,
                r_snap,
            });
        }
        let d = self.axis();
        let dim = self.dim();
        let flat = |x: &Vector| {
            let mut p = *x;
            p[d] = 0.0;
            BoundaryFrame {
                point: p,
                normal: crate::linalg::unit(dim, d),
                part: BoundaryPart::Accessible,
            }
        };
        let radial = |x: &Vector, radius: f64, part| {
            let r = x.norm();
            let normal = if r > 0.0 {
                x / r
            } else {
                crate::linalg::unit(dim, d)
            };
            BoundaryFrame {
                point: normal * radius,
                normal,
                part,
            }
        };
        Ok(match *self {
            Domain::WholeSpace { .. } => unreachable!(),
            Domain::HalfSpace { .. } => flat(x),
            Domain::Ball { radius, .. } => radial(x, radius, BoundaryPart::Accessible),
            Domain::Hemisphere { radius, .. } => {
                let r = x.norm();
                let xd = x[d];
                let rf = self.flat_norm(x);
                if xd < 0.0 && r < radius {
                    if -xd <= radius - r {
                        flat(x)
                    } else {
                        radial(x, radius, BoundaryPart::Inaccessible)
                    }
                } else if xd >= 0.0 && rf <= radius {
                    flat(x)
                } else if xd <= 0.0 {
                    radial(x, radius, BoundaryPart::Inaccessible)
                } else {
                    // Beyond the rim: project onto the rim circle.
                    let mut p = Vector::zeros();
                    if rf > 0.0 {
                        for i in 0..d {
                            p[i] = x[i] * radius / rf;
                        }
                    } else {
                        p[0] = radius;
                    }
                    let diff = x - p;
                    let n = diff.norm();
                    let normal = if n > 0.0 { diff / n } else { crate::linalg::unit(dim, d) };
                    BoundaryFrame {
                        point: p,
                        normal,
                        part: BoundaryPart::Inaccessible,
                    }
                }
            }
        })
    }

    /// First exit of the segment `a -> b` with `a` in the closed domain.
    /// Returns `None` when `b` is inside.
    pub fn first_exit(&self, a: &Vector, b: &Vector) -> Option<Exit> {
        let d = self.axis();
        let seg = b - a;
        let plane = || -> Option<f64> {
            if b[d] > 0.0 {
                let denom = b[d] - a[d];
                Some(if denom > 0.0 { ((-a[d]) / denom).clamp(0.0, 1.0) } else { 0.0 })
            } else {
                None
            }
        };
        let sphere = |radius: f64| -> Option<f64> {
            if b.norm() > radius {
                let qa = seg.norm_squared();
                let qb = 2.0 * a.dot(&seg);
                let qc = a.norm_squared() - radius * radius;
                let disc = (qb * qb - 4.0 * qa * qc).max(0.0);
                let s = if qa > 0.0 { (-qb + disc.sqrt()) / (2.0 * qa) } else { 0.0 };
                Some(s.clamp(0.0, 1.0))
            } else {
                None
            }
        };
        let (s, part) = match *self {
            Domain::WholeSpace { .. } => return None,
            Domain::HalfSpace { .. } => (plane()?, BoundaryPart::Accessible),
            Domain::Ball { radius, .. } => (sphere(radius)?, BoundaryPart::Accessible),
            Domain::Hemisphere { radius, .. } => match (plane(), sphere(radius)) {
                (None, None) => return None,
                (Some(p), None) => (p, BoundaryPart::Accessible),
                (None, Some(q)) => (q, BoundaryPart::Inaccessible),
                (Some(p), Some(q)) => {
                    if p <= q {
                        (p, BoundaryPart::Accessible)
                    } else {
                        (q, BoundaryPart::Inaccessible)
                    }
                }
            },
        };
        Some(Exit {
            fraction: s,
            point: a + seg * s,
            part,
        })
    }
}

impl Domain {
    /// Lebesgue measure of a bounded domain.
    pub fn volume(&self) -> Result<f64> {
        let pi = std::f64::consts::PI;
        let ball = |dim: usize, r: f64| match dim {
            1 => 2.0 * r,
            2 => pi * r * r,
            _ => 4.0 / 3.0 * pi * r.powi(3),
        };
        match *self {
            Domain::Ball { dim, radius } => Ok(ball(dim, radius)),
            Domain::Hemisphere { dim, radius } => Ok(0.5 * ball(dim, radius)),
            _ => Err(Error::UnsupportedQuery("volume of an unbounded domain".into())),
        }
    }

    /// Surface measure of the boundary of a bounded domain.
    pub fn boundary_area(&self) -> Result<f64> {
        Ok(self.boundary_nodes(64)?.iter().map(|(n, _)| n.weight).sum())
    }

    /// Midpoint quadrature over the whole boundary with about `n` nodes per face.
    pub fn boundary_nodes(&self, n: usize) -> Result<Vec<(SurfaceNode, BoundaryPart)>> {
        let n = n.max(2);
        let pi = std::f64::consts::PI;
        let dim = self.dim();
        let (radius, hemi) = match *self {
            Domain::Ball { radius, .. } => (radius, false),
            Domain::Hemisphere { radius, .. } => (radius, true),
            _ => {
                return Err(Error::UnsupportedQuery(
                    "boundary quadrature of an unbounded domain".into(),
                ))
            }
        };
        let acc = BoundaryPart::Accessible;
        let cap = if hemi { BoundaryPart::Inaccessible } else { acc };
        let mut out = Vec::new();
        match dim {
            1 => {
                out.push((SurfaceNode { point: Vector::new(-radius, 0.0, 0.0), weight: 1.0 }, cap));
                let top = if hemi { 0.0 } else { radius };
                out.push((SurfaceNode { point: Vector::new(top, 0.0, 0.0), weight: 1.0 }, acc));
            }
            2 => {
                let span = if hemi { pi } else { 2.0 * pi };
                let dth = span / n as f64;
                for k in 0..n {
                    let th = -span + (k as f64 + 0.5) * dth;
                    let point = Vector::new(radius * th.cos(), radius * th.sin(), 0.0);
                    out.push((SurfaceNode { point, weight: radius * dth }, cap));
                }
                if hemi {
                    let dx = 2.0 * radius / n as f64;
                    for k in 0..n {
                        let point = Vector::new(-radius + (k as f64 + 0.5) * dx, 0.0, 0.0);
                        out.push((SurfaceNode { point, weight: dx }, acc));
                    }
                }
            }
            _ => {
                let (rings, sectors) = (n, 2 * n);
                let phi_max = if hemi { 0.5 * pi } else { pi };
                let dphi = phi_max / rings as f64;
                let dpsi = 2.0 * pi / sectors as f64;
                for i in 0..rings {
                    let (pa, pb) = (i as f64 * dphi, (i + 1) as f64 * dphi);
                    let phi = 0.5 * (pa + pb);
                    let w = radius * radius * (pa.cos() - pb.cos()) * dpsi;
                    for j in 0..sectors {
                        let psi = (j as f64 + 0.5) * dpsi;
                        // Polar angle measured from the downward axis.
                        let point = Vector::new(phi.sin() * psi.cos(), phi.sin() * psi.sin(), -phi.cos()) * radius;
                        out.push((SurfaceNode { point, weight: w }, cap));
                    }
                }
                if hemi {
                    let e = Electrode { center: Vector::zeros(), radius };
                    for node in electrode_nodes(self, &e, n * n) {
                        out.push((node, acc));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// One electrode: boundary points within Euclidean distance `radius` of `center`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Electrode {
    pub center: Vector,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElectrodeLayout {
    pub electrodes: Vec<Electrode>,
    pub z: Vec<f64>,
    pub voltages: Vec<f64>,
}

/// A weighted surface quadrature node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceNode {
    pub point: Vector,
    pub weight: f64,
}

impl ElectrodeLayout {
    pub fn new(
        domain: &Domain,
        electrodes: Vec<Electrode>,
        z: Vec<f64>,
        voltages: Vec<f64>,
    ) -> Result<Self> {
        let n = electrodes.len();
        if z.len() != n || voltages.len() != n {
            return Err(Error::config(
                "layout",
                format!("{n} electrodes but {} impedances and {} voltages", z.len(), voltages.len()),
            ));
        }
        if domain.is_whole_space() {
            return Err(Error::config("layout", "whole space has no boundary for electrodes"));
        }
        let tol = 1e-10 * domain.scale();
        for (l, e) in electrodes.iter().enumerate() {
            let path = format!("layout.electrodes[{l}]");
            if !(e.radius > 0.0 && e.radius.is_finite()) {
                return Err(Error::config(format!("{path}.radius"), "radius must be positive"));
            }
            let sd = domain.signed_distance(&e.center)?;
            let frame = domain.nearest_boundary_frame(&e.center, f64::INFINITY)?;
            if sd.abs() > tol || frame.part != BoundaryPart::Accessible {
                return Err(Error::config(
                    format!("{path}.center"),
                    "center must lie on the accessible boundary",
                ));
            }
            match *domain {
                Domain::Hemisphere { radius, .. } => {
                    if domain.flat_norm(&e.center) + e.radius > radius + tol {
                        return Err(Error::config(
                            format!("{path}.radius"),
                            "electrode leaves the accessible boundary",
                        ));
                    }
                }
                Domain::Ball { radius, .. } => {
                    if e.radius >= 2.0 * radius {
                        return Err(Error::config(
                            format!("{path}.radius"),
                            "electrode covers the whole sphere",
                        ));
                    }
                }
                _ => {}
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let gap = (electrodes[i].center - electrodes[j].center).norm();
                if gap < electrodes[i].radius + electrodes[j].radius {
                    return Err(Error::config(
                        format!("layout.electrodes[{j}]"),
                        format!("overlaps electrode {i}"),
                    ));
                }
            }
        }
        for (l, &zl) in z.iter().enumerate() {
            if !(zl > 0.0 && zl.is_finite()) {
                return Err(Error::config(format!("layout.z[{l}]"), "contact impedance must be positive"));
            }
        }
        if voltages.iter().any(|u| !u.is_finite()) {
            return Err(Error::config("layout.voltages", "voltages must be finite"));
        }
        Ok(ElectrodeLayout {
            electrodes,
            z,
            voltages,
        })
    }

    pub fn len(&self) -> usize {
        self.electrodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.electrodes.is_empty()
    }

    pub fn voltage_sum(&self) -> f64 {
        self.voltages.iter().sum()
    }

    pub fn check_grounding(&self) -> Result<()> {
        let scale = self.voltages.iter().map(|u| u.abs()).fold(1.0, f64::max);
        if self.voltage_sum().abs() > 1e-12 * scale {
            return Err(Error::Precondition(format!(
                "grounding violated: sum of voltages is {}",
                self.voltage_sum()
            )));
        }
        Ok(())
    }

    pub fn electrode_at(&self, y: &Vector) -> Option<usize> {
        self.electrodes
            .iter()
            .position(|e| (y - e.center).norm() < e.radius)
    }

    /// `(f, g)` at a boundary point that is known to be accessible.
    #[inline]
    pub fn eval_point(&self, y: &Vector) -> (f64, f64) {
        match self.electrode_at(y) {
            Some(l) => (self.voltages[l] / self.z[l], 1.0 / self.z[l]),
            None => (0.0, 0.0),
        }
    }

    pub fn with_voltages(&self, voltages: Vec<f64>) -> Self {
        ElectrodeLayout {
            voltages,
            ..self.clone()
        }
    }

    pub fn with_impedances(&self, z: Vec<f64>) -> Self {
        ElectrodeLayout { z, ..self.clone() }
    }
}

pub fn electrode_eval(layout: &ElectrodeLayout, frame: &BoundaryFrame) -> Result<(f64, f64)> {
    if frame.part != BoundaryPart::Accessible {
        return Err(Error::DomainMisuse(
            "electrode data queried on the inaccessible boundary".into(),
        ));
    }
    Ok(layout.eval_point(&frame.point))
}

/// Surface measure of an electrode.
pub fn electrode_area(domain: &Domain, e: &Electrode) -> f64 {
    let rho = e.radius;
    match (*domain, domain.dim()) {
        (_, 1) => 1.0,
        (Domain::Ball { radius, .. }, 2) => 4.0 * radius * (rho / (2.0 * radius)).min(1.0).asin(),
        (_, 2) => 2.0 * rho,
        // A chord ball on a sphere of any radius has area pi rho^2, same as the flat disk.
        _ => std::f64::consts::PI * rho * rho,
    }
}

/// Midpoint quadrature over an electrode; weights sum to its area.
///
/// In d = 2 the electrode is split into `n` equal pieces; in d = 3 into
/// `rings x sectors` polar cells with `rings = round(sqrt(n))`.
pub fn electrode_nodes(domain: &Domain, e: &Electrode, n: usize) -> Vec<SurfaceNode> {
    let n = n.max(1);
    let dim = domain.dim();
    let d = dim - 1;
    let pi = std::f64::consts::PI;
    match (*domain, dim) {
        (_, 1) => vec![SurfaceNode {
            point: e.center,
            weight: 1.0,
        }],
        (Domain::Ball { radius, .. }, 2) => {
            let theta_c = e.center[1].atan2(e.center[0]);
            let alpha = 2.0 * (e.radius / (2.0 * radius)).min(1.0).asin();
            let dth = 2.0 * alpha / n as f64;
            (0..n)
                .map(|k| {
                    let th = theta_c - alpha + (k as f64 + 0.5) * dth;
                    SurfaceNode {
                        point: Vector::new(radius * th.cos(), radius * th.sin(), 0.0),
                        weight: radius * dth,
                    }
                })
                .collect()
        }
        (_, 2) => {
            let dx = 2.0 * e.radius / n as f64;
            (0..n)
                .map(|k| {
                    let mut p = e.center;
                    p[0] += -e.radius + (k as f64 + 0.5) * dx;
                    p[d] = 0.0;
                    SurfaceNode { point: p, weight: dx }
                })
                .collect()
        }
        (Domain::Ball { radius, .. }, _) => {
            let rings = ((n as f64).sqrt().round() as usize).max(1);
            let sectors = (n / rings).max(1);
            let c = e.center / radius;
            let (t1, t2) = tangent_basis(&c);
            let phi_max = 2.0 * (e.radius / (2.0 * radius)).min(1.0).asin();
            let dphi = phi_max / rings as f64;
            let dpsi = 2.0 * pi / sectors as f64;
            let mut nodes = Vec::with_capacity(rings * sectors);
            for i in 0..rings {
                let (pa, pb) = (i as f64 * dphi, (i + 1) as f64 * dphi);
                let phi = 0.5 * (pa + pb);
                let w = radius * radius * (pa.cos() - pb.cos()) * dpsi;
                for j in 0..sectors {
                    let psi = (j as f64 + 0.5) * dpsi;
                    let dir = c * phi.cos() + (t1 * psi.cos() + t2 * psi.sin()) * phi.sin();
                    nodes.push(SurfaceNode {
                        point: dir * radius,
                        weight: w,
                    });
                }
            }
            nodes
        }
        _ => {
            let rings = ((n as f64).sqrt().round() as usize).max(1);
            let sectors = (n / rings).max(1);
            let dr = e.radius / rings as f64;
            let dpsi = 2.0 * pi / sectors as f64;
            let mut nodes = Vec::with_capacity(rings * sectors);
            for i in 0..rings {
                let (ra, rb) = (i as f64 * dr, (i + 1) as f64 * dr);
                let r = 0.5 * (ra + rb);
                let w = 0.5 * (rb * rb - ra * ra) * dpsi;
                for j in 0..sectors {
                    let psi = (j as f64 + 0.5) * dpsi;
                    let mut p = e.center;
                    p[0] += r * psi.cos();
                    p[1] += r * psi.sin();
                    p[d] = 0.0;
                    nodes.push(SurfaceNode { point: p, weight: w });
                }
            }
            nodes
        }
    }
}

/// Default number of quadrature nodes per electrode.
pub fn default_nodes_per_electrode(dim: usize) -> usize {
    if dim >= 3 {
        25
    } else {
        8
    }
}

fn tangent_basis(n: &Vector) -> (Vector, Vector) {
    let helper = if n[0].abs() < 0.9 {
        Vector::new(1.0, 0.0, 0.0)
    } else {
        Vector::new(0.0, 1.0, 0.0)
    };
    let t1 = (helper - n * n.dot(&helper)).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}
