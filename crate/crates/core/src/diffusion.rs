//! Path simulation for reflecting diffusions generated by `div(kappa grad)`.
//!
//! Interior moves are Euler steps `x + b h + B sqrt(h) xi` for smooth media.
//! Piecewise-constant media move by the exact one-dimensional skew
//! transition across the nearest interface (coordinate-wise for
//! axis-aligned cells). Exits through the boundary are mirrored along the
//! co-normal `kappa nu` or absorbed, depending on the role of the boundary
//! part that was hit.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundaryFrame, BoundaryPart, Domain, ElectrodeLayout};
use crate::linalg::{Matrix, Vector};
use crate::media::{ConductivityField, Phase};
use crate::rng::PathRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathStatus {
    Running,
    Absorbed,
    Truncated,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathState {
    pub path_id: u64,
    pub t: f64,
    pub x: Vector,
    /// Boundary local time.
    pub l: f64,
    /// Interface local time (diagnostic).
    pub l0: f64,
    /// Robin accumulator `int g dL`.
    pub a: f64,
    pub payoff: f64,
    pub status: PathStatus,
    pub steps: u64,
    pub reflections: u64,
    pub clamps: u32,
}

impl PathState {
    pub fn new(path_id: u64, x: Vector) -> Self {
        PathState {
            path_id,
            t: 0.0,
            x,
            l: 0.0,
            l0: 0.0,
            a: 0.0,
            payoff: 0.0,
            status: PathStatus::Running,
            steps: 0,
            reflections: 0,
            clamps: 0,
        }
    }

    /// The Robin multiplicative functional `exp(-A)`.
    pub fn gauge(&self) -> f64 {
        (-self.a).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BcRole {
    Reflect,
    Absorb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BcRoles {
    pub accessible: BcRole,
    pub inaccessible: BcRole,
}

impl BcRoles {
    pub const REFLECT: BcRoles = BcRoles {
        accessible: BcRole::Reflect,
        inaccessible: BcRole::Reflect,
    };
    pub const ABSORB: BcRoles = BcRoles {
        accessible: BcRole::Absorb,
        inaccessible: BcRole::Absorb,
    };
    pub const MIXED: BcRoles = BcRoles {
        accessible: BcRole::Reflect,
        inaccessible: BcRole::Absorb,
    };

    pub fn role(&self, part: BoundaryPart) -> BcRole {
        match part {
            BoundaryPart::Accessible => self.accessible,
            BoundaryPart::Inaccessible => self.inaccessible,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepperConfig {
    pub h: f64,
    /// Boundary band; `None` means `10 sqrt(h c)`.
    pub r_snap: Option<f64>,
    pub max_time: f64,
    pub max_reflections: usize,
    /// Interfaces farther than this many step deviations are ignored.
    pub interface_band: f64,
}

impl Default for StepperConfig {
    fn default() -> Self {
        StepperConfig {
            h: 1e-3,
            r_snap: None,
            max_time: 10.0,
            max_reflections: 8,
            interface_band: 8.0,
        }
    }
}

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::config("stepper.h", "time step must be positive"));
        }
        if !(self.max_time >= 0.0) {
            return Err(Error::config("stepper.max_time", "horizon must be nonnegative"));
        }
        if let Some(r) = self.r_snap {
            if !(r > 0.0) {
                return Err(Error::config("stepper.r_snap", "must be positive"));
            }
        }
        if self.interface_band <= 0.0 {
            return Err(Error::config("stepper.interface_band", "must be positive"));
        }
        Ok(())
    }

    pub fn snap_radius(&self, ellipticity: f64) -> f64 {
        self.r_snap
            .unwrap_or_else(|| 10.0 * (self.h * ellipticity).sqrt())
    }
}

/// Boundary data integrated against the local time.
#[derive(Clone, Copy)]
pub enum BoundaryData<'a> {
    Nothing,
    /// Flux density `f` on the accessible boundary, `g = 0`.
    Flux(&'a (dyn Fn(&Vector) -> f64 + Sync)),
    /// Electrode data `(f, g)`.
    Electrodes(&'a ElectrodeLayout),
}

/// Payoff `int weight(t) exp(-A_t) f dL` with `weight = exp(-alpha t)`.
#[derive(Clone, Copy)]
pub struct Functional<'a> {
    pub data: BoundaryData<'a>,
    pub alpha: f64,
    /// Paths stop once `exp(-A) < gauge_tol` (disabled at 0).
    pub gauge_tol: f64,
    /// Multiplies `g`; 0 turns the Robin functional off.
    pub contact_scale: f64,
}

impl<'a> Functional<'a> {
    pub const NONE: Functional<'static> = Functional {
        data: BoundaryData::Nothing,
        alpha: 0.0,
        gauge_tol: 0.0,
        contact_scale: 1.0,
    };

    pub fn new(data: BoundaryData<'a>) -> Self {
        Functional {
            data,
            ..Functional::NONE
        }
    }

    fn eval(&self, frame: &BoundaryFrame) -> (f64, f64) {
        if frame.part != BoundaryPart::Accessible {
            return (0.0, 0.0);
        }
        match self.data {
            BoundaryData::Nothing => (0.0, 0.0),
            BoundaryData::Flux(f) => (f(&frame.point), 0.0),
            BoundaryData::Electrodes(layout) => {
                let (f, g) = layout.eval_point(&frame.point);
                (f, g * self.contact_scale)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Step,
    Reflect,
    Cross,
    Absorb,
    Clamp,
}

impl EventKind {
    fn name(&self) -> &'static str {
        match self {
            EventKind::Step => "step",
            EventKind::Reflect => "reflect",
            EventKind::Cross => "cross",
            EventKind::Absorb => "absorb",
            EventKind::Clamp => "clamp",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub t: f64,
    pub x: Vector,
    pub kind: EventKind,
    pub dl: f64,
}

/// Per-path event record for debugging.
#[derive(Clone, Debug, Default)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    fn push(&mut self, t: f64, x: Vector, kind: EventKind, dl: f64) {
        self.events.push(Event { t, x, kind, dl });
    }

    pub fn write_csv<W: Write>(&self, mut w: W, dim: usize) -> Result<()> {
        let coords: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
        writeln!(w, "t,{},event,dl", coords.join(","))?;
        for e in &self.events {
            let xs: Vec<String> = (0..dim).map(|i| format!("{:.17e}", e.x[i])).collect();
            writeln!(w, "{:.17e},{},{},{:.17e}", e.t, xs.join(","), e.kind.name(), e.dl)?;
        }
        Ok(())
    }
}

/// Everything a path needs besides its own state and random stream.
#[derive(Clone, Copy)]
pub struct PathContext<'a> {
    pub field: &'a ConductivityField,
    pub domain: &'a Domain,
    pub roles: BcRoles,
    pub cfg: &'a StepperConfig,
    pub functional: Functional<'a>,
    sqrt_h: f64,
    r_snap: f64,
    band: f64,
    probe: f64,
}

impl<'a> PathContext<'a> {
    pub fn new(
        field: &'a ConductivityField,
        domain: &'a Domain,
        roles: BcRoles,
        cfg: &'a StepperConfig,
        functional: Functional<'a>,
    ) -> Self {
        let c = field.bound();
        PathContext {
            field,
            domain,
            roles,
            cfg,
            functional,
            sqrt_h: cfg.h.sqrt(),
            r_snap: cfg.snap_radius(c),
            band: cfg.interface_band * (2.0 * c * cfg.h).sqrt(),
            probe: 1e-9 * domain.scale(),
        }
    }

    /// Whether the interface through `face` with normal `n` (pointing away
    /// from the current phase) lies on the boundary with the other side outside.
    fn face_on_boundary(&self, face: &Vector, n: &Vector) -> bool {
        !self.domain.is_whole_space() && !self.domain.contains(&(face + n * self.probe))
    }

    pub fn r_snap(&self) -> f64 {
        self.r_snap
    }
}

fn face_point(x: &Vector, axis: usize, delta: f64) -> Vector {
    let mut y = *x;
    y[axis] += delta;
    y
}

/// Mirror image of `x_out` in the tangent plane of `frame`, displaced along
/// the co-normal `kappa nu`. Returns the new point and the local-time
/// increment `2 p / (nu . kappa nu)` for penetration depth `p`.
pub fn apply_reflection(x_out: &Vector, frame: &BoundaryFrame, kappa: &Matrix) -> Result<(Vector, f64)> {
    let p = (x_out - frame.point).dot(&frame.normal).max(0.0);
    let kn = kappa * frame.normal;
    let q = frame.normal.dot(&kn);
    if !(q > 0.0) {
        return Err(Error::NumericalFailure {
            path_id: u64::MAX,
            reason: format!("co-normal has nonpositive normal component {q}"),
        });
    }
    let s = 2.0 * p / q;
    Ok((x_out - kn * s, s))
}

/// A flat interface; region 1 lies on the side opposite to `normal`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlatInterface {
    pub point: Vector,
    pub normal: Vector,
    pub kappa1: f64,
    pub kappa2: f64,
}

impl FlatInterface {
    pub fn level(&self, x: &Vector) -> f64 {
        (x - self.point).dot(&self.normal)
    }
}

/// Resamples the side of a proposal that crossed `iface`: the endpoint lands
/// in region `i` with probability `kappa_i / (kappa_1 + kappa_2)` at the
/// normal depth of the overshoot. Tangential components are kept.
pub fn apply_interface_crossing(
    x_from: &Vector,
    x_prop: &Vector,
    iface: &FlatInterface,
    rng: &mut PathRng,
) -> Vector {
    let (l0, l1) = (iface.level(x_from), iface.level(x_prop));
    if (l0 < 0.0) == (l1 < 0.0) {
        return *x_prop;
    }
    let overshoot = l1.abs();
    let p1 = iface.kappa1 / (iface.kappa1 + iface.kappa2);
    let target = if rng.uniform() < p1 { -overshoot } else { overshoot };
    x_prop + iface.normal * (target - l1)
}

/// Outcome of the exact skew transition along one normal direction.
struct SkewMove {
    /// Displacement along the normal, positive towards the other phase.
    shift: f64,
    hit: bool,
    l0: f64,
}

/// One step of skew Brownian motion in the coordinate scaled by the local
/// deviation on each side. `z` is a standard normal, positive towards the
/// interface at distance `dist`.
#[inline]
fn skew_move(dist: f64, sig_here: f64, sig_there: f64, z: f64, h: f64, sqrt_h: f64, rng: &mut PathRng) -> SkewMove {
    let y0 = dist / sig_here;
    let free = y0 - sqrt_h * z;
    let r = free.abs();
    let hit = free < 0.0 || rng.uniform() < (-2.0 * y0 * r / h).exp();
    let l0 = 2.0 * sig_here * (-free).max(0.0);
    if !hit {
        return SkewMove {
            shift: dist - sig_here * r,
            hit,
            l0,
        };
    }
    let shift = if rng.uniform() < sig_there / (sig_here + sig_there) {
        dist + sig_there * r
    } else {
        dist - sig_here * r
    };
    SkewMove { shift, hit, l0 }
}

fn numerical(state: &PathState, reason: impl Into<String>) -> Error {
    Error::NumericalFailure {
        path_id: state.path_id,
        reason: reason.into(),
    }
}

/// Interior move without boundary interaction.
struct Proposal {
    y: Vector,
    crossed: bool,
    /// Conductivity that drove the move; an overshoot past the boundary scales with it.
    kappa: Matrix,
}

fn propose(state: &mut PathState, ctx: &PathContext, rng: &mut PathRng) -> Result<Proposal> {
    let field = ctx.field;
    let dim = field.dim();
    let h = ctx.cfg.h;
    let x = state.x;
    if !field.is_piecewise() {
        let xi = rng.normal_vector(dim);
        let b = field.diffusion_factor(&x);
        let mut y = x + b * xi * ctx.sqrt_h;
        if !field.is_constant() {
            y += field.drift_at(&x)? * h;
        }
        return Ok(Proposal { y, crossed: false, kappa: field.kappa_at(&x) });
    }
    if field.is_axis_aligned() {
        let mut y = x;
        let mut crossed = false;
        let mut kappa = Matrix::zeros();
        for i in 0..dim {
            let z = rng.normal();
            let here_phase = field.phase_at(&y);
            let k_here = here_phase.kappa[(i, i)];
            let sig_here = (2.0 * k_here).sqrt();
            let face = field.axis_faces(&y, i).and_then(|f| {
                let mut best: Option<(f64, f64, f64)> = None;
                for (dist, there, dir) in [(f.below.0, f.below.1, -1.0), (f.above.0, f.above.1, 1.0)] {
                    let k_there = there.kappa[(i, i)];
                    if k_there != k_here
                        && dist <= ctx.band
                        && best.is_none_or(|b| dist < b.0)
                        && !ctx.face_on_boundary(&face_point(&y, i, dir * dist), &(Vector::ith(i, dir)))
                    {
                        best = Some((dist, k_there, dir));
                    }
                }
                best
            });
            match face {
                None => {
                    y[i] += sig_here * ctx.sqrt_h * z;
                    kappa[(i, i)] = k_here;
                }
                Some((dist, k_there, dir)) => {
                    let m = skew_move(dist, sig_here, (2.0 * k_there).sqrt(), dir * z, h, ctx.sqrt_h, rng);
                    y[i] += dir * m.shift;
                    state.l0 += m.l0;
                    crossed |= m.hit;
                    kappa[(i, i)] = if m.shift > dist { k_there } else { k_here };
                }
            }
        }
        return Ok(Proposal { y, crossed, kappa });
    }
    let xi = rng.normal_vector(dim);
    // A face lying on the boundary is not an interface of the problem.
    let local = field
        .local_interface(&x, ctx.band)
        .filter(|li| !ctx.face_on_boundary(&(x + li.normal * li.distance), &li.normal));
    match local {
        None => {
            let b = field.diffusion_factor(&x);
            Ok(Proposal { y: x + b * xi * ctx.sqrt_h, crossed: false, kappa: field.kappa_at(&x) })
        }
        Some(li) => {
            let n = li.normal;
            let incr = |p: &Phase| p.factor * xi * ctx.sqrt_h;
            let d_here = incr(&li.here);
            let sig_here = (2.0 * li.here.normal_conductivity(&n)).sqrt();
            let sig_there = (2.0 * li.there.normal_conductivity(&n)).sqrt();
            let z = n.dot(&d_here) / (sig_here * ctx.sqrt_h);
            let m = skew_move(li.distance, sig_here, sig_there, z, h, ctx.sqrt_h, rng);
            let tangential = if m.hit {
                (d_here + incr(&li.there)) * 0.5
            } else {
                d_here
            };
            let tangential = tangential - n * n.dot(&tangential);
            state.l0 += m.l0;
            let beyond = m.shift > li.distance;
            Ok(Proposal {
                y: x + tangential + n * m.shift,
                crossed: m.hit,
                kappa: if beyond { li.there.kappa } else { li.here.kappa },
            })
        }
    }
}

/// Accounts a reflection of local-time increment `dl` at `frame`.
fn accumulate(state: &mut PathState, ctx: &PathContext, frame: &BoundaryFrame, dl: f64, t: f64) {
    state.l += dl;
    state.reflections += 1;
    let (f, g) = ctx.functional.eval(frame);
    let weight = if ctx.functional.alpha > 0.0 {
        (-ctx.functional.alpha * t).exp()
    } else {
        1.0
    };
    let gauge = (-state.a).exp();
    if f != 0.0 {
        // Exact integral of exp(-A) over the increment when g is constant on it.
        let integral = if g > 0.0 { (1.0 - (-g * dl).exp()) / g } else { dl };
        state.payoff += weight * f * gauge * integral;
    }
    state.a += g * dl;
}

/// Advances `state` by one time step.
pub fn step(state: &mut PathState, ctx: &PathContext, rng: &mut PathRng, mut log: Option<&mut EventLog>) -> Result<()> {
    if state.status != PathStatus::Running {
        return Ok(());
    }
    let start = state.x;
    let Proposal { mut y, crossed, kappa: driving } = propose(state, ctx, rng)?;
    if !y.iter().all(|v| v.is_finite()) {
        return Err(numerical(state, "non-finite increment"));
    }
    let t = state.t + ctx.cfg.h;
    state.t = t;
    state.steps += 1;
    if let Some(log) = log.as_deref_mut() {
        log.push(t, y, if crossed { EventKind::Cross } else { EventKind::Step }, 0.0);
    }
    let domain = ctx.domain;
    if domain.is_whole_space() || domain.signed_distance(&y)? <= 0.0 {
        state.x = y;
        return Ok(());
    }
    for _ in 0..ctx.cfg.max_reflections {
        let Some(exit) = domain.first_exit(&start, &y) else {
            state.x = y;
            return Ok(());
        };
        if ctx.roles.role(exit.part) == BcRole::Absorb {
            absorb(state, exit.point, log);
            return Ok(());
        }
        let frame = domain
            .nearest_boundary_frame(&y, ctx.r_snap)
            .map_err(|e| numerical(state, e.to_string()))?;
        if ctx.roles.role(frame.part) == BcRole::Absorb {
            absorb(state, frame.point, log);
            return Ok(());
        }
        // Co-normal of the phase at the reflection point, taken from inside the domain.
        let kappa = ctx.field.kappa_at(&(frame.point - frame.normal * ctx.probe));
        let (x_in, _) = apply_reflection(&y, &frame, &kappa).map_err(|e| numerical(state, e.to_string()))?;
        let q = frame.normal.dot(&(driving * frame.normal));
        let dl = 2.0 * (y - frame.point).dot(&frame.normal).max(0.0) / q;
        accumulate(state, ctx, &frame, dl, t);
        if let Some(log) = log.as_deref_mut() {
            log.push(t, x_in, EventKind::Reflect, dl);
        }
        y = x_in;
    }
    if domain.signed_distance(&y)? > 0.0 {
        let frame = domain.nearest_boundary_frame(&y, f64::INFINITY)?;
        y = frame.point;
        state.clamps += 1;
        if let Some(log) = log.as_deref_mut() {
            log.push(t, y, EventKind::Clamp, 0.0);
        }
    }
    state.x = y;
    Ok(())
}

fn absorb(state: &mut PathState, at: Vector, log: Option<&mut EventLog>) {
    state.x = at;
    state.status = PathStatus::Absorbed;
    if let Some(log) = log {
        log.push(state.t, at, EventKind::Absorb, 0.0);
    }
}

/// Steps a running path until `until`, absorption or gauge exhaustion.
pub fn advance(state: &mut PathState, ctx: &PathContext, rng: &mut PathRng, until: f64, mut log: Option<&mut EventLog>) -> Result<()> {
    let eps = 1e-9 * ctx.cfg.h;
    let f = &ctx.functional;
    while state.status == PathStatus::Running && state.t + eps < until {
        step(state, ctx, rng, log.as_deref_mut())?;
        if f.gauge_tol > 0.0 && state.gauge() < f.gauge_tol {
            state.status = PathStatus::Truncated;
        }
    }
    Ok(())
}

/// Simulates a path from `x0` until absorption, gauge exhaustion or `cfg.max_time`.
pub fn simulate_path(x0: &Vector, ctx: &PathContext, rng: &mut PathRng, path_id: u64, log: Option<&mut EventLog>) -> Result<PathState> {
    let mut state = PathState::new(path_id, *x0);
    advance(&mut state, ctx, rng, ctx.cfg.max_time, log)?;
    if state.status == PathStatus::Running {
        state.status = PathStatus::Truncated;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{matrix_from_rows, scaled_identity, unit, vector_from};
    use crate::media::{realize, InterfaceShape, KappaValue, MediumKind, MediumSpec};
    use crate::stats::Accumulator;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        vector_from(xs)
    }

    fn constant(dim: usize, k: f64) -> ConductivityField {
        realize(&MediumSpec::constant(dim, k), 0, 1.0).unwrap()
    }

    fn two_phase_1d(k1: f64, k2: f64) -> ConductivityField {
        let spec = MediumSpec::new(
            1,
            MediumKind::TwoPhase {
                interface: InterfaceShape::Hyperplane {
                    normal: vec![1.0],
                    offset: 0.0,
                },
                kappa1: k1,
                kappa2: k2,
            },
        );
        realize(&spec, 0, 1.0).unwrap()
    }

    #[test]
    fn interior_step_is_a_brownian_increment() {
        let field = constant(2, 0.5);
        let dom = Domain::HalfSpace { dim: 2 };
        let cfg = StepperConfig { h: 0.01, ..Default::default() };
        let ctx = PathContext::new(&field, &dom, BcRoles::REFLECT, &cfg, Functional::NONE);
        let mut state = PathState::new(0, v(&[0.0, -5.0]));
        let mut rng = PathRng::new(1, 0, 0, false);
        let mut twin = PathRng::new(1, 0, 0, false);
        step(&mut state, &ctx, &mut rng, None).unwrap();
        let xi = twin.normal_vector(2);
        assert!((state.x - (v(&[0.0, -5.0]) + xi * 0.1)).norm() < 1e-15);
        assert_eq!(state.l, 0.0);
        assert!((state.t - 0.01).abs() < 1e-15);
    }

    #[test]
    fn reflection_examples() {
        let frame = BoundaryFrame {
            point: v(&[1.0, 0.0]),
            normal: v(&[0.0, 1.0]),
            part: BoundaryPart::Accessible,
        };
        let (x_in, dl) = apply_reflection(&v(&[1.0, 0.3]), &frame, &scaled_identity(2, 0.5)).unwrap();
        assert!((x_in - v(&[1.0, -0.3])).norm() < 1e-15);
        assert!((dl - 1.2).abs() < 1e-15);

        let (x_in, dl) = apply_reflection(&v(&[1.0, 0.0]), &frame, &scaled_identity(2, 1.0)).unwrap();
        assert_eq!(x_in, v(&[1.0, 0.0]));
        assert_eq!(dl, 0.0);

        let k = matrix_from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]);
        let x_out = v(&[0.2, 0.4]);
        let (x_in, dl) = apply_reflection(&x_out, &frame, &k).unwrap();
        let d = x_in - x_out;
        assert!((d[0] * 1.0 - d[1] * 0.5).abs() < 1e-15);
        assert!((x_in[1] + 0.4).abs() < 1e-15);
        assert!((dl - 0.8).abs() < 1e-15);
    }

    #[test]
    fn absorption_at_the_cap() {
        let field = constant(2, 1.0);
        let dom = Domain::Hemisphere { dim: 2, radius: 1.0 };
        let cfg = StepperConfig { h: 0.04, ..Default::default() };
        let ctx = PathContext::new(&field, &dom, BcRoles::MIXED, &cfg, Functional::NONE);
        let mut absorbed = 0;
        for k in 0..200 {
            let mut rng = PathRng::new(3, 0, k, false);
            let s = simulate_path(&v(&[0.0, -0.97]), &ctx, &mut rng, k, None).unwrap();
            if s.status == PathStatus::Absorbed {
                absorbed += 1;
                assert!((s.x.norm() - 1.0).abs() < 1e-12);
                assert!(s.x[1] <= 0.0);
            }
        }
        assert!(absorbed > 150);
    }

    #[test]
    fn zero_horizon_returns_initial_state() {
        let field = constant(2, 1.0);
        let dom = Domain::Ball { dim: 2, radius: 1.0 };
        let cfg = StepperConfig { max_time: 0.0, ..Default::default() };
        let ctx = PathContext::new(&field, &dom, BcRoles::REFLECT, &cfg, Functional::NONE);
        let mut rng = PathRng::new(0, 0, 0, false);
        let x0 = v(&[0.1, 0.2]);
        let s = simulate_path(&x0, &ctx, &mut rng, 7, None).unwrap();
        let mut expected = PathState::new(7, x0);
        expected.status = PathStatus::Truncated;
        assert_eq!(s, expected);
    }

    #[test]
    fn unit_flux_payoff_is_the_local_time() {
        let field = constant(2, 1.0);
        let dom = Domain::Ball { dim: 2, radius: 1.0 };
        let cfg = StepperConfig { h: 1e-3, max_time: 1.0, ..Default::default() };
        let one = |_: &Vector| 1.0;
        let ctx = PathContext::new(&field, &dom, BcRoles::REFLECT, &cfg, Functional::new(BoundaryData::Flux(&one)));
        for k in 0..20 {
            let mut rng = PathRng::new(5, 0, k, false);
            let s = simulate_path(&v(&[0.9, 0.0]), &ctx, &mut rng, k, None).unwrap();
            assert!(s.l > 0.0);
            assert!((s.payoff - s.l).abs() < 1e-12 * s.l.max(1.0));
            assert_eq!(s.a, 0.0);
        }
    }

    #[test]
    fn gauge_is_nonincreasing_and_local_time_moves_only_at_reflections() {
        let dom = Domain::Ball { dim: 2, radius: 1.0 };
        let layout = ElectrodeLayout::new(
            &dom,
            vec![
                crate::geometry::Electrode { center: v(&[1.0, 0.0]), radius: 0.6 },
                crate::geometry::Electrode { center: v(&[-1.0, 0.0]), radius: 0.6 },
            ],
            vec![1.0, 1.0],
            vec![1.0, -1.0],
        )
        .unwrap();
        let field = constant(2, 1.0);
        let cfg = StepperConfig { h: 1e-3, max_time: 3.0, ..Default::default() };
        let ctx = PathContext::new(&field, &dom, BcRoles::REFLECT, &cfg, Functional::new(BoundaryData::Electrodes(&layout)));
        let mut state = PathState::new(0, v(&[0.5, 0.1]));
        let mut rng = PathRng::new(9, 0, 0, false);
        let mut log = EventLog::default();
        let mut last = (state.a, state.l);
        while state.t < 3.0 {
            let n_before = log.events.len();
            step(&mut state, &ctx, &mut rng, Some(&mut log)).unwrap();
            assert!(state.a >= last.0 && state.l >= last.1);
            let reflected = log.events[n_before..].iter().any(|e| e.kind == EventKind::Reflect);
            if !reflected {
                assert_eq!(state.l, last.1);
            }
            assert!(dom.signed_distance(&state.x).unwrap() <= 1e-12);
            last = (state.a, state.l);
        }
        assert!(state.a > 0.0);
        let mut buf = Vec::new();
        log.write_csv(&mut buf, 2).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x0,x1,event,dl\n"));
        assert!(text.contains(",reflect,"));
    }

    #[test]
    fn displacement_covariance_is_two_kappa_t() {
        let spec = MediumSpec::new(
            2,
            MediumKind::Constant {
                kappa: KappaValue::Matrix(vec![vec![1.0, 0.5], vec![0.5, 1.0]]),
            },
        );
        let field = realize(&spec, 0, 1.0).unwrap();
        let dom = Domain::WholeSpace { dim: 2 };
        let cfg = StepperConfig { h: 0.05, max_time: 1.0, ..Default::default() };
        let ctx = PathContext::new(&field, &dom, BcRoles::REFLECT, &cfg, Functional::NONE);
        let mut acc = [Accumulator::new(), Accumulator::new(), Accumulator::new()];
        for k in 0..20_000 {
            let mut rng = PathRng::new(2, 0, k, false);
            let s = simulate_path(&Vector::zeros(), &ctx, &mut rng, k, None).unwrap();
            acc[0].push(s.x[0] * s.x[0]);
            acc[1].push(s.x[0] * s.x[1]);
            acc[2].push(s.x[1] * s.x[1]);
        }
        for (a, target) in acc.iter().zip([2.0, 1.0, 2.0]) {
            assert!((a.mean() - target).abs() < 3.0 * a.stderr(), "{} vs {target}", a.mean());
        }
    }

    #[test]
    fn reflected_local_time_mean() {
        // R = |W| for standard Brownian motion; the local time here is twice
        // the semimartingale one, so E L_1 = 2 E|W_1| = 2 sqrt(2/pi).
        let field = constant(1, 0.5);
        let dom = Domain::HalfSpace { dim: 1 };
        let cfg = StepperConfig { h: 1e-3, max_time: 1.0, ..Default::default() };
        let ctx = PathContext::new(&field, &dom, BcRoles::REFLECT, &cfg, Functional::NONE);
        let mut acc = Accumulator::new();
        for k in 0..20_000 {
            let mut rng = PathRng::new(4, 0, k, false);
            acc.push(simulate_path(&Vector::zeros(), &ctx, &mut rng, k, None).unwrap().l);
        }
        let exact = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((acc.mean() - exact).abs() < 3.0 * acc.stderr() + 0.01, "{}", acc.mean());
    }

    #[test]
    fn crossing_rule_frequencies() {
        let iface = |k1, k2| FlatInterface {
            point: Vector::zeros(),
            normal: unit(1, 0),
            kappa1: k1,
            kappa2: k2,
        };
        let mut rng = PathRng::new(8, 0, 0, false);
        let n = 100_000;
        let side1 = (0..n)
            .filter(|_| apply_interface_crossing(&v(&[-0.05]), &v(&[0.1]), &iface(3.0, 1.0), &mut rng)[0] < 0.0)
            .count();
        let p = side1 as f64 / n as f64;
        assert!((p - 0.75).abs() < 4.0 * (0.75 * 0.25 / n as f64).sqrt());
        let side1 = (0..n)
            .filter(|_| apply_interface_crossing(&v(&[-0.05]), &v(&[0.1]), &iface(2.0, 2.0), &mut rng)[0] < 0.0)
            .count();
        assert!((side1 as f64 / n as f64 - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt());
        // Outcomes sit at the overshoot depth on either side.
        for _ in 0..100 {
            let y = apply_interface_crossing(&v(&[-0.05, 0.3]), &v(&[0.1, 0.7]), &FlatInterface {
                point: Vector::zeros(),
                normal: unit(2, 0),
                kappa1: 3.0,
                kappa2: 1.0,
            }, &mut rng);
            assert!((y[0].abs() - 0.1).abs() < 1e-15);
            assert_eq!(y[1], 0.7);
        }
        // No crossing, no change.
        assert_eq!(apply_interface_crossing(&v(&[-0.05]), &v(&[-0.1]), &iface(3.0, 1.0), &mut rng), v(&[-0.1]));
    }

    /// Nearest-neighbour walk with edge conductances `k1` left and `k2` right of 0.
    fn lattice_exit_left(k1: f64, k2: f64, m: i64, n: usize, seed: u64) -> f64 {
        let mut rng = PathRng::new(seed, 0, 0, false);
        let mut left = 0;
        for _ in 0..n {
            let mut i = 0i64;
            while i.abs() < m {
                let cl = if i <= 0 { k1 } else { k2 };
                let cr = if i < 0 { k1 } else { k2 };
                i += if rng.uniform() < cl / (cl + cr) { -1 } else { 1 };
            }
            if i < 0 {
                left += 1;
            }
        }
        left as f64 / n as f64
    }

    #[test]
    fn skew_stepper_matches_the_lattice_walk() {
        let n = 20_000;
        let oracle = lattice_exit_left(3.0, 1.0, 10, n, 1);
        let bin = (0.75 * 0.25 / n as f64).sqrt();
        assert!((oracle - 0.75).abs() < 4.0 * bin, "lattice {oracle}");

        let field = two_phase_1d(3.0, 1.0);
        let dom = Domain::WholeSpace { dim: 1 };
        let cfg = StepperConfig { h: 1e-3, ..Default::default() };
        let ctx = PathContext::new(&field, &dom, BcRoles::REFLECT, &cfg, Functional::NONE);
        let mut left = 0;
        for k in 0..n as u64 {
            let mut rng = PathRng::new(6, 0, k, false);
            let mut s = PathState::new(k, Vector::zeros());
            while s.x[0].abs() < 0.5 {
                step(&mut s, &ctx, &mut rng, None).unwrap();
            }
            if s.x[0] < 0.0 {
                left += 1;
            }
        }
        let p = left as f64 / n as f64;
        assert!((p - oracle).abs() < 4.0 * bin * std::f64::consts::SQRT_2, "stepper {p} vs lattice {oracle}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn reflecting_paths_stay_inside(seed in any::<u64>(), which in 0usize..3, k in 0.3f64..3.0) {
            let dom = [
                Domain::Ball { dim: 2, radius: 1.0 },
                Domain::Hemisphere { dim: 3, radius: 1.0 },
                Domain::HalfSpace { dim: 2 },
            ][which];
            let field = constant(dom.dim(), k);
            let cfg = StepperConfig { h: 0.01, max_time: 2.0, ..Default::default() };
            let ctx = PathContext::new(&field, &dom, BcRoles::REFLECT, &cfg, Functional::NONE);
            let mut rng = PathRng::new(seed, 0, 0, false);
            let mut s = PathState::new(0, vector_from(&[0.1, -0.2, -0.3][..dom.dim()]));
            for _ in 0..200 {
                step(&mut s, &ctx, &mut rng, None).unwrap();
                prop_assert!(dom.signed_distance(&s.x).unwrap() <= ctx.r_snap() * 1e-9);
            }
        }
    }
}
