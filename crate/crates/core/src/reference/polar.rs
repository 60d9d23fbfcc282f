//! Finite-volume solver on polar grids for the disk and the lower half-disk.
//!
//! Cells are annular sectors around the origin plus one central cell. Face
//! transmissibilities use chord lengths and centre distances, which makes
//! the scheme exact for affine solutions of the constant-coefficient
//! problem. Conductivities at faces are harmonic means of samples along the
//! segment joining the two centres, so interfaces inside a face segment are
//! seen with the right series resistance.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};
use crate::geometry::{electrode_area, BoundaryPart, Domain, ElectrodeLayout};
use crate::linalg::{isotropic_value, Vector};
use crate::media::ConductivityField;

use super::cg::{conjugate_gradient, CgReport, CsrMatrix};

pub type Data<'a> = &'a (dyn Fn(&Vector) -> f64 + Sync);

/// Boundary condition on one part of the boundary.
#[derive(Clone, Copy)]
pub enum FdBc<'a> {
    Dirichlet(Data<'a>),
    /// Co-normal flux `kappa du/dnu = f`.
    Flux(Data<'a>),
    /// `kappa du/dnu + g u = f` with electrode data.
    Electrodes(&'a ElectrodeLayout),
}

impl FdBc<'_> {
    fn robin(&self, y: &Vector) -> (f64, f64) {
        match self {
            FdBc::Dirichlet(_) => unreachable!(),
            FdBc::Flux(f) => (f(y), 0.0),
            FdBc::Electrodes(l) => l.eval_point(y),
        }
    }
}

/// `-div(kappa grad u) + alpha u = source` with the given boundary conditions.
#[derive(Clone, Copy)]
pub struct FdProblem<'a> {
    pub domain: &'a Domain,
    pub field: &'a ConductivityField,
    pub accessible: FdBc<'a>,
    pub inaccessible: FdBc<'a>,
    pub alpha: f64,
    pub source: Option<Data<'a>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarGrid {
    pub radius: f64,
    /// Rings including the central cell.
    pub nr: usize,
    pub ntheta: usize,
    pub half: bool,
}

impl PolarGrid {
    pub fn new(domain: &Domain, nr: usize, ntheta: usize) -> Result<Self> {
        let (radius, half) = match *domain {
            Domain::Ball { dim: 2, radius } => (radius, false),
            Domain::Hemisphere { dim: 2, radius } => (radius, true),
            _ => {
                return Err(Error::UnsupportedQuery(
                    "finite differences need a two-dimensional disk or half-disk".into(),
                ))
            }
        };
        if nr < 3 || ntheta < 4 {
            return Err(Error::config("oracle.grid", "need at least 3 rings and 4 sectors"));
        }
        Ok(PolarGrid {
            radius,
            nr,
            ntheta,
            half,
        })
    }

    pub fn dr(&self) -> f64 {
        self.radius / self.nr as f64
    }

    pub fn dtheta(&self) -> f64 {
        self.span() / self.ntheta as f64
    }

    fn theta0(&self) -> f64 {
        if self.half {
            PI
        } else {
            0.0
        }
    }

    fn span(&self) -> f64 {
        if self.half {
            PI
        } else {
            2.0 * PI
        }
    }

    pub fn n_cells(&self) -> usize {
        1 + (self.nr - 1) * self.ntheta
    }

    fn index(&self, i: usize, j: usize) -> usize {
        1 + (i - 1) * self.ntheta + j
    }

    fn r_center(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            (i as f64 + 0.5) * self.dr()
        }
    }

    fn theta_center(&self, j: usize) -> f64 {
        self.theta0() + (j as f64 + 0.5) * self.dtheta()
    }

    fn polar(r: f64, th: f64) -> Vector {
        Vector::new(r * th.cos(), r * th.sin(), 0.0)
    }

    pub fn center(&self, cell: usize) -> Vector {
        if cell == 0 {
            return Vector::zeros();
        }
        let i = 1 + (cell - 1) / self.ntheta;
        let j = (cell - 1) % self.ntheta;
        Self::polar(self.r_center(i), self.theta_center(j))
    }

    pub fn area(&self, cell: usize) -> f64 {
        let dr = self.dr();
        if cell == 0 {
            return 0.5 * self.span() * dr * dr;
        }
        let i = 1 + (cell - 1) / self.ntheta;
        let (a, b) = (i as f64 * dr, (i + 1) as f64 * dr);
        0.5 * self.dtheta() * (b * b - a * a)
    }
}

/// A boundary sample with its quadrature weight and reconstructed trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundarySample {
    pub point: Vector,
    pub weight: f64,
    pub part: BoundaryPart,
    pub value: f64,
    /// `kappa du/dnu` at the sample.
    pub flux: f64,
}

#[derive(Clone, Debug)]
pub struct FdSolution {
    pub grid: PolarGrid,
    pub values: Vec<f64>,
    pub boundary: Vec<BoundarySample>,
    pub report: CgReport,
}

const SEGMENT_SAMPLES: usize = 8;
const FACE_SAMPLES: usize = 16;

fn harmonic_kappa(field: &ConductivityField, a: &Vector, b: &Vector) -> Result<f64> {
    let mut s = 0.0;
    for k in 0..SEGMENT_SAMPLES {
        let t = (k as f64 + 0.5) / SEGMENT_SAMPLES as f64;
        let p = a + (b - a) * t;
        let kap = field.kappa_at(&p);
        let v = isotropic_value(&kap, 2).ok_or_else(|| {
            Error::UnsupportedCapability("finite differences need an isotropic conductivity".into())
        })?;
        s += 1.0 / v;
    }
    Ok(SEGMENT_SAMPLES as f64 / s)
}

/// Boundary face of a cell: samples along it and its per-length transmissibility.
struct BoundaryFace {
    cell: usize,
    part: BoundaryPart,
    /// `kappa / delta`; infinite when the centre lies on the face.
    coef: f64,
    /// Dirichlet transmissibility of the whole face and its anchor point.
    trans: f64,
    anchor: Vector,
    samples: Vec<(Vector, f64)>,
}

fn boundary_faces(grid: &PolarGrid, field: &ConductivityField) -> Result<Vec<BoundaryFace>> {
    let (dr, dth) = (grid.dr(), grid.dtheta());
    let nr = grid.nr;
    let r_out = grid.r_center(nr - 1);
    let cap_part = if grid.half {
        BoundaryPart::Inaccessible
    } else {
        BoundaryPart::Accessible
    };
    let mut faces = Vec::new();
    for j in 0..grid.ntheta {
        let cell = grid.index(nr - 1, j);
        let c = grid.center(cell);
        let anchor = PolarGrid::polar(grid.radius, grid.theta_center(j));
        let kap = harmonic_kappa(field, &c, &anchor)?;
        let trans = kap * 2.0 * grid.radius * (0.5 * dth).sin() / (grid.radius - r_out);
        let samples = (0..FACE_SAMPLES)
            .map(|k| {
                let th = grid.theta0() + (j as f64 + (k as f64 + 0.5) / FACE_SAMPLES as f64) * dth;
                (PolarGrid::polar(grid.radius, th), grid.radius * dth / FACE_SAMPLES as f64)
            })
            .collect();
        faces.push(BoundaryFace {
            cell,
            part: cap_part,
            coef: trans / (grid.radius * dth),
            trans,
            anchor,
            samples,
        });
    }
    if grid.half {
        for (j, th) in [(0, PI), (grid.ntheta - 1, 2.0 * PI)] {
            for i in 0..nr {
                let cell = if i == 0 { 0 } else { grid.index(i, j) };
                if i == 0 && j != 0 {
                    continue;
                }
                let (ra, rb, coef) = if i == 0 {
                    (0.0, dr, f64::INFINITY)
                } else {
                    let c = grid.center(cell);
                    let foot = PolarGrid::polar(grid.r_center(i) * (0.5 * dth).cos(), th);
                    let delta = grid.r_center(i) * (0.5 * dth).sin();
                    (i as f64 * dr, (i + 1) as f64 * dr, harmonic_kappa(field, &c, &foot)? / delta)
                };
                let mut samples: Vec<(Vector, f64)> = (0..FACE_SAMPLES)
                    .map(|k| {
                        let r = ra + (k as f64 + 0.5) / FACE_SAMPLES as f64 * (rb - ra);
                        (PolarGrid::polar(r, th), (rb - ra) / FACE_SAMPLES as f64)
                    })
                    .collect();
                if i == 0 {
                    // The central half-cell owns both flat segments next to the origin.
                    samples.extend((0..FACE_SAMPLES).map(|k| {
                        let r = (k as f64 + 0.5) / FACE_SAMPLES as f64 * dr;
                        (PolarGrid::polar(r, 0.0), dr / FACE_SAMPLES as f64)
                    }));
                }
                faces.push(BoundaryFace {
                    cell,
                    part: BoundaryPart::Accessible,
                    coef,
                    trans: coef * (rb - ra),
                    anchor: PolarGrid::polar(0.5 * (ra + rb), th),
                    samples,
                });
            }
        }
    }
    Ok(faces)
}

pub fn fd_solve(problem: &FdProblem, nr: usize, ntheta: usize) -> Result<FdSolution> {
    let grid = PolarGrid::new(problem.domain, nr, ntheta)?;
    let field = problem.field;
    let n = grid.n_cells();
    let (dr, dth) = (grid.dr(), grid.dtheta());
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(5 * n);
    let mut rhs = vec![0.0; n];
    let couple = |trip: &mut Vec<(usize, usize, f64)>, a: usize, b: usize, t: f64| {
        trip.push((a, a, t));
        trip.push((b, b, t));
        trip.push((a, b, -t));
        trip.push((b, a, -t));
    };
    let chord = 2.0 * (0.5 * dth).sin();
    for j in 0..grid.ntheta {
        // Central cell to the first ring.
        let b = grid.index(1, j);
        let t = harmonic_kappa(field, &grid.center(0), &grid.center(b))? * chord * dr / grid.r_center(1);
        couple(&mut trip, 0, b, t);
        for i in 1..grid.nr {
            let a = grid.index(i, j);
            if i + 1 < grid.nr {
                let b = grid.index(i + 1, j);
                let t = harmonic_kappa(field, &grid.center(a), &grid.center(b))? * chord * (i + 1) as f64 * dr / dr;
                couple(&mut trip, a, b, t);
            }
            if j + 1 < grid.ntheta || !grid.half {
                let b = grid.index(i, (j + 1) % grid.ntheta);
                let t = harmonic_kappa(field, &grid.center(a), &grid.center(b))? * dr / (grid.r_center(i) * chord);
                couple(&mut trip, a, b, t);
            }
        }
    }
    for c in 0..n {
        let area = grid.area(c);
        if problem.alpha != 0.0 {
            trip.push((c, c, problem.alpha * area));
        }
        if let Some(s) = problem.source {
            rhs[c] += s(&grid.center(c)) * area;
        }
    }
    let faces = boundary_faces(&grid, field)?;
    let mut any_dirichlet = false;
    let mut any_robin_g = false;
    for face in &faces {
        let bc = match face.part {
            BoundaryPart::Accessible => problem.accessible,
            BoundaryPart::Inaccessible => problem.inaccessible,
        };
        match bc {
            FdBc::Dirichlet(phi) => {
                if face.coef.is_infinite() {
                    return Err(Error::UnsupportedCapability(
                        "Dirichlet data on the flat face of a half-disk".into(),
                    ));
                }
                any_dirichlet = true;
                trip.push((face.cell, face.cell, face.trans));
                rhs[face.cell] += face.trans * phi(&face.anchor);
            }
            _ => {
                for (y, w) in &face.samples {
                    let (f, g) = bc.robin(y);
                    if g > 0.0 {
                        any_robin_g = true;
                    }
                    let (diag, src) = if face.coef.is_infinite() {
                        (g, f)
                    } else {
                        let c = face.coef;
                        (c * g / (c + g), c * f / (c + g))
                    };
                    if diag != 0.0 {
                        trip.push((face.cell, face.cell, w * diag));
                    }
                    rhs[face.cell] += w * src;
                }
            }
        }
    }
    let a = CsrMatrix::from_triplets(n, trip);
    let singular = !any_dirichlet && !any_robin_g && problem.alpha == 0.0;
    let areas: Vec<f64> = (0..n).map(|c| grid.area(c)).collect();
    let (values, report) = conjugate_gradient(&a, &rhs, 1e-12, 50 * n, singular.then_some(&areas[..]))?;
    if report.relative_residual > 1e-10 {
        return Err(Error::Solver(format!(
            "linear-system residual {:e} above 1e-10",
            report.relative_residual
        )));
    }
    let mut boundary = Vec::new();
    for face in &faces {
        let bc = match face.part {
            BoundaryPart::Accessible => problem.accessible,
            BoundaryPart::Inaccessible => problem.inaccessible,
        };
        let uc = values[face.cell];
        for (y, w) in &face.samples {
            let (value, flux) = match bc {
                FdBc::Dirichlet(phi) => {
                    let ub = phi(y);
                    (ub, face.coef * (ub - uc))
                }
                _ => {
                    let (f, g) = bc.robin(y);
                    let ub = if face.coef.is_infinite() {
                        uc
                    } else {
                        (face.coef * uc + f) / (face.coef + g)
                    };
                    (ub, f - g * ub)
                }
            };
            boundary.push(BoundarySample {
                point: *y,
                weight: *w,
                part: face.part,
                value,
                flux,
            });
        }
    }
    Ok(FdSolution {
        grid,
        values,
        boundary,
        report,
    })
}

impl FdSolution {
    /// Interpolated value: bilinear in `(r, theta)`, a least-squares plane near the centre.
    pub fn value_at(&self, x: &Vector) -> f64 {
        let g = &self.grid;
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        if r <= g.r_center(1) {
            return self.central_fit(x);
        }
        let fi = (r / g.dr() - 0.5).clamp(1.0, (g.nr - 1) as f64);
        let i0 = (fi.floor() as usize).min(g.nr - 2);
        let ti = fi - i0 as f64;
        let (i0, ti) = if r > g.r_center(g.nr - 1) {
            (g.nr - 2, (r - g.r_center(g.nr - 2)) / g.dr())
        } else {
            (i0, ti)
        };
        let mut th = x[1].atan2(x[0]);
        if g.half {
            if th > 0.0 {
                th -= 2.0 * PI;
            }
            th += 2.0 * PI;
        } else if th < 0.0 {
            th += 2.0 * PI;
        }
        let fj = (th - g.theta0()) / g.dtheta() - 0.5;
        let (j0, j1, tj) = if g.half {
            let j0 = (fj.floor().max(0.0) as usize).min(g.ntheta - 2);
            (j0, j0 + 1, fj - j0 as f64)
        } else {
            let fl = fj.floor();
            let j0 = (fl as i64).rem_euclid(g.ntheta as i64) as usize;
            (j0, (j0 + 1) % g.ntheta, fj - fl)
        };
        let v = |i: usize, j: usize| self.values[g.index(i, j)];
        let a = v(i0, j0) * (1.0 - tj) + v(i0, j1) * tj;
        let b = v(i0 + 1, j0) * (1.0 - tj) + v(i0 + 1, j1) * tj;
        a * (1.0 - ti) + b * ti
    }

    fn central_fit(&self, x: &Vector) -> f64 {
        let g = &self.grid;
        let mut pts = vec![(Vector::zeros(), self.values[0])];
        for j in 0..g.ntheta {
            let c = g.index(1, j);
            pts.push((g.center(c), self.values[c]));
        }
        // Normal equations for u = a + b x + c y.
        let mut m = nalgebra::Matrix3::<f64>::zeros();
        let mut rhs = nalgebra::Vector3::<f64>::zeros();
        for (p, u) in &pts {
            let phi = nalgebra::Vector3::new(1.0, p[0], p[1]);
            m += phi * phi.transpose();
            rhs += phi * *u;
        }
        match m.lu().solve(&rhs) {
            Some(c) => c[0] + c[1] * x[0] + c[2] * x[1],
            None => self.values[0],
        }
    }

    /// Area-weighted mean over the domain.
    pub fn mean(&self) -> f64 {
        let n = self.values.len();
        let (mut s, mut a) = (0.0, 0.0);
        for c in 0..n {
            let w = self.grid.area(c);
            s += w * self.values[c];
            a += w;
        }
        s / a
    }

    /// Electrode currents `|E_l|^-1 int_{E_l} kappa du/dnu dsigma`.
    pub fn electrode_currents(&self, domain: &Domain, layout: &ElectrodeLayout) -> Vec<f64> {
        layout
            .electrodes
            .iter()
            .enumerate()
            .map(|(l, e)| {
                let s: f64 = self
                    .boundary
                    .iter()
                    .filter(|b| b.part == BoundaryPart::Accessible && layout.electrode_at(&b.point) == Some(l))
                    .map(|b| b.weight * b.flux)
                    .sum();
                s / electrode_area(domain, e)
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y,u")?;
        for (c, u) in self.values.iter().enumerate() {
            let p = self.grid.center(c);
            writeln!(w, "{:.12e},{:.12e},{:.12e}", p[0], p[1], u)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Electrode;
    use crate::media::{realize, MediumSpec};

    fn disk() -> Domain {
        Domain::Ball { dim: 2, radius: 1.0 }
    }

    fn constant(k: f64) -> ConductivityField {
        realize(&MediumSpec::constant(2, k), 0, 1.0).unwrap()
    }

    #[test]
    fn affine_dirichlet_is_exact() {
        let f = constant(1.7);
        let d = disk();
        let phi = |y: &Vector| 0.3 + 2.0 * y[0] - y[1];
        let p = FdProblem {
            domain: &d,
            field: &f,
            accessible: FdBc::Dirichlet(&phi),
            inaccessible: FdBc::Dirichlet(&phi),
            alpha: 0.0,
            source: None,
        };
        let s = fd_solve(&p, 12, 24).unwrap();
        for c in 0..s.values.len() {
            assert!((s.values[c] - phi(&s.grid.center(c))).abs() < 1e-9);
        }
        let x = Vector::new(0.41, -0.27, 0.0);
        assert!((s.value_at(&x) - phi(&x)).abs() < 1e-2);
        let y = Vector::new(0.05, 0.02, 0.0);
        assert!((s.value_at(&y) - phi(&y)).abs() < 1e-9);
    }

    #[test]
    fn manufactured_solution_converges_at_second_order() {
        let f = constant(1.0);
        let d = disk();
        let exact = |y: &Vector| (PI * y[0]).sin() * (PI * y[1]).sin();
        let src = |y: &Vector| 2.0 * PI * PI * exact(y);
        let mut errs = Vec::new();
        for n in [16usize, 32] {
            let p = FdProblem {
                domain: &d,
                field: &f,
                accessible: FdBc::Dirichlet(&exact),
                inaccessible: FdBc::Dirichlet(&exact),
                alpha: 0.0,
                source: Some(&src),
            };
            let s = fd_solve(&p, n, 4 * n).unwrap();
            let e = (0..s.values.len())
                .map(|c| (s.values[c] - exact(&s.grid.center(c))).abs())
                .fold(0.0, f64::max);
            errs.push(e);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.7, "errors {errs:?}");
    }

    #[test]
    fn maximum_principle_holds() {
        let spec: MediumSpec = serde_json::from_str(
            r#"{"dim":2,"kind":"checkerboard","cell_size":0.2,"values":[1.0,4.0],"probabilities":[0.5,0.5]}"#,
        )
        .unwrap();
        let f = realize(&spec, 3, 1.0).unwrap();
        let d = disk();
        let phi = |y: &Vector| y[0].atan2(y[1]).sin();
        let p = FdProblem {
            domain: &d,
            field: &f,
            accessible: FdBc::Dirichlet(&phi),
            inaccessible: FdBc::Dirichlet(&phi),
            alpha: 0.0,
            source: None,
        };
        let s = fd_solve(&p, 20, 64).unwrap();
        for v in &s.values {
            assert!(v.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn neumann_cosine_matches_harmonic_solution() {
        let f = constant(2.0);
        let d = disk();
        let flux = |y: &Vector| y[0] / y.norm();
        let p = FdProblem {
            domain: &d,
            field: &f,
            accessible: FdBc::Flux(&flux),
            inaccessible: FdBc::Flux(&flux),
            alpha: 0.0,
            source: None,
        };
        let s = fd_solve(&p, 24, 64).unwrap();
        assert!(s.mean().abs() < 1e-12);
        let x = Vector::new(0.5, 0.0, 0.0);
        assert!((s.value_at(&x) - 0.25).abs() < 2e-3, "{}", s.value_at(&x));
    }

    #[test]
    fn electrode_currents_balance() {
        let f = constant(1.0);
        let d = disk();
        let layout = ElectrodeLayout::new(
            &d,
            vec![
                Electrode { center: Vector::new(1.0, 0.0, 0.0), radius: 0.4 },
                Electrode { center: Vector::new(-1.0, 0.0, 0.0), radius: 0.4 },
            ],
            vec![0.5, 0.5],
            vec![1.0, -1.0],
        )
        .unwrap();
        let p = FdProblem {
            domain: &d,
            field: &f,
            accessible: FdBc::Electrodes(&layout),
            inaccessible: FdBc::Electrodes(&layout),
            alpha: 0.0,
            source: None,
        };
        let s = fd_solve(&p, 24, 96).unwrap();
        let j = s.electrode_currents(&d, &layout);
        assert!(j[0] > 0.0 && (j[0] + j[1]).abs() < 1e-9, "{j:?}");
        let x = Vector::new(0.3, 0.1, 0.0);
        let y = Vector::new(-0.3, 0.1, 0.0);
        assert!((s.value_at(&x) + s.value_at(&y)).abs() < 1e-9);
    }

    #[test]
    fn half_disk_mixed_problem_is_bounded() {
        let f = constant(1.0);
        let d = Domain::Hemisphere { dim: 2, radius: 1.0 };
        let layout = ElectrodeLayout::new(
            &d,
            vec![Electrode { center: Vector::new(0.3, 0.0, 0.0), radius: 0.2 }],
            vec![0.1],
            vec![1.0],
        )
        .unwrap();
        let zero = |_: &Vector| 0.0;
        let p = FdProblem {
            domain: &d,
            field: &f,
            accessible: FdBc::Electrodes(&layout),
            inaccessible: FdBc::Dirichlet(&zero),
            alpha: 0.0,
            source: None,
        };
        let s = fd_solve(&p, 24, 48).unwrap();
        assert!(s.values.iter().all(|v| (0.0..=1.0).contains(v)));
        let near = s.value_at(&Vector::new(0.3, -0.01, 0.0));
        let far = s.value_at(&Vector::new(-0.6, -0.1, 0.0));
        assert!(near > far && far > 0.0);
    }
}
