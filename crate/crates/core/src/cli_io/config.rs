//! Run configuration: a JSON document validated in full before any work starts.

use serde::{Deserialize, Serialize};

use crate::diffusion::StepperConfig;
use crate::error::{Error, Result};
use crate::feynman_kac::{Bvp, BvpKind, McConfig};
use crate::geometry::{default_nodes_per_electrode, Domain, Electrode, ElectrodeLayout};
use crate::linalg::{vector_from, Vector};
use crate::media::{realize, ConductivityField, KappaValue, MediumSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Solve,
    Homogenize,
    Convergence,
    Oracle,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Solve => "solve",
            ExperimentKind::Homogenize => "homogenize",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::Oracle => "oracle",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectrodeConfig {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    pub electrodes: Vec<ElectrodeConfig>,
    /// Contact impedances, one per electrode.
    pub z: Vec<f64>,
    pub voltages: Vec<f64>,
}

impl LayoutConfig {
    pub fn build(&self, domain: &Domain) -> Result<ElectrodeLayout> {
        let mut electrodes = Vec::with_capacity(self.electrodes.len());
        for (l, e) in self.electrodes.iter().enumerate() {
            electrodes.push(Electrode {
                center: point(&e.center, domain.dim(), &format!("layout.electrodes[{l}].center"))?,
                radius: e.radius,
            });
        }
        ElectrodeLayout::new(domain, electrodes, self.z.clone(), self.voltages.clone())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurrentsConfig {
    /// Quadrature nodes per electrode; `None` means 8 in 2D and 25 in 3D.
    pub nodes_per_electrode: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsdConfig {
    /// Unit directions; defaults to the first coordinate axis.
    pub directions: Vec<Vec<f64>>,
    pub t: f64,
    /// Horizons of a convergence curve.
    pub t_grid: Vec<f64>,
    pub n_realizations: u64,
    pub n_paths_per_realization: u64,
    pub antithetic: bool,
    /// Also report the direct second-moment matrix next to the polarized tensor.
    pub covariance_check: bool,
    /// Reference value of `xi . kappa* xi`; derived from closed forms when possible.
    pub reference: Option<f64>,
}

impl Default for MsdConfig {
    fn default() -> Self {
        MsdConfig {
            directions: Vec::new(),
            t: 16.0,
            t_grid: Vec::new(),
            n_realizations: 100,
            n_paths_per_realization: 100,
            antithetic: true,
            covariance_check: false,
            reference: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    /// Homogenized tensor; when absent the tensor estimated in the same run is used.
    pub kappa_star: Option<KappaValue>,
    pub nodes_per_electrode: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            epsilons: vec![0.5, 0.25, 0.125],
            kappa_star: None,
            nodes_per_electrode: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// Finite-volume solve of the boundary-value problem on a disk or half-disk.
    Solve,
    /// Periodic cell problem on a window of the realized medium.
    CellTensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub kind: OracleKind,
    pub nr: usize,
    pub ntheta: usize,
    /// Cells per side of the periodic window.
    pub cells: usize,
    pub window: f64,
    pub origin: Vec<f64>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            kind: OracleKind::Solve,
            nr: 64,
            ntheta: 256,
            cells: 64,
            window: 8.0,
            origin: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub domain: Option<Domain>,
    pub medium: MediumSpec,
    /// Scale of the medium, `kappa(x / epsilon)`.
    #[serde(default = "unit_scale")]
    pub epsilon: f64,
    #[serde(default)]
    pub layout: Option<LayoutConfig>,
    #[serde(default)]
    pub problem: Option<BvpKind>,
    #[serde(default)]
    pub probes: Vec<Vec<f64>>,
    #[serde(default)]
    pub currents: Option<CurrentsConfig>,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub stepper: StepperConfig,
    #[serde(default)]
    pub msd: Option<MsdConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub oracle: Option<OracleConfig>,
    /// Master seed: medium realization and all path streams.
    #[serde(default)]
    pub seed: u64,
    /// Output directory.
    #[serde(default, skip_serializing)]
    pub output: Option<String>,
    /// Worker threads; results do not depend on it.
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
}

fn unit_scale() -> f64 {
    1.0
}

pub(crate) fn point(c: &[f64], dim: usize, path: &str) -> Result<Vector> {
    if c.len() != dim {
        return Err(Error::config(path, format!("expected {dim} coordinates, got {}", c.len())));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::config(path, "coordinates must be finite"));
    }
    Ok(vector_from(c))
}

/// Parses and cross-validates a configuration. Defaults are filled in and
/// the per-run seed is copied into the Monte Carlo settings.
pub fn validate_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { "<root>".to_string() } else { path }, e.inner().to_string())
    })?;
    cfg.mc.seed = cfg.seed;
    cfg.fill_defaults();
    cfg.check()?;
    Ok(cfg)
}

impl RunConfig {
    fn fill_defaults(&mut self) {
        let dim = self.medium.dim;
        if let Some(msd) = self.msd.as_mut() {
            if msd.directions.is_empty() {
                let mut e = vec![0.0; dim];
                if dim > 0 {
                    e[0] = 1.0;
                }
                msd.directions.push(e);
            }
        }
        let nodes = default_nodes_per_electrode(dim);
        if let Some(c) = self.currents.as_mut() {
            c.nodes_per_electrode.get_or_insert(nodes);
        }
        if let Some(s) = self.sweep.as_mut() {
            s.nodes_per_electrode.get_or_insert(nodes);
        }
        if let Some(o) = self.oracle.as_mut() {
            if o.origin.is_empty() {
                o.origin = vec![0.0; dim];
            }
        }
        if self.medium.ellipticity.is_none() {
            let c = self.medium.bound();
            if c.is_finite() {
                self.medium.ellipticity = Some(c);
            }
        }
    }

    pub fn field(&self) -> Result<ConductivityField> {
        realize(&self.medium, self.seed, self.epsilon)
    }

    pub fn domain(&self) -> Result<Domain> {
        self.domain.ok_or_else(|| Error::config("domain", "this experiment needs a domain"))
    }

    pub fn layout(&self) -> Result<Option<ElectrodeLayout>> {
        match &self.layout {
            Some(l) => Ok(Some(l.build(&self.domain()?)?)),
            None => Ok(None),
        }
    }

    pub fn probe_points(&self) -> Result<Vec<Vector>> {
        let dim = self.medium.dim;
        self.probes
            .iter()
            .enumerate()
            .map(|(k, p)| point(p, dim, &format!("probes[{k}]")))
            .collect()
    }

    pub fn msd(&self) -> Result<&MsdConfig> {
        self.msd.as_ref().ok_or_else(|| Error::config("msd", "this experiment needs an msd section"))
    }

    pub fn directions(&self) -> Result<Vec<Vector>> {
        let dim = self.medium.dim;
        let msd = self.msd()?;
        let mut out = Vec::with_capacity(msd.directions.len());
        for (k, d) in msd.directions.iter().enumerate() {
            let path = format!("msd.directions[{k}]");
            let v = point(d, dim, &path)?;
            if (v.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::config(path, "direction must be a unit vector"));
            }
            out.push(v);
        }
        Ok(out)
    }

    fn check(&self) -> Result<()> {
        self.medium.validate()?;
        self.stepper.validate()?;
        self.mc.validate()?;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("epsilon", "scale must be positive"));
        }
        if self.workers == Some(0) {
            return Err(Error::config("workers", "need at least one worker"));
        }
        if let Some(d) = &self.domain {
            d.validate()?;
            if d.dim() != self.medium.dim {
                return Err(Error::config(
                    "domain.dim",
                    format!("domain has dimension {} but the medium has {}", d.dim(), self.medium.dim),
                ));
            }
        }
        let field = self.field()?;
        match self.experiment {
            ExperimentKind::Solve => self.check_solve(&field),
            ExperimentKind::Homogenize => self.check_homogenize(),
            ExperimentKind::Convergence => self.check_convergence(),
            ExperimentKind::Oracle => self.check_oracle(&field),
        }
    }

    fn bvp_check(&self, field: &ConductivityField) -> Result<()> {
        let domain = self.domain()?;
        let kind = self
            .problem
            .as_ref()
            .ok_or_else(|| Error::config("problem", "this experiment needs a problem"))?;
        let layout = self.layout()?;
        if matches!(kind, BvpKind::Cem | BvpKind::MixedCem) && layout.is_none() {
            return Err(Error::config("layout", "electrode problems need a layout"));
        }
        Bvp {
            kind,
            domain: &domain,
            field,
            layout: layout.as_ref(),
        }
        .check()
    }

    fn check_solve(&self, field: &ConductivityField) -> Result<()> {
        let domain = self.domain()?;
        if domain.is_whole_space() {
            return Err(Error::config("domain", "boundary-value problems need a boundary"));
        }
        self.bvp_check(field)?;
        if self.probes.is_empty() && self.currents.is_none() {
            return Err(Error::config("probes", "nothing to compute: give probes or a currents section"));
        }
        for (k, x) in self.probe_points()?.iter().enumerate() {
            if domain.signed_distance(x)? > 1e-12 * domain.scale() {
                return Err(Error::config(format!("probes[{k}]"), "probe lies outside the domain"));
            }
        }
        if self.currents.is_some() && !matches!(self.problem, Some(BvpKind::Cem | BvpKind::MixedCem)) {
            return Err(Error::config("currents", "electrode currents need a cem or mixed_cem problem"));
        }
        Ok(())
    }

    fn check_msd(&self) -> Result<()> {
        let msd = self.msd()?;
        self.directions()?;
        if !(msd.t > 0.0 && msd.t.is_finite()) {
            return Err(Error::config("msd.t", "horizon must be positive"));
        }
        if msd.n_realizations == 0 || msd.n_paths_per_realization == 0 {
            return Err(Error::config("msd.n_realizations", "counts must be positive"));
        }
        if msd.n_realizations * msd.n_paths_per_realization < 2 {
            return Err(Error::config("msd.n_paths_per_realization", "need at least two paths in total"));
        }
        Ok(())
    }

    fn check_homogenize(&self) -> Result<()> {
        if self.msd.is_none() && self.sweep.is_none() {
            return Err(Error::config("msd", "homogenize needs an msd or a sweep section"));
        }
        if self.msd.is_some() {
            self.check_msd()?;
        }
        if let Some(s) = &self.sweep {
            let domain = self.domain()?;
            if !matches!(domain, Domain::Hemisphere { .. }) {
                return Err(Error::config("domain", "the sweep runs on a hemisphere"));
            }
            let layout = self
                .layout()?
                .ok_or_else(|| Error::config("layout", "the sweep needs an electrode layout"))?;
            layout.check_grounding()?;
            if s.epsilons.is_empty() || s.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err(Error::config("sweep.epsilons", "need positive scales"));
            }
            if let Some(k) = &s.kappa_star {
                if let KappaValue::Matrix(rows) = k {
                    if rows.len() != self.medium.dim || rows.iter().any(|r| r.len() != self.medium.dim) {
                        return Err(Error::config("sweep.kappa_star", "matrix size does not match the dimension"));
                    }
                }
            } else if self.msd.is_none() {
                return Err(Error::config("sweep.kappa_star", "give kappa_star or an msd section to estimate it"));
            }
        }
        Ok(())
    }

    fn check_convergence(&self) -> Result<()> {
        self.check_msd()?;
        let msd = self.msd()?;
        if msd.t_grid.is_empty() || msd.t_grid.windows(2).any(|w| w[1] <= w[0]) || msd.t_grid[0] <= 0.0 {
            return Err(Error::config("msd.t_grid", "horizons must be positive and increasing"));
        }
        self.reference()?;
        Ok(())
    }

    /// Reference `xi . kappa* xi` for the first direction.
    pub fn reference(&self) -> Result<f64> {
        let msd = self.msd()?;
        if let Some(r) = msd.reference {
            return Ok(r);
        }
        let xi = self.directions()?[0];
        super::experiment::closed_form_reference(&self.medium, &xi)
            .ok_or_else(|| Error::config("msd.reference", "no closed form for this medium; give a reference value"))
    }

    fn check_oracle(&self, field: &ConductivityField) -> Result<()> {
        let o = self
            .oracle
            .as_ref()
            .ok_or_else(|| Error::config("oracle", "this experiment needs an oracle section"))?;
        match o.kind {
            OracleKind::Solve => {
                let domain = self.domain()?;
                if domain.dim() != 2 || !matches!(domain, Domain::Ball { .. } | Domain::Hemisphere { .. }) {
                    return Err(Error::config("domain", "the finite-volume oracle needs a disk or half-disk"));
                }
                if o.nr < 3 || o.ntheta < 4 {
                    return Err(Error::config("oracle.nr", "grid needs nr >= 3 and ntheta >= 4"));
                }
                self.bvp_check(field)?;
                self.probe_points()?;
            }
            OracleKind::CellTensor => {
                if !(2..=3).contains(&self.medium.dim) {
                    return Err(Error::config("medium.dim", "cell problems need dimension 2 or 3"));
                }
                if o.cells < 2 || !(o.window > 0.0) {
                    return Err(Error::config("oracle.cells", "need at least two cells and a positive window"));
                }
                point(&o.origin, self.medium.dim, "oracle.origin")?;
            }
        }
        Ok(())
    }
}
