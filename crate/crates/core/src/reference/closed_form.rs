//! Closed-form effective conductivities.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayeredEffective {
    /// Along the layers (arithmetic mean).
    pub parallel: f64,
    /// Across the layers (harmonic mean).
    pub perpendicular: f64,
}

/// Effective conductivity of a laminate with the given phase fractions.
pub fn layered_effective(values: &[f64], fractions: &[f64]) -> Result<LayeredEffective> {
    if values.is_empty() || values.len() != fractions.len() {
        return Err(Error::Precondition("need one fraction per layer value".into()));
    }
    if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Precondition("layer conductivities must be positive".into()));
    }
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| *f < 0.0) || (total - 1.0).abs() > 1e-12 {
        return Err(Error::Precondition("layer fractions must be a probability vector".into()));
    }
    let parallel = values.iter().zip(fractions).map(|(v, f)| v * f).sum();
    let perpendicular = 1.0 / values.iter().zip(fractions).map(|(v, f)| f / v).sum::<f64>();
    Ok(LayeredEffective { parallel, perpendicular })
}

/// Two-dimensional two-phase medium statistically invariant under phase
/// exchange: the effective conductivity is the geometric mean.
pub fn checkerboard_symmetric(k1: f64, k2: f64) -> Result<f64> {
    if !(k1 > 0.0 && k2 > 0.0 && k1.is_finite() && k2.is_finite()) {
        return Err(Error::Precondition("conductivities must be positive".into()));
    }
    Ok((k1 * k2).sqrt())
}
