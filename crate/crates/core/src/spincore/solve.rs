use serde::{Deserialize, Serialize};

use super::{branching, dipole_field, er_moment_expectation, Branch, FieldSpec, NuclearSite, SpinCenter, Vec3};
use crate::error::Result;
use crate::units::splitting_khz;

/// Total fields (T) at the nucleus with the electron in the ground or excited doublet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveFields {
    pub b_g: Vec3,
    pub b_e: Vec3,
}

/// Superhyperfine observables for one (ion, site, field) configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShfResult {
    /// Effective field with the electron in the ground doublet, T.
    pub b_g: Vec3,
    /// Effective field with the electron in the excited doublet, T.
    pub b_e: Vec3,
    /// Angle between `b_g` and `b_e`, radians.
    pub alpha: f64,
    /// Ground-manifold nuclear splitting, kHz.
    pub delta_g: f64,
    /// Excited-manifold nuclear splitting, kHz.
    pub delta_e: f64,
    /// Branching ratio R.
    pub ratio: f64,
    /// Branching contrast ρ.
    pub rho: f64,
}

pub fn effective_fields(center: &SpinCenter, site: &NuclearSite, field: &FieldSpec, branch: Branch) -> Result<EffectiveFields> {
    let direction = field.direction.unit()?;
    let b = field.vector_t()?;
    let total = |g| -> Result<Vec3> {
        let moment = er_moment_expectation(g, &direction, branch)?;
        Ok(b + dipole_field(&moment, &site.position)?)
    };
    Ok(EffectiveFields { b_g: total(&center.g_ground)?, b_e: total(&center.g_excited)? })
}

pub fn shf_solve(center: &SpinCenter, site: &NuclearSite, field: &FieldSpec, branch: Branch) -> Result<ShfResult> {
    let EffectiveFields { b_g, b_e } = effective_fields(center, site, field, branch)?;
    let br = branching(&b_g, &b_e)?;
    Ok(ShfResult {
        b_g,
        b_e,
        alpha: br.alpha,
        delta_g: splitting_khz(site.gamma, b_g.norm()),
        delta_e: splitting_khz(site.gamma, b_e.norm()),
        ratio: br.ratio,
        rho: br.contrast,
    })
}
