use super::Vec3;
use crate::error::{invalid, Result, ShfError};
use crate::units::{angstrom_to_m, MU0_OVER_4PI};

/// Closest approach accepted by [`dipole_field`], Å.
pub const DEFAULT_MIN_DISTANCE_ANGSTROM: f64 = 0.5;

/// Point-dipole field (T) of moment `moment` (J/T) at offset `r` (Å).
///
/// `B = (μ0/4π)·[3(m·r̂)r̂ − m]/r³`.
pub fn dipole_field(moment: &Vec3, r: &Vec3) -> Result<Vec3> {
    dipole_field_with_min(moment, r, DEFAULT_MIN_DISTANCE_ANGSTROM)
}

pub fn dipole_field_with_min(moment: &Vec3, r: &Vec3, min_distance_angstrom: f64) -> Result<Vec3> {
    if moment.iter().chain(r.iter()).any(|x| !x.is_finite()) {
        return Err(invalid("dipole inputs must be finite"));
    }
    let dist = r.norm();
    if dist < min_distance_angstrom || dist == 0.0 {
        return Err(ShfError::UnphysicalGeometry { distance: dist, min: min_distance_angstrom });
    }
    let r_hat = r / dist;
    let r_m = angstrom_to_m(dist);
    let radial = 3.0 * moment.dot(&r_hat);
    Ok((r_hat * radial - moment) * (MU0_OVER_4PI / (r_m * r_m * r_m)))
}
