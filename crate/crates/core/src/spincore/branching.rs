use serde::{Deserialize, Serialize};

use super::Vec3;
use crate::error::{Result, ShfError};

/// Angle between the two effective fields and the optical branching it implies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branching {
    /// Radians, in [0, π].
    pub alpha: f64,
    /// Branching ratio tan²(α/2).
    pub ratio: f64,
    /// Branching contrast 4R/(1+R)² = sin²α.
    pub contrast: f64,
}

pub fn branching(b_g: &Vec3, b_e: &Vec3) -> Result<Branching> {
    let ng = b_g.norm();
    let ne = b_e.norm();
    if !(ng > 0.0 && ne > 0.0) || !(ng.is_finite() && ne.is_finite()) {
        return Err(ShfError::UndefinedAngle);
    }
    let norm = ng * ne;
    let sin = b_g.cross(b_e).norm();
    let cos = b_g.dot(b_e);
    let alpha = sin.atan2(cos);
    // tan(α/2) = sin/(1+cos) = (1-cos)/sin; pick the form without cancellation.
    let half_tan = if cos >= 0.0 { sin / (norm + cos) } else { (norm - cos) / sin };
    let s = sin / norm;
    Ok(Branching { alpha, ratio: half_tan * half_tan, contrast: s * s })
}
