//! Closed-form spin kernels.
//!
//! The electron spin is an effective spin-½ with a general (not necessarily
//! symmetric) g-tensor. Because the electron Zeeman energy exceeds the
//! nuclear and superhyperfine energies by four to five orders of magnitude,
//! the ligand nucleus sees the external field plus the point-dipole field of
//! the electron moment's expectation value. Every observable here (splittings,
//! branching ratio, contrast) follows from those two effective fields.
//!
//! Conventions: energies are `E = -μ·B`, the electron moment operator is
//! `μ = -μ_B g S`, and [`Branch::Minus`] is the lower Zeeman branch (moment
//! chosen so the Zeeman energy is negative).

mod branching;
mod dipole;
mod solve;
mod wigner;
mod zeeman;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use branching::{branching, Branching};
pub use dipole::{dipole_field, dipole_field_with_min, DEFAULT_MIN_DISTANCE_ANGSTROM};
pub use solve::{effective_fields, shf_solve, EffectiveFields, ShfResult};
pub use wigner::{rotation_branching_ratio, wigner_d_half, WignerD};
pub use zeeman::{er_moment_expectation, zeeman_splitting, zeeman_splitting_per_tesla};

/// Cartesian vector in the orthonormal (D₁, D₂, b) frame.
pub type Vec3 = Vector3<f64>;

/// C₂ rotation about the b axis as a matrix.
pub fn c2_matrix() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0))
}

/// Zeeman g-tensor in the (D₁, D₂, b) frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct GTensor(Matrix3<f64>);

impl GTensor {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(invalid("g-tensor has non-finite entries"));
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(Matrix3::from_fn(|i, j| rows[i][j]))
    }

    pub fn isotropic(g: f64) -> Result<Self> {
        Self::new(Matrix3::identity() * g)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    /// `gᵀ v`: the direction the effective spin quantizes along.
    pub fn coupling(&self, v: &Vec3) -> Vec3 {
        self.0.transpose() * v
    }

    /// Tensor of the C₂(b)-related orientation, `C g C`.
    pub fn c2_conjugate(&self) -> Self {
        let c = c2_matrix();
        Self(c * self.0 * c)
    }
}

impl TryFrom<[[f64; 3]; 3]> for GTensor {
    type Error = crate::error::ShfError;
    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<GTensor> for [[f64; 3]; 3] {
    fn from(g: GTensor) -> Self {
        g.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteLabel {
    Site1,
    Site2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    A,
    B,
}

impl Orientation {
    pub fn other(self) -> Self {
        match self {
            Orientation::A => Orientation::B,
            Orientation::B => Orientation::A,
        }
    }
}

impl std::str::FromStr for Orientation {
    type Err = crate::error::ShfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Orientation::A),
            "B" | "b" => Ok(Orientation::B),
            _ => Err(invalid(format!("unknown orientation `{s}` (expected A or B)"))),
        }
    }
}

impl std::fmt::Display for Orientation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Orientation::A => "A",
            Orientation::B => "B",
        })
    }
}

/// Electron Zeeman branch of a Kramers doublet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// Upper Zeeman state.
    Plus,
    /// Lower Zeeman state.
    Minus,
}

impl std::str::FromStr for Branch {
    type Err = crate::error::ShfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plus" | "+" | "upper" => Ok(Branch::Plus),
            "minus" | "-" | "lower" => Ok(Branch::Minus),
            _ => Err(invalid(format!("unknown branch `{s}` (expected plus or minus)"))),
        }
    }
}

/// Paramagnetic ion: ground and excited Kramers doublets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinCenter {
    pub g_ground: GTensor,
    pub g_excited: GTensor,
    pub site: SiteLabel,
    pub orientation: Orientation,
}

impl SpinCenter {
    /// The magnetically inequivalent partner related by C₂ about b.
    pub fn c2_partner(&self) -> Self {
        Self {
            g_ground: self.g_ground.c2_conjugate(),
            g_excited: self.g_excited.c2_conjugate(),
            site: self.site,
            orientation: self.orientation.other(),
        }
    }

    /// Same center expressed for the requested orientation.
    pub fn with_orientation(&self, orientation: Orientation) -> Self {
        if orientation == self.orientation {
            self.clone()
        } else {
            self.c2_partner()
        }
    }

    pub fn tensor(&self, manifold: Manifold) -> &GTensor {
        match manifold {
            Manifold::Ground => &self.g_ground,
            Manifold::Excited => &self.g_excited,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Manifold {
    Ground,
    Excited,
}

/// Ligand nuclear spin relative to the electron spin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuclearSite {
    /// Å, relative to the electron spin.
    pub position: Vec3,
    /// Gyromagnetic ratio magnitude, MHz/T.
    pub gamma: f64,
}

impl NuclearSite {
    pub fn new(position: Vec3, gamma: f64) -> Result<Self> {
        if position.iter().any(|x| !x.is_finite()) {
            return Err(invalid("nuclear position has non-finite components"));
        }
        if position.norm() <= 0.0 {
            return Err(invalid("nuclear position coincides with the electron spin"));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(invalid(format!("gyromagnetic ratio must be > 0, got {gamma}")));
        }
        Ok(Self { position, gamma })
    }

    pub fn yttrium(position: Vec3) -> Result<Self> {
        Self::new(position, crate::units::GAMMA_Y89_MHZ_PER_T)
    }

    pub fn distance(&self) -> f64 {
        self.position.norm()
    }
}

/// Direction of the applied field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "convention", rename_all = "kebab-case")]
pub enum FieldDirection {
    /// Angle from D₁ within the (D₁, D₂) plane, degrees; b component is exactly 0.
    InPlane { angle_deg: f64 },
    /// Polar angle from b and azimuth from D₁, degrees.
    Polar { theta_deg: f64, phi_deg: f64 },
    /// Explicit vector; normalized on use.
    Vector { x: f64, y: f64, z: f64 },
}

impl FieldDirection {
    pub fn in_plane(angle_deg: f64) -> Self {
        FieldDirection::InPlane { angle_deg }
    }

    pub fn polar(theta_deg: f64, phi_deg: f64) -> Self {
        FieldDirection::Polar { theta_deg, phi_deg }
    }

    pub fn unit(&self) -> Result<Vec3> {
        let v = match *self {
            FieldDirection::InPlane { angle_deg } => {
                let a = angle_deg.to_radians();
                Vec3::new(a.cos(), a.sin(), 0.0)
            }
            FieldDirection::Polar { theta_deg, phi_deg } => unit_from_angles(theta_deg.to_radians(), phi_deg.to_radians()),
            FieldDirection::Vector { x, y, z } => Vec3::new(x, y, z),
        };
        let n = v.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(invalid("field direction does not normalize to a unit vector"));
        }
        Ok(v / n)
    }
}

/// Unit vector for polar angle θ (from b) and azimuth φ (from D₁), radians.
pub fn unit_from_angles(theta: f64, phi: f64) -> Vec3 {
    Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

/// Applied field: magnitude in mT plus a direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub magnitude_mt: f64,
    pub direction: FieldDirection,
}

impl FieldSpec {
    pub fn new(magnitude_mt: f64, direction: FieldDirection) -> Result<Self> {
        if !(magnitude_mt.is_finite() && magnitude_mt >= 0.0) {
            return Err(invalid(format!("field magnitude must be >= 0, got {magnitude_mt}")));
        }
        direction.unit()?;
        Ok(Self { magnitude_mt, direction })
    }

    pub fn in_plane(magnitude_mt: f64, angle_deg: f64) -> Result<Self> {
        Self::new(magnitude_mt, FieldDirection::in_plane(angle_deg))
    }

    /// Field vector in tesla.
    pub fn vector_t(&self) -> Result<Vec3> {
        Ok(self.direction.unit()? * crate::units::mt_to_t(self.magnitude_mt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn in_plane_225_has_zero_b_component() {
        let u = FieldDirection::in_plane(225.0).unit().unwrap();
        assert_eq!(u.z, 0.0);
        assert!((u.x - u.y).abs() < 1e-15);
        assert!(u.x < 0.0);
    }

    #[test]
    fn c2_conjugation_is_involutive() {
        let g = GTensor::from_rows([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.5]]).unwrap();
        assert_eq!(g.c2_conjugate().c2_conjugate(), g);
        let c = g.c2_conjugate();
        // only the b-mixing entries change sign
        assert_eq!(c.matrix()[(0, 1)], 2.0);
        assert_eq!(c.matrix()[(0, 2)], -3.0);
        assert_eq!(c.matrix()[(2, 1)], -8.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(GTensor::from_rows([[f64::NAN, 0.0, 0.0], [0.0; 3], [0.0; 3]]).is_err());
        assert!(NuclearSite::new(Vec3::zeros(), 2.1).is_err());
        assert!(NuclearSite::new(Vec3::x(), -1.0).is_err());
        assert!(FieldSpec::in_plane(-1.0, 0.0).is_err());
        assert!(FieldSpec::new(1.0, FieldDirection::Vector { x: 0.0, y: 0.0, z: 0.0 }).is_err());
    }
}
