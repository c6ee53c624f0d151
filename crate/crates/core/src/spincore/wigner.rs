use nalgebra::Matrix2;
use num_complex::Complex64;

use crate::error::{invalid, Result};

pub type WignerD = Matrix2<Complex64>;

/// Spin-½ Wigner rotation matrix for Euler angles (α, β, γ), zyz convention.
pub fn wigner_d_half(alpha: f64, beta: f64, gamma: f64) -> Result<WignerD> {
    if !(alpha.is_finite() && beta.is_finite() && gamma.is_finite()) {
        return Err(invalid("Euler angles must be finite"));
    }
    let phase = |x: f64| Complex64::from_polar(1.0, x);
    let (s, c) = (0.5 * beta).sin_cos();
    let (ha, hg) = (0.5 * alpha, 0.5 * gamma);
    Ok(Matrix2::new(
        phase(-ha) * c * phase(-hg),
        -phase(-ha) * s * phase(hg),
        phase(ha) * s * phase(-hg),
        phase(ha) * c * phase(hg),
    ))
}

/// Cross-to-direct overlap ratio |⟨2|3⟩|²/|⟨1|3⟩|² where the first row of
/// `d` expands |3⟩ in the {|1⟩, |2⟩} basis.
pub fn rotation_branching_ratio(d: &WignerD) -> f64 {
    d[(0, 1)].norm_sqr() / d[(0, 0)].norm_sqr()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn assert_close(a: &WignerD, b: &WignerD, tol: f64) {
        assert!((a - b).norm() < tol, "{a} vs {b}");
    }

    #[test]
    fn identity_at_zero() {
        assert_close(&wigner_d_half(0.0, 0.0, 0.0).unwrap(), &WignerD::identity(), 1e-15);
    }

    #[test]
    fn pi_about_y_is_a_spin_flip() {
        let d = wigner_d_half(0.0, PI, 0.0).unwrap();
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        assert_close(&d, &Matrix2::new(zero, -one, one, zero), 1e-15);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(wigner_d_half(f64::NAN, 0.0, 0.0).is_err());
    }

    /// Independent route: spin-up eigenvector of n̂·σ for n̂ tilted by β from z,
    /// overlapped with the z basis.
    fn eigenvector_ratio(beta: f64, azimuth: f64) -> f64 {
        let n = (beta.sin() * azimuth.cos(), beta.sin() * azimuth.sin(), beta.cos());
        let i = Complex64::new(0.0, 1.0);
        let h = Matrix2::new(
            Complex64::from(n.2),
            Complex64::from(n.0) - i * n.1,
            Complex64::from(n.0) + i * n.1,
            Complex64::from(-n.2),
        );
        let eig = SymmetricEigen::new(h);
        let up = if eig.eigenvalues[0] > eig.eigenvalues[1] { 0 } else { 1 };
        let v = eig.eigenvectors.column(up);
        v[1].norm_sqr() / v[0].norm_sqr()
    }

    proptest! {
        #[test]
        fn unitary_with_unit_determinant(a in -10.0..10.0f64, b in -10.0..10.0f64, g in -10.0..10.0f64) {
            let d = wigner_d_half(a, b, g).unwrap();
            prop_assert!((d.adjoint() * d - WignerD::identity()).norm() < 1e-14);
            prop_assert!((d.determinant().norm() - 1.0).abs() < 1e-14);
        }

        #[test]
        fn overlap_ratio_is_half_angle_tangent(a in -3.0..3.0f64, b in 0.01..3.1f64, g in -3.0..3.0f64) {
            let d = wigner_d_half(a, b, g).unwrap();
            let r = rotation_branching_ratio(&d);
            let t = (0.5 * b).tan().powi(2);
            prop_assert!((r - t).abs() <= 1e-12 * t.max(1.0));
            let brute = eigenvector_ratio(b, a);
            prop_assert!((r - brute).abs() <= 1e-9 * t.max(1.0), "{} vs {}", r, brute);
        }
    }
}
