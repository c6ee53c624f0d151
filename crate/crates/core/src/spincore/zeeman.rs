use super::{Branch, FieldSpec, GTensor, Vec3};
use crate::error::{invalid, Result, ShfError};
use crate::units::{BOHR_MAGNETON, BOHR_MAGNETON_OVER_H_GHZ};

/// Relative threshold on |gᵀB̂| (against the Frobenius norm of g) below which
/// the quantization axis is undefined.
const DEGENERATE_COUPLING: f64 = 1e-12;

/// Electron Zeeman splitting `(μ_B/h)·|gᵀB|` in GHz.
pub fn zeeman_splitting(g: &GTensor, field: &FieldSpec) -> Result<f64> {
    let b = field.vector_t()?;
    Ok(BOHR_MAGNETON_OVER_H_GHZ * g.coupling(&b).norm())
}

/// Zeeman coefficient along `direction` in GHz/T.
pub fn zeeman_splitting_per_tesla(g: &GTensor, direction: &Vec3) -> Result<f64> {
    let n = direction.norm();
    if !(n.is_finite() && n > 0.0) {
        return Err(invalid("direction must be a non-zero finite vector"));
    }
    Ok(BOHR_MAGNETON_OVER_H_GHZ * g.coupling(&(direction / n)).norm())
}

/// Expectation value of the electron moment (J/T) in one Zeeman branch.
///
/// With `n̂ = gᵀB̂/|gᵀB̂|` the lower branch carries `+(μ_B/2)·g·n̂` and the
/// upper branch its negation. Only the direction of `field_direction` matters.
pub fn er_moment_expectation(g: &GTensor, field_direction: &Vec3, branch: Branch) -> Result<Vec3> {
    let len = field_direction.norm();
    if !(len.is_finite() && len > 0.0) {
        return Err(invalid("field direction must be a non-zero finite vector"));
    }
    let scale = g.matrix().norm();
    if scale == 0.0 {
        // no moment at all
        return Ok(Vec3::zeros());
    }
    let coupling = g.coupling(&(field_direction / len));
    let c = coupling.norm();
    if c <= DEGENERATE_COUPLING * scale {
        return Err(ShfError::DegenerateQuantization);
    }
    let axis = coupling / c;
    let lower = g.matrix() * axis * (0.5 * BOHR_MAGNETON);
    Ok(match branch {
        Branch::Minus => lower,
        Branch::Plus => -lower,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spincore::FieldDirection;
    use nalgebra::{Matrix2, SymmetricEigen};
    use num_complex::Complex64 as C;

    fn anisotropic() -> GTensor {
        GTensor::from_rows([[2.9, -2.95, -3.56], [-1.1, 8.9, 5.57], [-3.56, 4.0, 5.12]]).unwrap()
    }

    #[test]
    fn zero_field_gives_zero_splitting() {
        let f = FieldSpec::in_plane(0.0, 225.0).unwrap();
        assert_eq!(zeeman_splitting(&anisotropic(), &f).unwrap(), 0.0);
    }

    #[test]
    fn isotropic_g2_at_one_tesla() {
        let g = GTensor::isotropic(2.0).unwrap();
        let f = FieldSpec::in_plane(1000.0, 17.0).unwrap();
        let nu = zeeman_splitting(&g, &f).unwrap();
        assert!((nu - 27.99249).abs() < 1e-4, "{nu}");
    }

    #[test]
    fn splitting_is_linear_in_field() {
        let g = anisotropic();
        let a = zeeman_splitting(&g, &FieldSpec::in_plane(40.0, 225.0).unwrap()).unwrap();
        let b = zeeman_splitting(&g, &FieldSpec::in_plane(120.0, 225.0).unwrap()).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-12 * b);
    }

    #[test]
    fn isotropic_moment_is_one_bohr_magneton() {
        let g = GTensor::isotropic(2.0).unwrap();
        let d = FieldDirection::polar(30.0, 70.0).unit().unwrap();
        let m = er_moment_expectation(&g, &d, Branch::Minus).unwrap();
        assert!((m.norm() / BOHR_MAGNETON - 1.0).abs() < 1e-14);
        // lower branch: moment along the field, negative Zeeman energy
        assert!(m.dot(&d) > 0.0);
    }

    #[test]
    fn moment_depends_on_direction_only() {
        let g = anisotropic();
        let d = Vec3::new(0.3, -0.4, 0.8);
        let a = er_moment_expectation(&g, &d, Branch::Minus).unwrap();
        let b = er_moment_expectation(&g, &(d * 17.5), Branch::Minus).unwrap();
        assert!((a - b).norm() <= 1e-15 * a.norm());
        let p = er_moment_expectation(&g, &d, Branch::Plus).unwrap();
        assert_eq!(p, -a);
    }

    #[test]
    fn null_direction_is_degenerate() {
        let g = GTensor::from_rows([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        let err = er_moment_expectation(&g, &Vec3::z(), Branch::Minus).unwrap_err();
        assert!(matches!(err, ShfError::DegenerateQuantization));
    }

    /// Brute force: diagonalize H = μ_B (gᵀB)·S as a 2×2 Hermitian matrix and
    /// evaluate ⟨ψ|μ̂|ψ⟩ with μ̂_i = -μ_B Σ_k g_ik S_k.
    fn brute_force_moment(g: &GTensor, b: &Vec3, upper: bool) -> Vec3 {
        let i = C::new(0.0, 1.0);
        let one = C::new(1.0, 0.0);
        let zero = C::new(0.0, 0.0);
        let s = [
            Matrix2::new(zero, one, one, zero) * C::from(0.5),
            Matrix2::new(zero, -i, i, zero) * C::from(0.5),
            Matrix2::new(one, zero, zero, -one) * C::from(0.5),
        ];
        let gb = g.coupling(b);
        let h = s[0] * C::from(gb.x) + s[1] * C::from(gb.y) + s[2] * C::from(gb.z);
        let eig = SymmetricEigen::new(h);
        let idx = if (eig.eigenvalues[0] < eig.eigenvalues[1]) ^ upper { 0 } else { 1 };
        let psi = eig.eigenvectors.column(idx).into_owned();
        let spin: Vec<f64> = s.iter().map(|sk| (psi.adjoint() * sk * psi)[(0, 0)].re).collect();
        let spin = Vec3::new(spin[0], spin[1], spin[2]);
        -(g.matrix() * spin) * BOHR_MAGNETON
    }

    #[test]
    fn matches_explicit_two_level_diagonalization() {
        let g = anisotropic();
        for d in [Vec3::new(1.0, 0.2, -0.3), Vec3::new(-0.7, -0.7, 0.0), Vec3::new(0.1, 0.9, 0.4)] {
            for (branch, upper) in [(Branch::Minus, false), (Branch::Plus, true)] {
                let closed = er_moment_expectation(&g, &d, branch).unwrap();
                let brute = brute_force_moment(&g, &d, upper);
                assert!((closed - brute).norm() < 1e-12 * closed.norm(), "{closed} vs {brute}");
            }
        }
    }
}
