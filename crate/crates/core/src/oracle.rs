//! Exact diagonalization of the electron ⊗ nuclear 4×4 Hamiltonian of each
//! electronic manifold. Used to validate the effective-field picture, never
//! on the hot path.
//!
//! Basis ordering is `|m_S⟩ ⊗ |m_I⟩` with index `2·e + n`. Energies are in Hz
//! (E/h):
//!
//! ```text
//! H = (μ_B/h)(gᵀB)·S  −  γ B·I  +  Σ_kj A_kj S_k I_j
//! A = −(μ0/4π) μ_B γ / r³ · gᵀ(1 − 3 r̂ r̂ᵀ)
//! ```

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShfError};
use crate::spincore::{FieldSpec, GTensor, Manifold, NuclearSite, SpinCenter, Vec3, DEFAULT_MIN_DISTANCE_ANGSTROM};
use crate::units::{angstrom_to_m, BOHR_MAGNETON, BOHR_MAGNETON_OVER_H, MU0_OVER_4PI};

pub type Hermitian4 = Matrix4<Complex64>;

/// Electron Zeeman to coupling ratio below which the labeling gets a warning.
pub const WEAK_ZEEMAN_RATIO: f64 = 100.0;

/// Minimum |⟨n̂·S⟩| separating the two electron branches.
const BRANCH_SEPARATION: f64 = 0.25;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Spin-½ operators S_x, S_y, S_z.
fn spin_half() -> [Matrix2<Complex64>; 3] {
    let (o, z, i) = (c(0.5), c(0.0), Complex64::new(0.0, 0.5));
    [Matrix2::new(z, o, o, z), Matrix2::new(z, -i, i, z), Matrix2::new(o, z, z, -o)]
}

fn kron(a: &Matrix2<Complex64>, b: &Matrix2<Complex64>) -> Hermitian4 {
    Matrix4::from_fn(|r, col| a[(r / 2, col / 2)] * b[(r % 2, col % 2)])
}

fn dot_spin(v: &Vec3, s: &[Matrix2<Complex64>; 3]) -> Matrix2<Complex64> {
    s[0] * c(v.x) + s[1] * c(v.y) + s[2] * c(v.z)
}

/// The three pieces of a manifold Hamiltonian, in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianTerms {
    pub electron_zeeman: Hermitian4,
    pub nuclear_zeeman: Hermitian4,
    pub coupling: Hermitian4,
    /// Coupling tensor A (Hz), rows electron, columns nuclear.
    pub coupling_tensor: nalgebra::Matrix3<f64>,
    /// `gᵀB` in tesla; its direction is the electron quantization axis.
    pub g_b: Vec3,
}

impl HamiltonianTerms {
    pub fn total(&self) -> Hermitian4 {
        self.electron_zeeman + self.nuclear_zeeman + self.coupling
    }
}

pub fn manifold_terms(g: &GTensor, site: &NuclearSite, field: &FieldSpec) -> Result<HamiltonianTerms> {
    let dist = site.distance();
    if dist < DEFAULT_MIN_DISTANCE_ANGSTROM {
        return Err(ShfError::UnphysicalGeometry { distance: dist, min: DEFAULT_MIN_DISTANCE_ANGSTROM });
    }
    let s = spin_half();
    let one = Matrix2::<Complex64>::identity();
    let b = field.vector_t()?;
    let gamma_hz = site.gamma * 1e6;
    let g_b = g.coupling(&b);

    let electron_zeeman = kron(&dot_spin(&(g_b * BOHR_MAGNETON_OVER_H), &s), &one);
    let nuclear_zeeman = kron(&one, &dot_spin(&(b * -gamma_hz), &s));

    let r_hat = site.position / dist;
    let d = nalgebra::Matrix3::identity() - r_hat * r_hat.transpose() * 3.0;
    let a = g.matrix().transpose() * d * (-MU0_OVER_4PI * BOHR_MAGNETON * gamma_hz / angstrom_to_m(dist).powi(3));
    let mut coupling = Hermitian4::zeros();
    for k in 0..3 {
        for j in 0..3 {
            coupling += kron(&s[k], &s[j]) * c(a[(k, j)]);
        }
    }
    Ok(HamiltonianTerms { electron_zeeman, nuclear_zeeman, coupling, coupling_tensor: a, g_b })
}

pub fn build_manifold_hamiltonian(center: &SpinCenter, site: &NuclearSite, field: &FieldSpec, manifold: Manifold) -> Result<Hermitian4> {
    Ok(manifold_terms(center.tensor(manifold), site, field)?.total())
}

/// Largest |H − H†| entry relative to the largest |H| entry.
pub fn hermiticity_defect(h: &Hermitian4) -> f64 {
    let scale = h.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    (h - h.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max) / scale
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Drop the electron-nuclear coupling (r → ∞ limit).
    pub no_coupling: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Ground-manifold eigenvalues, ascending, kHz, relative to the trace mean.
    pub eigenvalues_g: [f64; 4],
    pub eigenvalues_e: [f64; 4],
    /// Nuclear splitting within the lower electron branch, kHz.
    pub delta_g: f64,
    pub delta_e: f64,
    pub r_oracle: f64,
    pub rho_oracle: f64,
    /// `overlaps[a][b] = |⟨3+a|P|1+b⟩|²`.
    pub overlaps: [[f64; 2]; 2],
}

impl OracleResult {
    /// Σ_a |⟨a|P|b⟩|² for each ground level b; 1 up to electron-branch admixture.
    pub fn column_sums(&self) -> [f64; 2] {
        [self.overlaps[0][0] + self.overlaps[1][0], self.overlaps[0][1] + self.overlaps[1][1]]
    }
}

/// Lower-branch eigenpairs of one manifold, sorted by energy.
struct ManifoldSolution {
    eigenvalues: Vector4<f64>,
    lower: [(f64, Vector4<Complex64>); 2],
    /// Bare electron state with ⟨n̂·S⟩ = −½.
    bare_lower: nalgebra::Vector2<Complex64>,
}

fn solve_manifold(g: &GTensor, site: &NuclearSite, field: &FieldSpec, opts: OracleOptions) -> Result<ManifoldSolution> {
    let terms = manifold_terms(g, site, field)?;
    let h = if opts.no_coupling { terms.electron_zeeman + terms.nuclear_zeeman } else { terms.total() };

    let gb = terms.g_b.norm();
    let electron_hz = BOHR_MAGNETON_OVER_H * gb;
    let coupling_hz = terms.coupling_tensor.norm() + site.gamma * 1e6 * field.vector_t()?.norm();
    if electron_hz == 0.0 || !electron_hz.is_finite() {
        return Err(ShfError::IllConditionedLabeling("electron Zeeman splitting vanishes".into()));
    }
    if electron_hz < WEAK_ZEEMAN_RATIO * coupling_hz {
        log::warn!("electron Zeeman splitting only {:.1}x the nuclear/coupling scale; labeling may be unreliable", electron_hz / coupling_hz);
    }

    let s = spin_half();
    let n_hat = terms.g_b / gb;
    let sz_axis = dot_spin(&n_hat, &s);
    let projector = kron(&sz_axis, &Matrix2::identity());

    let eig = SymmetricEigen::new(h);
    let mut states: Vec<(f64, f64, Vector4<Complex64>)> = (0..4)
        .map(|i| {
            let v = eig.eigenvectors.column(i).into_owned();
            let axis = (v.adjoint() * projector * v)[(0, 0)].re;
            (eig.eigenvalues[i], axis, v)
        })
        .collect();
    states.sort_by(|a, b| a.1.total_cmp(&b.1));
    if states[1].1 > -BRANCH_SEPARATION || states[2].1 < BRANCH_SEPARATION {
        return Err(ShfError::IllConditionedLabeling(format!(
            "electron branches mixed: <n.S> = {:.3}, {:.3}",
            states[1].1, states[2].1
        )));
    }
    let mut lower = [states[0], states[1]];
    lower.sort_by(|a, b| a.0.total_cmp(&b.0));

    let bare = SymmetricEigen::new(sz_axis);
    let k = if bare.eigenvalues[0] < bare.eigenvalues[1] { 0 } else { 1 };

    let mut eigenvalues = eig.eigenvalues;
    eigenvalues.as_mut_slice().sort_by(f64::total_cmp);
    Ok(ManifoldSolution {
        eigenvalues,
        lower: [(lower[0].0, lower[0].2), (lower[1].0, lower[1].2)],
        bare_lower: bare.eigenvectors.column(k).into_owned(),
    })
}

pub fn oracle_solve(center: &SpinCenter, site: &NuclearSite, field: &FieldSpec) -> Result<OracleResult> {
    oracle_solve_with(center, site, field, OracleOptions::default())
}

pub fn oracle_solve_with(center: &SpinCenter, site: &NuclearSite, field: &FieldSpec, opts: OracleOptions) -> Result<OracleResult> {
    let ground = solve_manifold(&center.g_ground, site, field, opts)?;
    let excited = solve_manifold(&center.g_excited, site, field, opts)?;

    // P = |−e⟩⟨−g| ⊗ 1
    let flip = excited.bare_lower * ground.bare_lower.adjoint();
    let p = kron(&flip, &Matrix2::identity());
    let mut overlaps = [[0.0; 2]; 2];
    for (a, (_, ea)) in excited.lower.iter().enumerate() {
        for (b, (_, gb)) in ground.lower.iter().enumerate() {
            overlaps[a][b] = (ea.adjoint() * p * gb)[(0, 0)].norm_sqr();
        }
    }
    let (direct, cross) = (overlaps[0][0], overlaps[0][1]);
    let r_oracle = cross / direct;
    let total = direct + cross;
    let rho_oracle = if total > 0.0 { (4.0 * direct * cross / (total * total)).clamp(0.0, 1.0) } else { 0.0 };

    let khz = |v: &Vector4<f64>| {
        let mean = v.sum() / 4.0;
        [0, 1, 2, 3].map(|i| (v[i] - mean) * 1e-3)
    };
    Ok(OracleResult {
        eigenvalues_g: khz(&ground.eigenvalues),
        eigenvalues_e: khz(&excited.eigenvalues),
        delta_g: (ground.lower[1].0 - ground.lower[0].0) * 1e-3,
        delta_e: (excited.lower[1].0 - excited.lower[0].0) * 1e-3,
        r_oracle,
        rho_oracle,
        overlaps,
    })
}
