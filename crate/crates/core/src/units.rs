//! Physical constants and the unit conversions used at the API boundary.
//!
//! Public entry points take Å, mT, kHz, GHz/T and MHz/T; everything below
//! them runs in SI.

/// Bohr magneton, J/T (CODATA 2018).
pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;

/// Planck constant, J·s (exact).
pub const PLANCK: f64 = 6.626_070_15e-34;

/// μ0/4π, T·m/A.
pub const MU0_OVER_4PI: f64 = 1e-7;

/// μ_B/h in Hz/T.
pub const BOHR_MAGNETON_OVER_H: f64 = BOHR_MAGNETON / PLANCK;

/// μ_B/h in GHz/T (≈ 13.996245).
pub const BOHR_MAGNETON_OVER_H_GHZ: f64 = BOHR_MAGNETON_OVER_H * 1e-9;

/// ⁸⁹Y gyromagnetic ratio magnitude, MHz/T.
pub const GAMMA_Y89_MHZ_PER_T: f64 = 2.1;

pub const ANGSTROM: f64 = 1e-10;
pub const MILLITESLA: f64 = 1e-3;

#[inline]
pub fn angstrom_to_m(x: f64) -> f64 {
    x * ANGSTROM
}

#[inline]
pub fn mt_to_t(b: f64) -> f64 {
    b * MILLITESLA
}

#[inline]
pub fn t_to_mt(b: f64) -> f64 {
    b / MILLITESLA
}

/// γ (MHz/T) times |B| (T) expressed in kHz.
#[inline]
pub fn splitting_khz(gamma_mhz_per_t: f64, field_t: f64) -> f64 {
    gamma_mhz_per_t * field_t * 1e3
}

/// Phase argument Δ·t in cycles for Δ in kHz and t in µs.
#[inline]
pub fn cycles(freq_khz: f64, t_us: f64) -> f64 {
    freq_khz * t_us * 1e-3
}
