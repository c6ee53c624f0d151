//! C ABI over `shf-core`.
//!
//! Every entry point returns a [`ShfStatus`]; results go through out-pointers.
//! On failure the message is kept per thread and read back with
//! [`shf_last_error_message`]. Handles are opaque and must be released with
//! their `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use shf_core::atlas::{rho_max_over_field, SearchOptions};
use shf_core::dataset::GTensorDataset;
use shf_core::echo::{echo_intensity, EchoParams, EchoTrace, Modulation};
use shf_core::fitkit::{self, FitConfig};
use shf_core::lattice::{self, LatticeFile};
use shf_core::oracle::oracle_solve;
use shf_core::spincore::{self, zeeman_splitting_per_tesla, Branch, FieldDirection, FieldSpec, GTensor, NuclearSite, Orientation, SiteLabel, SpinCenter, Vec3};
use shf_core::ShfError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    /// File missing, unreadable or malformed.
    Io = 3,
    UnknownIon = 4,
    /// Field along a direction where the electron has no quantization axis.
    Degenerate = 5,
    /// Ion closer than the minimum distance.
    Geometry = 6,
    NonConvergence = 7,
    Unidentifiable = 8,
    /// Any other computation failure.
    Computation = 9,
    Panic = 10,
}

/// Erbium ion: ground and excited g-tensors plus its orientation.
pub struct ShfCenter(SpinCenter);

/// Ligand positions (Å) and gyromagnetic ratios (MHz/T).
pub struct ShfLattice(LatticeFile);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ShfVec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<ShfVec3> for Vec3 {
    fn from(v: ShfVec3) -> Self {
        Vec3::new(v.x, v.y, v.z)
    }
}

impl From<Vec3> for ShfVec3 {
    fn from(v: Vec3) -> Self {
        ShfVec3 { x: v.x, y: v.y, z: v.z }
    }
}

/// Closed-form observables. Fields in T, splittings in kHz, alpha in radians.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ShfSolveResult {
    pub b_g: ShfVec3,
    pub b_e: ShfVec3,
    pub alpha: f64,
    pub delta_g: f64,
    pub delta_e: f64,
    pub ratio: f64,
    pub rho: f64,
}

/// Exact 4-level results; splittings in kHz.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ShfOracleResult {
    pub delta_g: f64,
    pub delta_e: f64,
    pub ratio: f64,
    pub rho: f64,
}

/// Single-spin echo model: I0, T2 (µs), x, Δg and Δe (kHz), ρ.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ShfEchoParams {
    pub i0: f64,
    pub t2: f64,
    pub x: f64,
    pub delta_g: f64,
    pub delta_e: f64,
    pub rho: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ShfFitResult {
    /// `x` echoes the fixed exponent.
    pub estimates: ShfEchoParams,
    /// One-sigma; `x` is 0.
    pub sigmas: ShfEchoParams,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub usable: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &ShfError) -> ShfStatus {
    match e {
        ShfError::InvalidInput(_) | ShfError::OutOfRange { .. } | ShfError::NonUniformSampling { .. } | ShfError::TooShort { .. } | ShfError::UndefinedAngle => ShfStatus::InvalidInput,
        ShfError::Parse { .. } | ShfError::FrameMismatch(_) | ShfError::DuplicatePosition { .. } | ShfError::MissingFile(_) | ShfError::Io(_) | ShfError::Csv(_) | ShfError::Json(_) => ShfStatus::Io,
        ShfError::UnknownIon { .. } => ShfStatus::UnknownIon,
        ShfError::DegenerateQuantization => ShfStatus::Degenerate,
        ShfError::UnphysicalGeometry { .. } => ShfStatus::Geometry,
        ShfError::NonConvergence { .. } => ShfStatus::NonConvergence,
        ShfError::Unidentifiable { .. } => ShfStatus::Unidentifiable,
        _ => ShfStatus::Computation,
    }
}

/// Runs `f`, recording the error text and mapping it to a status.
fn guard(f: impl FnOnce() -> Result<(), (ShfStatus, String)>) -> ShfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            ShfStatus::Ok
        }
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            ShfStatus::Panic
        }
    }
}

trait IntoFfi<T> {
    fn ffi(self) -> Result<T, (ShfStatus, String)>;
}

impl<T> IntoFfi<T> for shf_core::Result<T> {
    fn ffi(self) -> Result<T, (ShfStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (ShfStatus, String) {
    (ShfStatus::NullPointer, format!("null pointer: {what}"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (ShfStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write<T>(p: *mut T, v: T, what: &str) -> Result<(), (ShfStatus, String)> {
    let slot = p.as_mut().ok_or_else(|| null(what))?;
    *slot = v;
    Ok(())
}

fn orientation(o: u8) -> Result<Orientation, (ShfStatus, String)> {
    match o {
        0 => Ok(Orientation::A),
        1 => Ok(Orientation::B),
        _ => Err((ShfStatus::InvalidInput, format!("orientation must be 0 (A) or 1 (B), got {o}"))),
    }
}

fn field(magnitude_mt: f64, direction: ShfVec3) -> Result<FieldSpec, (ShfStatus, String)> {
    FieldSpec::new(magnitude_mt, FieldDirection::Vector { x: direction.x, y: direction.y, z: direction.z }).ffi()
}

/// Copies the last error of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn shf_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Static, NUL-terminated version string.
#[no_mangle]
pub extern "C" fn shf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Bundled tensors. `site` is 1 or 2, `orientation` 0 (A) or 1 (B).
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn shf_center_bundled(site: u8, orientation_code: u8, out: *mut *mut ShfCenter) -> ShfStatus {
    guard(|| {
        let label = match site {
            1 => SiteLabel::Site1,
            2 => SiteLabel::Site2,
            _ => return Err((ShfStatus::InvalidInput, format!("site must be 1 or 2, got {site}"))),
        };
        let c = GTensorDataset::bundled().center(label, orientation(orientation_code)?).ffi()?;
        write(out, Box::into_raw(Box::new(ShfCenter(c))), "out")
    })
}

/// Center from two row-major 3×3 tensors (dimensionless).
///
/// # Safety
/// `ground` and `excited` must point to 9 doubles; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn shf_center_from_tensors(ground: *const f64, excited: *const f64, orientation_code: u8, out: *mut *mut ShfCenter) -> ShfStatus {
    guard(|| {
        let read = |p: *const f64, what: &str| -> Result<GTensor, (ShfStatus, String)> {
            if p.is_null() {
                return Err(null(what));
            }
            let s = std::slice::from_raw_parts(p, 9);
            GTensor::from_rows([[s[0], s[1], s[2]], [s[3], s[4], s[5]], [s[6], s[7], s[8]]]).ffi()
        };
        let c = SpinCenter { g_ground: read(ground, "ground")?, g_excited: read(excited, "excited")?, site: SiteLabel::Site1, orientation: orientation(orientation_code)? };
        write(out, Box::into_raw(Box::new(ShfCenter(c))), "out")
    })
}

/// # Safety
/// `center` must come from a `shf_center_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn shf_center_free(center: *mut ShfCenter) {
    if !center.is_null() {
        drop(Box::from_raw(center));
    }
}

/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn shf_lattice_bundled(out: *mut *mut ShfLattice) -> ShfStatus {
    guard(|| write(out, Box::into_raw(Box::new(ShfLattice(LatticeFile::bundled()))), "out"))
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn shf_lattice_load(path: *const c_char, out: *mut *mut ShfLattice) -> ShfStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let p = CStr::from_ptr(path).to_str().map_err(|_| (ShfStatus::InvalidInput, "path is not UTF-8".to_string()))?;
        let l = lattice::load_lattice(p).ffi()?;
        write(out, Box::into_raw(Box::new(ShfLattice(l))), "out")
    })
}

/// # Safety
/// `lattice` must come from a `shf_lattice_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn shf_lattice_free(lattice: *mut ShfLattice) {
    if !lattice.is_null() {
        drop(Box::from_raw(lattice));
    }
}

/// Number of sites; 0 for a null handle.
///
/// # Safety
/// `lattice` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn shf_lattice_len(lattice: *const ShfLattice) -> usize {
    lattice.as_ref().map_or(0, |l| l.0.len())
}

/// Position (Å) of a labelled site as seen from an ion of the given
/// orientation (B applies the C₂ image), and its γ (MHz/T).
///
/// # Safety
/// `lattice` must be a live handle, `label` NUL-terminated, the outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn shf_lattice_site(lattice: *const ShfLattice, label: *const c_char, orientation_code: u8, position: *mut ShfVec3, gamma: *mut f64) -> ShfStatus {
    guard(|| {
        let l = &deref(lattice, "lattice")?.0;
        if label.is_null() {
            return Err(null("label"));
        }
        let name = CStr::from_ptr(label).to_string_lossy();
        let site = l.get(&name).ok_or_else(|| (ShfStatus::UnknownIon, format!("unknown ion `{name}`; known labels: {}", l.labels().join(", "))))?;
        let n = site.nuclear_site(orientation(orientation_code)?).ffi()?;
        write(position, n.position.into(), "position")?;
        write(gamma, n.gamma, "gamma")
    })
}

fn nuclear(position: ShfVec3, gamma: f64) -> Result<NuclearSite, (ShfStatus, String)> {
    NuclearSite::new(position.into(), gamma).ffi()
}

/// Closed-form splittings and contrast, lower electron branch. Position in Å,
/// γ in MHz/T, field magnitude in mT along `direction` (any non-zero vector).
///
/// # Safety
/// `center` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn shf_solve(center: *const ShfCenter, position: ShfVec3, gamma: f64, field_mt: f64, direction: ShfVec3, out: *mut ShfSolveResult) -> ShfStatus {
    guard(|| {
        let c = &deref(center, "center")?.0;
        let r = spincore::shf_solve(c, &nuclear(position, gamma)?, &field(field_mt, direction)?, Branch::Minus).ffi()?;
        let res = ShfSolveResult { b_g: r.b_g.into(), b_e: r.b_e.into(), alpha: r.alpha, delta_g: r.delta_g, delta_e: r.delta_e, ratio: r.ratio, rho: r.rho };
        write(out, res, "out")
    })
}

/// Same inputs as [`shf_solve`], solved by exact diagonalization.
///
/// # Safety
/// `center` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn shf_oracle(center: *const ShfCenter, position: ShfVec3, gamma: f64, field_mt: f64, direction: ShfVec3, out: *mut ShfOracleResult) -> ShfStatus {
    guard(|| {
        let c = &deref(center, "center")?.0;
        let r = oracle_solve(c, &nuclear(position, gamma)?, &field(field_mt, direction)?).ffi()?;
        write(out, ShfOracleResult { delta_g: r.delta_g, delta_e: r.delta_e, ratio: r.r_oracle, rho: r.rho_oracle }, "out")
    })
}

/// Electron Zeeman coefficient in GHz/T; `manifold` 0 = ground, 1 = excited.
///
/// # Safety
/// `center` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn shf_zeeman(center: *const ShfCenter, manifold: u8, direction: ShfVec3, out: *mut f64) -> ShfStatus {
    guard(|| {
        let c = &deref(center, "center")?.0;
        let g = match manifold {
            0 => &c.g_ground,
            1 => &c.g_excited,
            _ => return Err((ShfStatus::InvalidInput, format!("manifold must be 0 or 1, got {manifold}"))),
        };
        write(out, zeeman_splitting_per_tesla(g, &direction.into()).ffi()?, "out")
    })
}

/// Maximum contrast over field strengths in [b_lo_mt, b_hi_mt] for an ion at
/// `r_angstrom` along `ion_direction`; also returns the optimal field (mT).
///
/// # Safety
/// `center` must be a live handle and the outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn shf_rho_max(
    center: *const ShfCenter,
    field_direction: ShfVec3,
    ion_direction: ShfVec3,
    r_angstrom: f64,
    b_lo_mt: f64,
    b_hi_mt: f64,
    rho_max: *mut f64,
    b_opt_mt: *mut f64,
) -> ShfStatus {
    guard(|| {
        let c = &deref(center, "center")?.0;
        let r_hat: Vec3 = ion_direction.into();
        let n = r_hat.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err((ShfStatus::InvalidInput, "ion direction must be a non-zero vector".into()));
        }
        let dir = FieldDirection::Vector { x: field_direction.x, y: field_direction.y, z: field_direction.z };
        let opts = SearchOptions { b_range_mt: (b_lo_mt, b_hi_mt), ..SearchOptions::default() };
        let m = rho_max_over_field(c, &dir, &(r_hat / n), r_angstrom, &opts).ffi()?;
        write(rho_max, m.rho_max, "rho_max")?;
        write(b_opt_mt, m.b_opt, "b_opt_mt")
    })
}

fn echo_params(p: &ShfEchoParams) -> Result<EchoParams, (ShfStatus, String)> {
    EchoParams::new(p.i0, p.t2, p.x, vec![Modulation::new(p.delta_g, p.delta_e, p.rho).ffi()?]).ffi()
}

/// Echo intensity at delay `t_us` (µs).
///
/// # Safety
/// `params` must be readable and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn shf_echo_intensity(params: *const ShfEchoParams, t_us: f64, out: *mut f64) -> ShfStatus {
    guard(|| {
        let p = echo_params(deref(params, "params")?)?;
        write(out, echo_intensity(t_us, &p), "out")
    })
}

/// Fits the single-spin model to `n` samples with x fixed at `x_fixed`.
///
/// # Safety
/// `t_us` and `intensity` must point to `n` doubles; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn shf_fit_echo(t_us: *const f64, intensity: *const f64, n: usize, x_fixed: f64, out: *mut ShfFitResult) -> ShfStatus {
    guard(|| {
        if t_us.is_null() || intensity.is_null() {
            return Err(null("samples"));
        }
        let trace = EchoTrace::new(std::slice::from_raw_parts(t_us, n).to_vec(), std::slice::from_raw_parts(intensity, n).to_vec()).ffi()?;
        let f = fitkit::fit_echo(&trace, &FitConfig { x_fixed, ..FitConfig::default() }).ffi()?;
        let pack = |p: &fitkit::FitParams, x: f64| ShfEchoParams { i0: p.i0, t2: p.t2, x, delta_g: p.delta_g, delta_e: p.delta_e, rho: p.rho };
        let res = ShfFitResult {
            estimates: pack(&f.estimates, x_fixed),
            sigmas: pack(&f.sigmas, 0.0),
            residual_norm: f.residual_norm,
            iterations: f.iterations,
            converged: f.converged,
            usable: f.usable,
        };
        write(out, res, "out")
    })
}

/// Homogeneous linewidth (kHz) for T2 in µs.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn shf_linewidth(t2_us: f64, out: *mut f64) -> ShfStatus {
    guard(|| write(out, fitkit::linewidth(t2_us).ffi()?, "out"))
}
