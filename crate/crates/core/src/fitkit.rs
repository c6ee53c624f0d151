//! Single-modulation echo fits with the Mims exponent held fixed.
//!
//! Levenberg–Marquardt on transformed parameters (log for I0, T2, Δg, Δe;
//! logit for ρ) with Marquardt diagonal scaling. Uncertainties come from
//! `s²(JᵀJ)⁻¹` with the Jacobian taken in natural parameters at the optimum.

use nalgebra::{DMatrix, DVector, SMatrix, SVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::echo::{echo_intensity, fit_envelope, noise_sigma, spectrum, Detrend, EchoParams, EchoTrace, Modulation, SpectrumOptions, Window};
use crate::error::{invalid, Result, ShfError};

pub const DEFAULT_MAX_ITERATIONS: usize = 500;
pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const MIN_FIT_SAMPLES: usize = 16;
pub const PARAM_NAMES: [&str; 5] = ["I0", "T2", "delta_g", "delta_e", "rho"];

/// Spectral lines tried as splitting candidates.
const CANDIDATE_PEAKS: usize = 6;
const RHO_GRID: usize = 51;
/// Spectrum for the initial guess stops where the envelope falls below this fraction of I0 ...
const ENVELOPE_FLOOR: f64 = 0.02;
/// ... or below this many noise standard deviations.
const NOISE_SIGMAS: f64 = 5.0;
/// Relative column-norm ratio below which the normal matrix is singular.
const SINGULAR: f64 = 1e-12;

type Vec5 = SVector<f64, 5>;
type Mat5 = SMatrix<f64, 5, 5>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub i0: f64,
    /// µs
    pub t2: f64,
    /// kHz
    pub delta_g: f64,
    /// kHz
    pub delta_e: f64,
    pub rho: f64,
}

impl FitParams {
    fn to_array(self) -> [f64; 5] {
        [self.i0, self.t2, self.delta_g, self.delta_e, self.rho]
    }

    fn from_array(a: [f64; 5]) -> Self {
        Self { i0: a[0], t2: a[1], delta_g: a[2], delta_e: a[3], rho: a[4] }
    }

    pub fn echo_params(&self, x: f64) -> Result<EchoParams> {
        EchoParams::new(self.i0, self.t2, x, vec![Modulation::new(self.delta_g, self.delta_e, self.rho)?])
    }

    fn canonical(self) -> Self {
        if self.delta_g >= self.delta_e {
            self
        } else {
            Self { delta_g: self.delta_e, delta_e: self.delta_g, ..self }
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = [self.i0, self.t2, self.delta_g, self.delta_e].iter().all(|v| v.is_finite() && *v > 0.0);
        if !positive || !(0.0..=1.0).contains(&self.rho) {
            return Err(invalid(format!("initial guess out of bounds: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Mims exponent, never fitted.
    pub x_fixed: f64,
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub tolerance: f64,
    pub initial: Option<FitParams>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { x_fixed: 1.5, max_iterations: DEFAULT_MAX_ITERATIONS, tolerance: DEFAULT_TOLERANCE, initial: None }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if !(self.x_fixed.is_finite() && self.x_fixed > 0.0) {
            return Err(invalid("x_fixed must be > 0"));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(invalid("tolerance must be > 0 and max_iterations >= 1"));
        }
        if let Some(p) = &self.initial {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub estimates: FitParams,
    /// One-sigma uncertainties, same units as `estimates`.
    pub sigmas: FitParams,
    /// Euclidean norm of the residual vector.
    pub residual_norm: f64,
    pub converged: bool,
    /// False whenever `converged` is false or an uncertainty is not finite.
    pub usable: bool,
    pub iterations: usize,
    pub x_fixed: f64,
    pub n_points: usize,
    pub initial: FitParams,
    /// Cost ½‖r‖² after each accepted step, starting with the initial guess.
    pub cost_history: Vec<f64>,
}

/// Homogeneous linewidth Γh = 1/(πT₂) in kHz for T₂ in µs.
pub fn linewidth(t2_us: f64) -> Result<f64> {
    if !(t2_us > 0.0) {
        return Err(invalid(format!("T2 must be > 0, got {t2_us}")));
    }
    Ok(1e3 / (std::f64::consts::PI * t2_us))
}

/// Inverse of [`linewidth`]: T₂ in µs for Γh in kHz.
pub fn t2_from_linewidth(gamma_khz: f64) -> Result<f64> {
    if !(gamma_khz > 0.0) {
        return Err(invalid(format!("linewidth must be > 0, got {gamma_khz}")));
    }
    Ok(1e3 / (std::f64::consts::PI * gamma_khz))
}

fn ssr(trace: &EchoTrace, p: &EchoParams) -> f64 {
    trace.t12_us.iter().zip(&trace.intensity).map(|(&t, &y)| (echo_intensity(t, p) - y).powi(2)).sum()
}

pub fn initial_guess(trace: &EchoTrace, x: f64) -> Result<FitParams> {
    trace.validate()?;
    if trace.len() < MIN_FIT_SAMPLES {
        return Err(ShfError::TooShort { len: trace.len(), min: MIN_FIT_SAMPLES });
    }
    let max = trace.intensity.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = trace.intensity.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || max - min <= 1e-12 * max {
        return Err(ShfError::NoSignal);
    }

    let env = fit_envelope(trace, x)?;
    let t2 = if env.t2.is_finite() { env.t2 } else { 10.0 * trace.t12_us[trace.len() - 1].max(1.0) };
    let shape = |t: f64| (-2.0 * (2.0 * t / t2).powf(x)).exp();
    let head = trace.len().min(3);
    let i0 = (0..head).map(|i| trace.intensity[i] / shape(trace.t12_us[i])).sum::<f64>() / head as f64;
    if !(i0 > 0.0) {
        return Err(ShfError::NoSignal);
    }

    // dividing out the envelope blows up late-time noise; keep the part above it
    let floor = (ENVELOPE_FLOOR * i0).max(NOISE_SIGMAS * noise_sigma(&trace.intensity));
    let keep = trace.t12_us.iter().take_while(|&&t| i0 * shape(t) >= floor).count();
    let head_trace;
    let trace_for_spectrum = if keep >= MIN_FIT_SAMPLES && keep < trace.len() {
        head_trace = EchoTrace::new(trace.t12_us[..keep].to_vec(), trace.intensity[..keep].to_vec())?;
        &head_trace
    } else {
        trace
    };
    let spec = spectrum(trace_for_spectrum, &SpectrumOptions { detrend: Detrend::EnvelopeNormalize, window: Window::Hann, zero_pad: 4, x })?;
    let freqs: Vec<f64> = spec.dominant_peaks(CANDIDATE_PEAKS).iter().map(|p| p.freq_khz).collect();
    if freqs.is_empty() {
        return Err(ShfError::NoSignal);
    }

    // the spectrum also carries sum, difference and harmonic lines, so let the
    // cost pick the pair and the contrast
    let cost_at = |dg: f64, de: f64, rho: f64| -> Result<f64> {
        let p = FitParams { i0, t2, delta_g: dg, delta_e: de, rho }.echo_params(x)?;
        Ok(ssr(trace, &p))
    };
    let mut best = (f64::INFINITY, freqs[0], freqs[0], 0.0);
    for (a, &fa) in freqs.iter().enumerate() {
        for &fb in &freqs[a..] {
            let (dg, de) = (fa.max(fb), fa.min(fb));
            for k in 0..RHO_GRID {
                let rho = k as f64 / (RHO_GRID - 1) as f64;
                let c = cost_at(dg, de, rho)?;
                if c < best.0 {
                    best = (c, dg, de, rho);
                }
            }
        }
    }
    let (_, delta_g, delta_e, rho) = best;
    Ok(FitParams { i0, t2, delta_g, delta_e, rho })
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn to_internal(p: &FitParams) -> Vec5 {
    let rho = p.rho.clamp(1e-6, 1.0 - 1e-6);
    Vec5::new(p.i0.ln(), p.t2.ln(), p.delta_g.ln(), p.delta_e.ln(), (rho / (1.0 - rho)).ln())
}

fn from_internal(z: &Vec5) -> FitParams {
    FitParams { i0: z[0].exp(), t2: z[1].exp(), delta_g: z[2].exp(), delta_e: z[3].exp(), rho: logistic(z[4]) }
}

/// Model value and its gradient with respect to the natural parameters.
fn model_and_gradient(t_us: f64, p: &FitParams, x: f64) -> (f64, [f64; 5]) {
    use std::f64::consts::PI;
    let tm = t_us * 1e-3; // ms, so Δ[kHz]·tm is in cycles
    let a = (2.0 * t_us / p.t2).powf(x);
    let e = (-2.0 * a).exp();
    let (sg, cg) = (2.0 * PI * p.delta_g * tm).sin_cos();
    let (se, ce) = (2.0 * PI * p.delta_e * tm).sin_cos();
    let (ug, ue) = (1.0 - cg, 1.0 - ce);
    let m = 1.0 - 0.5 * p.rho * ug * ue;
    let i = p.i0 * e * m * m;
    let grad = [
        e * m * m,
        i * 2.0 * x * a / p.t2,
        -p.i0 * e * m * p.rho * ue * 2.0 * PI * tm * sg,
        -p.i0 * e * m * p.rho * ug * 2.0 * PI * tm * se,
        -p.i0 * e * m * ug * ue,
    ];
    (i, grad)
}

/// Residuals and the Jacobian in internal coordinates.
fn evaluate(trace: &EchoTrace, z: &Vec5, x: f64) -> (DVector<f64>, DMatrix<f64>) {
    let p = from_internal(z);
    let chain = [p.i0, p.t2, p.delta_g, p.delta_e, p.rho * (1.0 - p.rho)];
    let n = trace.len();
    let mut r = DVector::zeros(n);
    let mut j = DMatrix::zeros(n, 5);
    for (row, (&t, &y)) in trace.t12_us.iter().zip(&trace.intensity).enumerate() {
        let (v, g) = model_and_gradient(t, &p, x);
        r[row] = v - y;
        for k in 0..5 {
            j[(row, k)] = g[k] * chain[k];
        }
    }
    (r, j)
}

fn normal_equations(j: &DMatrix<f64>, r: &DVector<f64>) -> (Mat5, Vec5) {
    let jtj = j.tr_mul(j);
    let jtr = j.tr_mul(r);
    (Mat5::from_fn(|a, b| jtj[(a, b)]), Vec5::from_fn(|a, _| jtr[a]))
}

/// Parameters whose columns vanish or lie in the near-null space of JᵀJ.
fn unidentifiable(jtj: &Mat5) -> Vec<&'static str> {
    let d: Vec<f64> = (0..5).map(|k| jtj[(k, k)]).collect();
    let dmax = d.iter().cloned().fold(0.0, f64::max);
    let mut out: Vec<&'static str> = (0..5).filter(|&k| !(d[k] > SINGULAR * SINGULAR * dmax)).map(|k| PARAM_NAMES[k]).collect();
    if !out.is_empty() {
        return out;
    }
    // correlation matrix; a tiny eigenvalue names the parameters in its eigenvector
    let corr = Mat5::from_fn(|a, b| jtj[(a, b)] / (d[a] * d[b]).sqrt());
    let eig = SymmetricEigen::new(corr);
    for k in 0..5 {
        if eig.eigenvalues[k] < SINGULAR {
            let v = eig.eigenvectors.column(k);
            out.extend((0..5).filter(|&i| v[i].abs() > 0.3).map(|i| PARAM_NAMES[i]));
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

pub fn fit_echo(trace: &EchoTrace, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    trace.validate()?;
    if trace.len() <= 5 {
        return Err(ShfError::TooShort { len: trace.len(), min: 6 });
    }
    let initial = match config.initial {
        Some(p) => p,
        None => initial_guess(trace, config.x_fixed)?,
    };
    let x = config.x_fixed;
    let mut start = initial;
    if start.delta_g == start.delta_e {
        // equal splittings make the two frequency columns identical; split them
        start.delta_g *= 1.005;
        start.delta_e *= 0.995;
    }

    let mut z = to_internal(&start);
    let (mut r, mut j) = evaluate(trace, &z, x);
    let mut cost = 0.5 * r.norm_squared();
    let mut history = vec![cost];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let floor = 1e-30 * trace.intensity.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);

    while iterations < config.max_iterations {
        iterations += 1;
        let (jtj, jtr) = normal_equations(&j, &r);
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for k in 0..5 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let z_new = z + step;
            let (r_new, j_new) = evaluate(trace, &z_new, x);
            let cost_new = 0.5 * r_new.norm_squared();
            if cost_new.is_finite() && cost_new < cost {
                let decrease = (cost - cost_new) / cost;
                let tiny_step = step.norm() <= 1e-14 * (z.norm() + 1e-14);
                z = z_new;
                r = r_new;
                j = j_new;
                cost = cost_new;
                history.push(cost);
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if decrease < config.tolerance || tiny_step || cost <= floor {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !accepted {
            // no downhill step at any damping: stationary up to round-off
            let (_, jtr) = normal_equations(&j, &r);
            converged = jtr.norm() <= 1e-8 * (2.0 * cost).sqrt() * j.norm() || cost <= floor;
            break;
        }
    }
    // a singular normal matrix explains a stalled fit, so report it first
    let est = from_internal(&z);
    // covariance in natural parameters
    let n = trace.len();
    let mut jn = DMatrix::zeros(n, 5);
    for (row, &t) in trace.t12_us.iter().enumerate() {
        let (_, g) = model_and_gradient(t, &est, x);
        for k in 0..5 {
            jn[(row, k)] = g[k];
        }
    }
    let (jtj, _) = normal_equations(&jn, &r);
    let bad = unidentifiable(&jtj);
    if !bad.is_empty() {
        return Err(ShfError::Unidentifiable { params: bad });
    }
    if !converged && iterations >= config.max_iterations {
        return Err(ShfError::NonConvergence { iterations });
    }

    let s2 = r.norm_squared() / (n - 5) as f64;
    let sig: [f64; 5] = match jtj.try_inverse() {
        Some(inv) => std::array::from_fn(|k| (s2 * inv[(k, k)]).max(0.0).sqrt()),
        None => [f64::NAN; 5],
    };
    let mut estimates = est;
    let mut sigmas = FitParams::from_array(sig);
    if estimates.delta_g < estimates.delta_e {
        estimates = estimates.canonical();
        sigmas = FitParams { delta_g: sigmas.delta_e, delta_e: sigmas.delta_g, ..sigmas };
    }
    let usable = converged && sigmas.to_array().iter().all(|s| s.is_finite());
    Ok(FitResult {
        estimates,
        sigmas,
        residual_norm: r.norm(),
        converged,
        usable,
        iterations,
        x_fixed: x,
        n_points: n,
        initial: initial.canonical(),
        cost_history: history,
    })
}
