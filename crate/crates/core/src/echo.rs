//! Two-pulse photon echo with superhyperfine modulation: forward model,
//! synthetic traces and Fourier analysis.
//!
//! ```text
//! I(t) = I0 · exp[−2(2t/T2)^x] · { Π_k (1 − ρ_k/2 [1 − cos 2πΔg_k t][1 − cos 2πΔe_k t]) }²
//! ```
//!
//! t in µs, Δ in kHz.

use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, ShfError};
use crate::units::cycles;

pub const MIN_SPECTRUM_SAMPLES: usize = 8;
pub const DEFAULT_MIMS_EXPONENT: f64 = 1.5;
pub const DEFAULT_ZERO_PAD: usize = 4;
/// Relative tolerance on sample spacing.
const UNIFORM_TOL: f64 = 1e-6;

/// Coupling of one nuclear spin as seen by the echo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    /// kHz
    pub delta_g: f64,
    /// kHz
    pub delta_e: f64,
    pub rho: f64,
}

impl Modulation {
    pub fn new(delta_g: f64, delta_e: f64, rho: f64) -> Result<Self> {
        let m = Self { delta_g, delta_e, rho };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta_g.is_finite() && self.delta_e.is_finite() && self.delta_g >= 0.0 && self.delta_e >= 0.0) {
            return Err(invalid("modulation frequencies must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(invalid(format!("rho must be in [0, 1], got {}", self.rho)));
        }
        Ok(())
    }

    /// Single-spin factor inside the braces, in [1 − 2ρ, 1].
    pub fn factor(&self, t_us: f64) -> f64 {
        let ug = 1.0 - (2.0 * PI * cycles(self.delta_g, t_us)).cos();
        let ue = 1.0 - (2.0 * PI * cycles(self.delta_e, t_us)).cos();
        1.0 - 0.5 * self.rho * ug * ue
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoParams {
    pub i0: f64,
    /// µs
    pub t2: f64,
    /// Mims exponent.
    pub x: f64,
    pub modulations: Vec<Modulation>,
}

impl EchoParams {
    pub fn new(i0: f64, t2: f64, x: f64, modulations: Vec<Modulation>) -> Result<Self> {
        let p = Self { i0, t2, x, modulations };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("I0", self.i0), ("T2", self.t2), ("x", self.x)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        self.modulations.iter().try_for_each(Modulation::validate)
    }

    /// More than one nuclear spin: the product rule is an extension of the
    /// single-spin expression and is flagged in outputs.
    pub fn is_multi_spin(&self) -> bool {
        self.modulations.len() > 1
    }

    pub fn envelope(&self, t_us: f64) -> f64 {
        self.i0 * (-2.0 * (2.0 * t_us / self.t2).powf(self.x)).exp()
    }

    /// Product of the single-spin factors, before squaring.
    pub fn modulation(&self, t_us: f64) -> f64 {
        self.modulations.iter().map(|m| m.factor(t_us)).product()
    }
}

pub fn echo_intensity(t12_us: f64, params: &EchoParams) -> f64 {
    let m = params.modulation(t12_us);
    params.envelope(t12_us) * m * m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoTrace {
    /// µs, ascending.
    pub t12_us: Vec<f64>,
    pub intensity: Vec<f64>,
    pub noise_sigma: Option<f64>,
}

impl EchoTrace {
    pub fn new(t12_us: Vec<f64>, intensity: Vec<f64>) -> Result<Self> {
        let t = Self { t12_us, intensity, noise_sigma: None };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t12_us.len() != self.intensity.len() {
            return Err(invalid(format!("{} delays but {} intensities", self.t12_us.len(), self.intensity.len())));
        }
        if self.t12_us.iter().chain(&self.intensity).any(|v| !v.is_finite()) {
            return Err(invalid("trace contains non-finite values"));
        }
        if let Some(i) = self.t12_us.windows(2).position(|w| w[1] <= w[0]) {
            return Err(invalid(format!("delays must be strictly ascending (index {})", i + 1)));
        }
        if self.t12_us.first().is_some_and(|&t| t < 0.0) {
            return Err(invalid("delays must be >= 0"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.t12_us.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t12_us.is_empty()
    }

    /// Sample spacing, µs; errors on non-uniform grids.
    pub fn uniform_step(&self) -> Result<f64> {
        if self.len() < 2 {
            return Err(ShfError::TooShort { len: self.len(), min: 2 });
        }
        let dt = self.t12_us[1] - self.t12_us[0];
        for (i, w) in self.t12_us.windows(2).enumerate() {
            if ((w[1] - w[0]) - dt).abs() > UNIFORM_TOL * dt {
                return Err(ShfError::NonUniformSampling { index: i + 1 });
            }
        }
        Ok(dt)
    }
}

/// Forward model plus additive Gaussian noise, clipped at zero.
pub fn simulate_trace(t12_us: &[f64], params: &EchoParams, noise_sigma: f64, seed: u64) -> Result<EchoTrace> {
    params.validate()?;
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(invalid(format!("noise sigma must be finite and >= 0, got {noise_sigma}")));
    }
    let normal = Normal::new(0.0, noise_sigma).map_err(|_| invalid(format!("noise sigma must be finite and >= 0, got {noise_sigma}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intensity = t12_us
        .iter()
        .map(|&t| {
            let clean = echo_intensity(t, params);
            if noise_sigma == 0.0 {
                clean
            } else {
                (clean + normal.sample(&mut rng)).max(0.0)
            }
        })
        .collect();
    let mut trace = EchoTrace::new(t12_us.to_vec(), intensity)?;
    trace.noise_sigma = Some(noise_sigma);
    Ok(trace)
}

/// Stretched-exponential envelope `I0·exp[−2(2t/T2)^x]` fitted to the upper
/// envelope (local maxima) of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub i0: f64,
    /// µs; infinite when the maxima do not decay.
    pub t2: f64,
    pub x: f64,
}

impl EnvelopeFit {
    pub fn eval(&self, t_us: f64) -> f64 {
        if self.t2.is_infinite() {
            return self.i0;
        }
        self.i0 * (-2.0 * (2.0 * t_us / self.t2).powf(self.x)).exp()
    }
}

/// Indices of local maxima (plus the first sample) with positive intensity.
pub fn upper_envelope_points(trace: &EchoTrace) -> Vec<usize> {
    let y = &trace.intensity;
    let n = y.len();
    (0..n)
        .filter(|&i| y[i] > 0.0 && (i == 0 || y[i] >= y[i - 1]) && (i + 1 == n || y[i] >= y[i + 1]))
        .collect()
}

/// Least-squares line `ln y = c + s·u`; `None` when `u` has no spread.
fn log_line(trace: &EchoTrace, pts: &[usize], x: f64) -> Option<(f64, f64)> {
    let u: Vec<f64> = pts.iter().map(|&i| (2.0 * trace.t12_us[i]).powf(x)).collect();
    let v: Vec<f64> = pts.iter().map(|&i| trace.intensity[i].ln()).collect();
    let n = u.len() as f64;
    let (mu, mv) = (u.iter().sum::<f64>() / n, v.iter().sum::<f64>() / n);
    let suu: f64 = u.iter().map(|a| (a - mu) * (a - mu)).sum();
    let suv: f64 = u.iter().zip(&v).map(|(a, b)| (a - mu) * (b - mv)).sum();
    (suu > 0.0).then(|| {
        let s = suv / suu;
        (mv - s * mu, s)
    })
}

/// Maxima further than this below the current fit (in ln y) are modulation
/// dips, not envelope points.
const ENVELOPE_DROP: f64 = 0.05;
const NOISE_FLOOR_SIGMAS: f64 = 5.0;

/// Robust white-noise estimate from the MAD of second differences.
pub fn noise_sigma(y: &[f64]) -> f64 {
    if y.len() < 3 {
        return 0.0;
    }
    let mut d: Vec<f64> = y.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]).abs()).collect();
    d.sort_by(f64::total_cmp);
    // second difference of white noise has variance 6σ²
    1.4826 * d[d.len() / 2] / 6f64.sqrt()
}

/// Fit of the upper envelope. Starts from all local maxima and repeatedly
/// discards those that sit clearly below the current curve.
pub fn fit_envelope(trace: &EchoTrace, x: f64) -> Result<EnvelopeFit> {
    let mut pts = upper_envelope_points(trace);
    if pts.len() < 3 {
        // monotone trace: every positive sample is on the envelope
        pts = (0..trace.len()).filter(|&i| trace.intensity[i] > 0.0).collect();
    }
    // maxima of the noise floor would flatten the tail
    let floor = NOISE_FLOOR_SIGMAS * noise_sigma(&trace.intensity);
    let above: Vec<usize> = pts.iter().copied().filter(|&i| trace.intensity[i] > floor).collect();
    if above.len() >= 3 {
        pts = above;
    }
    if pts.is_empty() {
        return Err(ShfError::NoSignal);
    }
    let Some(mut line) = log_line(trace, &pts, x) else {
        return Ok(EnvelopeFit { i0: trace.intensity[pts[0]], t2: f64::INFINITY, x });
    };
    for _ in 0..10 {
        let kept: Vec<usize> = pts
            .iter()
            .copied()
            .filter(|&i| trace.intensity[i].ln() >= line.0 + line.1 * (2.0 * trace.t12_us[i]).powf(x) - ENVELOPE_DROP)
            .collect();
        if kept.len() == pts.len() || kept.len() < 3 {
            break;
        }
        match log_line(trace, &kept, x) {
            Some(l) => line = l,
            None => break,
        }
        pts = kept;
    }
    let (c, s) = line;
    let t2 = if s < 0.0 { (-2.0 / s).powf(1.0 / x) } else { f64::INFINITY };
    Ok(EnvelopeFit { i0: c.exp(), t2, x })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detrend {
    None,
    /// Divide out a fitted stretched exponential, then remove the mean.
    EnvelopeNormalize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Rectangular,
    Hann,
}

impl Window {
    fn weights(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n).map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / (n - 1) as f64).cos())).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumOptions {
    pub detrend: Detrend,
    pub window: Window,
    pub zero_pad: usize,
    /// Mims exponent used for envelope normalization.
    pub x: f64,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self { detrend: Detrend::EnvelopeNormalize, window: Window::Hann, zero_pad: DEFAULT_ZERO_PAD, x: DEFAULT_MIMS_EXPONENT }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoSpectrum {
    /// kHz, from 0 to Nyquist.
    pub freq_khz: Vec<f64>,
    pub magnitude: Vec<f64>,
    /// Bin spacing, kHz.
    pub bin_khz: f64,
    pub options: SpectrumOptions,
    pub envelope: Option<EnvelopeFit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub bin: usize,
    /// kHz
    pub freq_khz: f64,
    pub magnitude: f64,
}

impl EchoSpectrum {
    /// Non-DC local maxima, largest first.
    pub fn peaks(&self) -> Vec<Peak> {
        let m = &self.magnitude;
        // the DC bin is stored one-sided-unscaled; compare bin 1 against 2·DC
        let left = |k: usize| if k == 1 { 2.0 * m[0] } else { m[k - 1] };
        let mut out: Vec<Peak> = (1..m.len())
            .filter(|&k| m[k] > left(k) && (k + 1 == m.len() || m[k] >= m[k + 1]))
            .map(|k| Peak { bin: k, freq_khz: self.freq_khz[k], magnitude: m[k] })
            .collect();
        out.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude).then(a.bin.cmp(&b.bin)));
        out
    }

    pub fn dominant_peaks(&self, n: usize) -> Vec<Peak> {
        let mut p = self.peaks();
        p.truncate(n);
        p
    }
}

pub fn spectrum(trace: &EchoTrace, opts: &SpectrumOptions) -> Result<EchoSpectrum> {
    trace.validate()?;
    if trace.len() < MIN_SPECTRUM_SAMPLES {
        return Err(ShfError::TooShort { len: trace.len(), min: MIN_SPECTRUM_SAMPLES });
    }
    if opts.zero_pad == 0 {
        return Err(invalid("zero-pad factor must be >= 1"));
    }
    let dt = trace.uniform_step()?;
    let n = trace.len();

    let (mut y, envelope) = match opts.detrend {
        Detrend::None => (trace.intensity.clone(), None),
        Detrend::EnvelopeNormalize => {
            let env = fit_envelope(trace, opts.x)?;
            let y: Vec<f64> = trace.t12_us.iter().zip(&trace.intensity).map(|(&t, &v)| v / env.eval(t)).collect();
            (y, Some(env))
        }
    };
    if opts.detrend == Detrend::EnvelopeNormalize {
        let mean = y.iter().sum::<f64>() / n as f64;
        y.iter_mut().for_each(|v| *v -= mean);
    }

    let w = opts.window.weights(n);
    let norm: f64 = w.iter().sum();
    let padded = n * opts.zero_pad;
    let mut buf: Vec<Complex<f64>> = y.iter().zip(&w).map(|(v, wi)| Complex::new(v * wi, 0.0)).collect();
    buf.resize(padded, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(padded).process(&mut buf);

    // µs → kHz
    let bin_khz = 1e3 / (padded as f64 * dt);
    let half = padded / 2;
    let freq_khz = (0..=half).map(|k| k as f64 * bin_khz).collect();
    let magnitude = (0..=half).map(|k| buf[k].norm() * if k == 0 { 1.0 } else { 2.0 } / norm).collect();
    Ok(EchoSpectrum { freq_khz, magnitude, bin_khz, options: *opts, envelope })
}

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &EchoTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t12_us", "intensity"])?;
    for (t, v) in trace.t12_us.iter().zip(&trace.intensity) {
        w.write_record([t.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<EchoTrace> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(ShfError::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["t12_us", "intensity"] {
        return Err(ShfError::Parse { path: path.display().to_string(), line: 1, msg: "expected header `t12_us,intensity`".into() });
    }
    let (mut t, mut v) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let parse = |k: usize| -> Result<f64> {
            rec.get(k).and_then(|s| s.trim().parse::<f64>().ok()).ok_or_else(|| ShfError::Parse {
                path: path.display().to_string(),
                line,
                msg: format!("column {} is not a number", k + 1),
            })
        };
        t.push(parse(0)?);
        v.push(parse(1)?);
    }
    EchoTrace::new(t, v)
}

pub fn write_spectrum_csv(path: impl AsRef<Path>, s: &EchoSpectrum) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["freq_kHz", "magnitude"])?;
    for (f, m) in s.freq_khz.iter().zip(&s.magnitude) {
        w.write_record([f.to_string(), m.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::linspace;
    use proptest::prelude::*;

    fn params(dg: f64, de: f64, rho: f64) -> EchoParams {
        EchoParams::new(1.0, 200.0, 1.5, vec![Modulation::new(dg, de, rho).unwrap()]).unwrap()
    }

    fn grid() -> Vec<f64> {
        linspace(0.0, 300.0, 500)
    }

    #[test]
    fn zero_delay_gives_i0() {
        let p = EchoParams::new(2.5, 80.0, 1.3, vec![Modulation::new(49.0, 33.0, 0.7).unwrap()]).unwrap();
        assert_eq!(echo_intensity(0.0, &p), 2.5);
    }

    #[test]
    fn unmodulated_x1_is_pure_exponential() {
        let p = EchoParams::new(1.0, 50.0, 1.0, vec![Modulation::new(49.0, 33.0, 0.0).unwrap()]).unwrap();
        for t in [1.0, 10.0, 37.5] {
            let exact = (-4.0 * t / 50.0f64).exp();
            assert!((echo_intensity(t, &p) - exact).abs() < 1e-15);
        }
    }

    #[test]
    fn full_revival_when_both_cosines_are_minus_one() {
        // Δg = Δe = 50 kHz, t = 10 µs → half a period
        let m = Modulation::new(50.0, 50.0, 1.0).unwrap();
        assert!((m.factor(10.0) + 1.0).abs() < 1e-12);
        let p = EchoParams::new(1.0, 100.0, 1.5, vec![m]).unwrap();
        assert!((echo_intensity(10.0, &p) - p.envelope(10.0)).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(Modulation::new(1.0, 1.0, 1.5).is_err());
        assert!(EchoParams::new(0.0, 1.0, 1.0, vec![]).is_err());
        assert!(EchoTrace::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(EchoTrace::new(vec![1.0, 0.5], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn noiseless_simulation_is_the_forward_model() {
        let p = params(49.0, 33.0, 0.8);
        let tr = simulate_trace(&grid(), &p, 0.0, 1).unwrap();
        for (t, v) in tr.t12_us.iter().zip(&tr.intensity) {
            assert_eq!(*v, echo_intensity(*t, &p));
        }
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let p = params(49.0, 33.0, 0.8);
        let a = simulate_trace(&grid(), &p, 0.01, 42).unwrap();
        let b = simulate_trace(&grid(), &p, 0.01, 42).unwrap();
        let c = simulate_trace(&grid(), &p, 0.01, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.intensity.iter().all(|&v| v >= 0.0));
        assert!(simulate_trace(&grid(), &p, -1.0, 1).is_err());
    }

    #[test]
    fn tone_on_unit_envelope() {
        let t = linspace(0.0, 511.0 * 0.5, 512);
        let y: Vec<f64> = t.iter().map(|&t| 1.0 + 0.3 * (2.0 * PI * cycles(41.0, t)).cos()).collect();
        let tr = EchoTrace::new(t, y).unwrap();
        let s = spectrum(&tr, &SpectrumOptions::default()).unwrap();
        let p = s.dominant_peaks(1)[0];
        assert!((p.freq_khz - 41.0).abs() <= s.bin_khz, "{p:?}");
        assert!((s.bin_khz - 1e3 / (2048.0 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn forty_millitesla_shows_two_peaks() {
        let tr = simulate_trace(&grid(), &params(49.0, 33.0, 0.8), 0.0, 0).unwrap();
        let s = spectrum(&tr, &SpectrumOptions::default()).unwrap();
        let mut f: Vec<f64> = s.dominant_peaks(2).iter().map(|p| p.freq_khz).collect();
        f.sort_by(f64::total_cmp);
        assert!((f[0] - 33.0).abs() <= s.bin_khz, "{f:?}");
        assert!((f[1] - 49.0).abs() <= s.bin_khz, "{f:?}");
    }

    #[test]
    fn sixty_seven_millitesla_shows_one_main_peak() {
        let tr = simulate_trace(&grid(), &params(41.0, 41.0, 0.8), 0.0, 0).unwrap();
        let s = spectrum(&tr, &SpectrumOptions::default()).unwrap();
        let p = s.dominant_peaks(2);
        assert!((p[0].freq_khz - 41.0).abs() <= s.bin_khz);
        assert!(p[1].magnitude < 0.5 * p[0].magnitude);
    }

    #[test]
    fn combination_lines_appear() {
        // no envelope, long window: lines at Δg, Δe, Δg ± Δe
        let t = linspace(0.0, 2047.0 * 0.25, 2048);
        let p = EchoParams::new(1.0, 1e9, 1.5, vec![Modulation::new(49.0, 33.0, 0.4).unwrap()]).unwrap();
        let tr = simulate_trace(&t, &p, 0.0, 0).unwrap();
        let s = spectrum(&tr, &SpectrumOptions { detrend: Detrend::None, ..Default::default() }).unwrap();
        let found = |f: f64| s.peaks().iter().any(|pk| (pk.freq_khz - f).abs() <= s.bin_khz && pk.magnitude > 0.01);
        for f in [49.0, 33.0, 16.0, 82.0] {
            assert!(found(f), "missing line at {f}");
        }
        // line strengths of the squared factor: ρ(1 − 3ρ/4) vs ρ(1 − ρ)/2
        let mag = |f: f64| s.peaks().iter().find(|pk| (pk.freq_khz - f).abs() <= s.bin_khz).unwrap().magnitude;
        assert!((mag(49.0) / mag(16.0) - (0.4 * 0.7) / (0.4 * 0.6 / 2.0)).abs() < 0.1);
    }

    #[test]
    fn spectrum_input_errors() {
        let short = EchoTrace::new((0..7).map(f64::from).collect(), vec![1.0; 7]).unwrap();
        assert!(matches!(spectrum(&short, &SpectrumOptions::default()), Err(ShfError::TooShort { .. })));
        let mut t: Vec<f64> = (0..10).map(f64::from).collect();
        t[6] = 6.3;
        let tr = EchoTrace::new(t, vec![1.0; 10]).unwrap();
        assert!(matches!(spectrum(&tr, &SpectrumOptions::default()), Err(ShfError::NonUniformSampling { index: 6 })));
    }

    #[test]
    fn envelope_fit_recovers_unmodulated_decay() {
        let p = EchoParams::new(1.7, 150.0, 1.5, vec![]).unwrap();
        let tr = simulate_trace(&grid(), &p, 0.0, 0).unwrap();
        let env = fit_envelope(&tr, 1.5).unwrap();
        assert!((env.i0 - 1.7).abs() < 1e-9 && (env.t2 - 150.0).abs() < 1e-6, "{env:?}");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let tr = simulate_trace(&grid(), &params(49.0, 33.0, 0.8), 0.01, 5).unwrap();
        write_trace_csv(&path, &tr).unwrap();
        let back = read_trace_csv(&path).unwrap();
        assert_eq!(back.t12_us, tr.t12_us);
        assert_eq!(back.intensity, tr.intensity);
        std::fs::write(&path, "time,value\n0,1\n").unwrap();
        assert!(matches!(read_trace_csv(&path), Err(ShfError::Parse { .. })));
    }

    fn modulation() -> impl Strategy<Value = Modulation> {
        (0.0..300.0f64, 0.0..300.0f64, 0.0..=1.0f64).prop_map(|(g, e, r)| Modulation::new(g, e, r).unwrap())
    }

    proptest! {
        #[test]
        fn multi_spin_factorizes(a in modulation(), b in modulation(), t in 0.0..400.0f64) {
            let both = EchoParams::new(1.0, 200.0, 1.5, vec![a, b]).unwrap();
            let one = EchoParams::new(1.0, 200.0, 1.5, vec![a]).unwrap();
            let fb = b.factor(t);
            prop_assert!((echo_intensity(t, &both) - echo_intensity(t, &one) * fb * fb).abs() <= 1e-12);
            prop_assert!(both.is_multi_spin() && !one.is_multi_spin());
        }

        #[test]
        fn factor_and_intensity_bounds(m in modulation(), t in 0.0..400.0f64) {
            let f = m.factor(t);
            prop_assert!(f >= 1.0 - 2.0 * m.rho - 1e-12 && f <= 1.0 + 1e-12);
            let p = EchoParams::new(1.3, 120.0, 1.5, vec![m]).unwrap();
            let i = echo_intensity(t, &p);
            prop_assert!(i >= 0.0 && i <= p.envelope(t) * (1.0 + 1e-12));
        }

        #[test]
        fn unmodulated_envelope_is_strictly_decreasing(t in 0.01..300.0f64, dt in 0.01..10.0f64) {
            let p = EchoParams::new(1.0, 200.0, 1.5, vec![Modulation::new(49.0, 33.0, 0.0).unwrap()]).unwrap();
            prop_assert!(echo_intensity(t + dt, &p) < echo_intensity(t, &p));
        }

        #[test]
        fn commensurate_frequencies_are_periodic(p in 1u32..8, q in 1u32..8, base in 2.0..20.0f64, rho in 0.0..=1.0f64, t in 0.0..100.0f64) {
            // Δg = p·base, Δe = q·base (kHz) → least common period 1/(gcd(p, q)·base) ms
            let gcd = (1..=p.min(q)).rev().find(|d| p % d == 0 && q % d == 0).unwrap();
            let m = Modulation::new(p as f64 * base, q as f64 * base, rho).unwrap();
            let period = 1e3 / (gcd as f64 * base);
            prop_assert!((m.factor(t + period) - m.factor(t)).abs() <= 1e-9);
        }
    }
}
