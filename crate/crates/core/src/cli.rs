//! `shf` command line: each subcommand resolves its inputs, runs one library
//! operation and writes artifacts through [`crate::output`].
//!
//! Exit codes: 0 success, 2 input error (bad flags, files, labels), 3
//! computation error (degenerate geometry, failed fits).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::atlas::{self, linspace, SearchOptions};
use crate::dataset::{self, GTensorDataset};
use crate::echo::{self, Detrend, EchoParams, Modulation, SpectrumOptions, Window};
use crate::error::{invalid, Result, ShfError};
use crate::fitkit::{self, FitConfig};
use crate::lattice::{self, LatticeFile};
use crate::oracle::oracle_solve;
use crate::output::{ArtifactWriter, Provenance, Table};
use crate::spincore::{shf_solve, zeeman_splitting_per_tesla, Branch, FieldDirection, FieldSpec, NuclearSite, Orientation, SiteLabel, SpinCenter};

pub const CONFIG_ENV: &str = "SHF_CONFIG";
/// Map radius when none is given: the pinned ion's quoted distance, Å.
pub const DEFAULT_MAP_RADIUS: f64 = 5.4572;
/// Ions drawn over a map.
const MAP_OVERLAY_SITES: usize = 15;

#[derive(Debug, Parser)]
#[command(name = "shf", version, about = "Superhyperfine branching contrast and echo-modulation toolkit")]
pub struct Cli {
    /// Tool configuration file (TOML). Relative paths inside it resolve against its directory.
    #[arg(long, env = CONFIG_ENV, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Directory for output artifacts (path; default from config, else the current directory).
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for parallel sweeps (count; 0 = all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Splittings (kHz) and branching contrast for one ion at one field; prints JSON.
    Solve(SolveArgs),
    /// Δg, Δe (kHz) and ρ over a range of field strengths.
    Scan(ScanArgs),
    /// ρmax over field strength for every ion direction on an angular grid.
    Map(MapArgs),
    /// Nuclear sublevels ±Δ/2 (kHz) versus field, with the minimum gaps.
    Levels(LevelsArgs),
    /// Synthetic echo trace (µs, arbitrary intensity) and its spectrum (kHz).
    EchoSim(EchoSimArgs),
    /// Fit I0, T2 (µs), Δg, Δe (kHz) and ρ to a trace CSV; prints JSON.
    EchoFit(EchoFitArgs),
    /// Compare closed-form results with the exact 4-level Hamiltonian.
    OracleCheck(OracleArgs),
    /// Ligand sites sorted by distance (Å).
    Neighbors(NeighborsArgs),
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct IonArgs {
    /// Ligand ion: a lattice label with optional `-A`/`-B` erbium orientation suffix (e.g. pinned-A; no unit).
    #[arg(long, value_name = "LABEL")]
    pub ion: String,
    /// Crystallographic erbium site of the g-tensors (1 or 2; no unit).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub site: u8,
}

#[derive(Debug, Args, Serialize, Clone, Default)]
pub struct DirectionArgs {
    /// Field direction as an in-plane angle from D1 towards D2 (degrees).
    #[arg(long, allow_hyphen_values = true, conflicts_with_all = ["theta", "phi"], value_name = "DEG")]
    pub angle: Option<f64>,
    /// Field polar angle from b (degrees); requires --phi.
    #[arg(long, requires = "phi", value_name = "DEG")]
    pub theta: Option<f64>,
    /// Field azimuth from D1 (degrees); requires --theta.
    #[arg(long, allow_hyphen_values = true, requires = "theta", value_name = "DEG")]
    pub phi: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct SolveArgs {
    #[command(flatten)]
    pub ion: IonArgs,
    /// Field strength (mT by default; accepts `40mT`, `0.04T`).
    #[arg(long = "B", value_name = "FIELD")]
    pub b: String,
    #[command(flatten)]
    pub direction: DirectionArgs,
    /// Electron Zeeman branch: minus = lower level (no unit).
    #[arg(long, value_enum, default_value_t = BranchArg::Minus)]
    pub branch: BranchArg,
}

#[derive(Debug, Args, Serialize)]
pub struct ScanArgs {
    #[command(flatten)]
    pub ion: IonArgs,
    /// Field range `lo:hi:n` (lo, hi in mT unless suffixed; n points).
    #[arg(long = "B", value_name = "LO:HI:N")]
    pub b: String,
    #[command(flatten)]
    pub direction: DirectionArgs,
    /// Uncertainty band: random field-direction jitter (degrees; 0 = none).
    #[arg(long, default_value_t = 0.0, value_name = "DEG")]
    pub jitter_deg: f64,
    /// Uncertainty band: relative field-strength jitter (fraction, e.g. 0.02).
    #[arg(long, default_value_t = 0.0, value_name = "FRAC")]
    pub strength_jitter: f64,
    /// Uncertainty band: number of jittered samples (count; 0 disables the band).
    #[arg(long, default_value_t = 0, value_name = "N")]
    pub samples: usize,
    /// Uncertainty band: random seed (integer).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct MapArgs {
    /// Erbium orientation (A or B; no unit).
    #[arg(long, value_enum, default_value_t = OrientationArg::A)]
    pub orientation: OrientationArg,
    /// Erbium crystallographic site of the g-tensors (1 or 2; no unit).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub site: u8,
    /// Angular grid step (degrees; `1deg` or `1`); must divide 180.
    #[arg(long, default_value = "1deg", value_name = "STEP")]
    pub resolution: String,
    /// Ion distance used for every grid direction (Å).
    #[arg(long, default_value_t = DEFAULT_MAP_RADIUS, value_name = "ANGSTROM")]
    pub radius: f64,
    /// Field-strength search range `lo:hi` (mT unless suffixed).
    #[arg(long = "B-range", default_value = "0.1:500", value_name = "LO:HI")]
    pub b_range: String,
    /// Log-spaced coarse samples before refinement (count).
    #[arg(long, default_value_t = atlas::DEFAULT_COARSE_POINTS, value_name = "N")]
    pub coarse_points: usize,
    /// Relative tolerance of the field refinement (ΔB/B; dimensionless).
    #[arg(long, default_value_t = atlas::DEFAULT_REL_TOL, value_name = "TOL")]
    pub rel_tol: f64,
    #[command(flatten)]
    pub direction: DirectionArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct LevelsArgs {
    #[command(flatten)]
    pub ion: IonArgs,
    /// Field range `lo:hi:n` (mT unless suffixed; n points; lo may be 0).
    #[arg(long = "B", default_value = "0:100:401", value_name = "LO:HI:N")]
    pub b: String,
    #[command(flatten)]
    pub direction: DirectionArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EchoSimArgs {
    /// Echo amplitude at zero delay (intensity units).
    #[arg(long, default_value_t = 1.0, value_name = "I0")]
    pub i0: f64,
    /// Coherence time (µs).
    #[arg(long, default_value_t = 200.0, value_name = "US")]
    pub t2: f64,
    /// Mims stretching exponent (dimensionless).
    #[arg(long, default_value_t = echo::DEFAULT_MIMS_EXPONENT, value_name = "X")]
    pub x: f64,
    /// Ground-manifold nuclear splitting (kHz); with --delta-e and --rho, instead of --ion.
    #[arg(long, requires_all = ["delta_e", "rho"], conflicts_with = "ion", value_name = "KHZ")]
    pub delta_g: Option<f64>,
    /// Excited-manifold nuclear splitting (kHz).
    #[arg(long, requires = "delta_g", value_name = "KHZ")]
    pub delta_e: Option<f64>,
    /// Branching contrast (dimensionless, 0..1).
    #[arg(long, requires = "delta_g", value_name = "RHO")]
    pub rho: Option<f64>,
    /// Derive the modulation from ligand ions (label[-A|-B], repeatable; several ions multiply).
    #[arg(long, value_name = "LABEL")]
    pub ion: Vec<String>,
    /// Erbium crystallographic site for --ion (1 or 2; no unit).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub site: u8,
    /// Field strength for --ion (mT unless suffixed).
    #[arg(long = "B", default_value = "40mT", value_name = "FIELD")]
    pub b: String,
    #[command(flatten)]
    pub direction: DirectionArgs,
    /// Last delay of the uniform grid starting at 0 (µs).
    #[arg(long, default_value_t = 300.0, value_name = "US")]
    pub t_max: f64,
    /// Number of delays (count).
    #[arg(long, default_value_t = 500, value_name = "N")]
    pub points: usize,
    /// Gaussian noise standard deviation (fraction of I0).
    #[arg(long, default_value_t = 0.0, value_name = "FRAC")]
    pub noise: f64,
    /// Noise seed (integer).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub spectrum: SpectrumArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SpectrumArgs {
    /// Spectrum detrending (no unit).
    #[arg(long, value_enum, default_value_t = DetrendArg::Envelope)]
    pub detrend: DetrendArg,
    /// Spectrum window (no unit).
    #[arg(long, value_enum, default_value_t = WindowArg::Hann)]
    pub window: WindowArg,
    /// Zero-padding factor for the spectrum (multiple of the trace length).
    #[arg(long, default_value_t = echo::DEFAULT_ZERO_PAD, value_name = "K")]
    pub zero_pad: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EchoFitArgs {
    /// Trace CSV with header `t12_us,intensity` (delays in µs).
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// Fixed Mims exponent (dimensionless).
    #[arg(long, default_value_t = 1.5, value_name = "X")]
    pub x: f64,
    /// Iteration cap (count).
    #[arg(long, default_value_t = fitkit::DEFAULT_MAX_ITERATIONS, value_name = "N")]
    pub max_iter: usize,
    /// Convergence threshold on the relative cost decrease (dimensionless).
    #[arg(long, default_value_t = fitkit::DEFAULT_TOLERANCE, value_name = "TOL")]
    pub tol: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct OracleArgs {
    #[command(flatten)]
    pub ion: IonArgs,
    /// Field strength (mT unless suffixed).
    #[arg(long = "B", default_value = "40mT", value_name = "FIELD")]
    pub b: String,
    #[command(flatten)]
    pub direction: DirectionArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct NeighborsArgs {
    /// Number of nearest sites (count; default all).
    #[arg(long, value_name = "K")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum BranchArg {
    Minus,
    Plus,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum OrientationArg {
    #[value(name = "A", alias = "a")]
    A,
    #[value(name = "B", alias = "b")]
    B,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum DetrendArg {
    Envelope,
    None,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum WindowArg {
    Hann,
    Rectangular,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldConvention {
    #[default]
    InPlane,
    Polar,
}

/// Contents of the `SHF_CONFIG` file. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolConfig {
    pub gtensors: Option<PathBuf>,
    pub lattice: Option<PathBuf>,
    /// Which default direction applies when no direction flag is given.
    pub field_convention: FieldConvention,
    /// Degrees from D₁.
    pub default_angle_deg: f64,
    /// Degrees from b.
    pub default_theta_deg: f64,
    /// Degrees from D₁.
    pub default_phi_deg: f64,
    pub output_dir: PathBuf,
    /// 0 = all cores.
    pub threads: usize,
}

impl Default for ToolConfig {
    fn default() -> Self {
        Self {
            gtensors: None,
            lattice: None,
            field_convention: FieldConvention::InPlane,
            default_angle_deg: 225.0,
            default_theta_deg: 90.0,
            default_phi_deg: 225.0,
            output_dir: PathBuf::from("."),
            threads: 0,
        }
    }
}

impl ToolConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(ShfError::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let mut cfg: ToolConfig = toml::from_str(&text).map_err(|e| ShfError::Parse {
            path: path.display().to_string(),
            line: e.span().map_or(0, |s| crate::error::line_of(&text, s.start)),
            msg: e.message().to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.gtensors.as_mut().map(rebase);
        cfg.lattice.as_mut().map(rebase);
        rebase(&mut cfg.output_dir);
        Ok(cfg)
    }
}

/// Resolved configuration with datasets loaded and validated.
pub struct Context {
    pub config: ToolConfig,
    pub gtensors: GTensorDataset,
    pub lattice: LatticeFile,
    pub provenance: Vec<Provenance>,
    pub out_dir: PathBuf,
    pub threads: usize,
}

impl Context {
    pub fn new(cli: &Cli) -> Result<Self> {
        let config = match &cli.config {
            Some(p) => ToolConfig::load(p)?,
            None => ToolConfig::default(),
        };
        let (gtensors, g_prov) = match &config.gtensors {
            Some(p) => (dataset::load_gtensors(p)?, Provenance::new("gtensors", &p.display().to_string(), &std::fs::read_to_string(p)?)),
            None => (GTensorDataset::bundled(), Provenance::new("gtensors", &format!("bundled:{}", dataset::BUNDLED_NAME), dataset::BUNDLED)),
        };
        let (lattice, l_prov) = match &config.lattice {
            Some(p) => (lattice::load_lattice(p)?, Provenance::new("lattice", &p.display().to_string(), &std::fs::read_to_string(p)?)),
            None => (LatticeFile::bundled(), Provenance::new("lattice", &format!("bundled:{}", lattice::BUNDLED_NAME), lattice::BUNDLED)),
        };
        let out_dir = cli.out_dir.clone().unwrap_or_else(|| config.output_dir.clone());
        let threads = cli.threads.unwrap_or(config.threads);
        Ok(Self { config, gtensors, lattice, provenance: vec![g_prov, l_prov], out_dir, threads })
    }

    fn direction(&self, d: &DirectionArgs) -> Result<FieldDirection> {
        let dir = match (d.angle, d.theta, d.phi) {
            (Some(a), None, None) => FieldDirection::in_plane(a),
            (None, Some(t), Some(p)) => FieldDirection::polar(t, p),
            (None, None, None) => match self.config.field_convention {
                FieldConvention::InPlane => FieldDirection::in_plane(self.config.default_angle_deg),
                FieldConvention::Polar => FieldDirection::polar(self.config.default_theta_deg, self.config.default_phi_deg),
            },
            _ => return Err(invalid("give either --angle or both --theta and --phi")),
        };
        dir.unit()?;
        Ok(dir)
    }

    fn center(&self, site: u8, orientation: Orientation) -> Result<SpinCenter> {
        let label = if site == 1 { SiteLabel::Site1 } else { SiteLabel::Site2 };
        self.gtensors.center(label, orientation)
    }

    /// `label`, `label-A` or `label-B`.
    pub fn ion(&self, spec: &str, site: u8) -> Result<Ion> {
        let parsed = [("-A", Orientation::A), ("-B", Orientation::B)]
            .iter()
            .find_map(|(suffix, o)| spec.strip_suffix(suffix).filter(|l| self.lattice.get(l).is_some()).map(|l| (l, *o)));
        let (label, orientation) = match parsed {
            Some(p) => p,
            None if self.lattice.get(spec).is_some() => (spec, Orientation::A),
            None => {
                let known = self.lattice.labels().iter().flat_map(|l| [format!("{l}-A"), format!("{l}-B")]).collect();
                return Err(ShfError::UnknownIon { label: spec.into(), known });
            }
        };
        let entry = self.lattice.get(label).expect("label checked above");
        Ok(Ion {
            label: label.into(),
            orientation,
            center: self.center(site, orientation)?,
            site: entry.nuclear_site(orientation)?,
        })
    }

    fn writer(&self, command: &str, config: &Value) -> Result<ArtifactWriter> {
        ArtifactWriter::new(&self.out_dir, command, chrono::Utc::now(), config)
    }

    /// Everything that determines the payload; the artifact hash is taken over this.
    fn run_config(&self, command: &Command) -> Value {
        json!({
            "command": command,
            "field_convention": self.config.field_convention,
            "default_direction": {
                "angle_deg": self.config.default_angle_deg,
                "theta_deg": self.config.default_theta_deg,
                "phi_deg": self.config.default_phi_deg,
            },
            "datasets": self.provenance.iter().map(|p| &p.sha256).collect::<Vec<_>>(),
        })
    }
}

pub struct Ion {
    pub label: String,
    pub orientation: Orientation,
    pub center: SpinCenter,
    pub site: NuclearSite,
}

impl Ion {
    fn describe(&self) -> Value {
        json!({
            "label": self.label,
            "orientation": self.orientation,
            "position_angstrom": [self.site.position.x, self.site.position.y, self.site.position.z],
            "distance_angstrom": self.site.distance(),
            "gamma_mhz_per_t": self.site.gamma,
        })
    }
}

fn bad_value(what: &str, s: &str) -> ShfError {
    invalid(format!("cannot parse {what} `{s}`"))
}

/// Field strength in mT from `40`, `40mT`, `0.04T` or `400G`.
pub fn parse_field_mt(s: &str) -> Result<f64> {
    let t = s.trim();
    let (num, scale) = if let Some(n) = t.strip_suffix("mT") {
        (n, 1.0)
    } else if let Some(n) = t.strip_suffix('T') {
        (n, 1e3)
    } else if let Some(n) = t.strip_suffix('G') {
        (n, 0.1)
    } else {
        (t, 1.0)
    };
    let v: f64 = num.trim().parse().map_err(|_| bad_value("field", s))?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(invalid(format!("field must be finite and >= 0, got `{s}`")));
    }
    Ok(v * scale)
}

/// `lo:hi:n` with field units on lo and hi.
pub fn parse_field_range(s: &str) -> Result<(f64, f64, usize)> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts[..] else {
        return Err(invalid(format!("field range must be lo:hi:n, got `{s}`")));
    };
    let n: usize = n.trim().parse().map_err(|_| bad_value("point count", n))?;
    Ok((parse_field_mt(lo)?, parse_field_mt(hi)?, n))
}

/// `lo:hi` with field units.
pub fn parse_field_bounds(s: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi] = parts[..] else {
        return Err(invalid(format!("field bounds must be lo:hi, got `{s}`")));
    };
    Ok((parse_field_mt(lo)?, parse_field_mt(hi)?))
}

/// Angle step in degrees from `1deg`, `1°`, `1` or `0.5rad`.
pub fn parse_angle_deg(s: &str) -> Result<f64> {
    let t = s.trim();
    let (num, scale) = if let Some(n) = t.strip_suffix("deg").or_else(|| t.strip_suffix('°')) {
        (n, 1.0)
    } else if let Some(n) = t.strip_suffix("rad") {
        (n, 180.0 / std::f64::consts::PI)
    } else {
        (t, 1.0)
    };
    let v: f64 = num.trim().parse().map_err(|_| bad_value("angle", s))?;
    Ok(v * scale)
}

/// stdout write that tolerates a closed pipe (`shf ... | head`).
fn emit(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn print_json(v: &Value) -> Result<()> {
    emit(&serde_json::to_string_pretty(v)?);
    Ok(())
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
}

fn cmd_solve(ctx: &Context, a: &SolveArgs) -> Result<()> {
    let ion = ctx.ion(&a.ion.ion, a.ion.site)?;
    let field = FieldSpec::new(parse_field_mt(&a.b)?, ctx.direction(&a.direction)?)?;
    let branch = match a.branch {
        BranchArg::Minus => Branch::Minus,
        BranchArg::Plus => Branch::Plus,
    };
    let r = shf_solve(&ion.center, &ion.site, &field, branch)?;
    let u = field.direction.unit()?;
    print_json(&json!({
        "ion": ion.describe(),
        "field": field,
        "branch": format!("{branch:?}").to_lowercase(),
        "zeeman_ghz_per_t": {
            "ground": zeeman_splitting_per_tesla(&ion.center.g_ground, &u)?,
            "excited": zeeman_splitting_per_tesla(&ion.center.g_excited, &u)?,
        },
        "result": r,
    }))
}

fn cmd_scan(ctx: &Context, cmd: &Command, a: &ScanArgs) -> Result<Vec<PathBuf>> {
    let ion = ctx.ion(&a.ion.ion, a.ion.site)?;
    let (lo, hi, n) = parse_field_range(&a.b)?;
    let direction = ctx.direction(&a.direction)?;
    let req = atlas::ScanRequest { center: ion.center.clone(), site: ion.site, direction, b_range_mt: (lo, hi), n_points: n };
    let band = if a.samples > 0 { Some(atlas::sensitivity_band(&req, a.jitter_deg, a.strength_jitter, a.samples, a.seed)?) } else { None };
    let scan = match &band {
        Some(b) => b.nominal.clone(),
        None => atlas::field_scan(&ion.center, &ion.site, direction, (lo, hi), n)?,
    };

    let mut headers = vec!["B_mT", "delta_g_kHz", "delta_e_kHz", "alpha_rad", "rho"];
    if band.is_some() {
        headers.extend(["delta_g_min_kHz", "delta_g_max_kHz", "delta_e_min_kHz", "delta_e_max_kHz", "rho_min", "rho_max"]);
    }
    let mut table = Table::new(headers);
    for i in 0..scan.b_mt.len() {
        let mut row = vec![scan.b_mt[i], scan.delta_g[i], scan.delta_e[i], scan.alpha[i], scan.rho[i]];
        if let Some(b) = &band {
            row.extend([b.delta_g.min[i], b.delta_g.max[i], b.delta_e.min[i], b.delta_e.max[i], b.rho.min[i], b.rho.max[i]]);
        }
        table.push_numbers(&row);
    }
    let config = ctx.run_config(cmd);
    let mut w = ctx.writer("scan", &config)?;
    w.csv("", &table)?;
    let params = json!({ "ion": ion.describe(), "direction": direction, "b_range_mt": [lo, hi], "n_points": n,
        "band": band.as_ref().map(|b| json!({"orientation_jitter_deg": b.orientation_jitter_deg, "strength_jitter": b.strength_jitter, "n_samples": b.n_samples, "seed": b.seed})) });
    w.finish(config, ctx.provenance.clone(), params, vec![])
}

fn cmd_map(ctx: &Context, cmd: &Command, a: &MapArgs) -> Result<Vec<PathBuf>> {
    let orientation = match a.orientation {
        OrientationArg::A => Orientation::A,
        OrientationArg::B => Orientation::B,
    };
    let center = ctx.center(a.site, orientation)?;
    let step = parse_angle_deg(&a.resolution)?;
    let (theta, phi) = atlas::angular_grid(step)?;
    let search = SearchOptions { b_range_mt: parse_field_bounds(&a.b_range)?, coarse_points: a.coarse_points, rel_tol: a.rel_tol };
    let direction = ctx.direction(&a.direction)?;
    let map = atlas::rho_map(&center, direction, &theta, &phi, a.radius, &search, ctx.threads)?;

    let mut table = Table::new(["theta_deg", "phi_deg", "rho_max", "B_opt_mT"]);
    for (i, t) in map.theta_deg.iter().enumerate() {
        for (j, p) in map.phi_deg.iter().enumerate() {
            table.push_numbers(&[*t, *p, map.rho_max[i][j], map.b_opt[i][j]]);
        }
    }
    // ligand positions to draw over the map, in this orientation's frame
    let k = ctx.lattice.len().min(MAP_OVERLAY_SITES);
    let mut sites = Table::new(["label", "theta_deg", "phi_deg", "distance_angstrom"]);
    for s in ctx.lattice.neighbors(k)? {
        let p = s.nuclear_site(orientation)?.position;
        let r = p.norm();
        let theta = (p.z / r).clamp(-1.0, 1.0).acos().to_degrees();
        let phi = p.y.atan2(p.x).to_degrees().rem_euclid(360.0);
        sites.push(vec![s.label.clone(), theta.to_string(), phi.to_string(), r.to_string()]);
    }
    let config = ctx.run_config(cmd);
    let mut w = ctx.writer("map", &config)?;
    w.csv("", &table)?;
    w.csv("-sites", &sites)?;
    let params = json!({ "orientation": orientation, "site": a.site, "step_deg": step, "n_theta": theta.len(), "n_phi": phi.len(),
        "radius_angstrom": a.radius, "search": search, "direction": direction, "threads": ctx.threads });
    w.finish(config, ctx.provenance.clone(), params, vec![])
}

fn cmd_levels(ctx: &Context, cmd: &Command, a: &LevelsArgs) -> Result<Vec<PathBuf>> {
    let ion = ctx.ion(&a.ion.ion, a.ion.site)?;
    let (lo, hi, n) = parse_field_range(&a.b)?;
    let direction = ctx.direction(&a.direction)?;
    let d = atlas::level_diagram(&ion.center, &ion.site, direction, (lo, hi), n)?;
    let mut table = Table::new(["B_mT", "ground_lower_kHz", "ground_upper_kHz", "excited_lower_kHz", "excited_upper_kHz"]);
    for i in 0..d.b_mt.len() {
        table.push_numbers(&[d.b_mt[i], d.ground_lower[i], d.ground_upper[i], d.excited_lower[i], d.excited_upper[i]]);
    }
    let config = ctx.run_config(cmd);
    let mut w = ctx.writer("levels", &config)?;
    w.csv("", &table)?;
    w.json("-gaps", &json!({ "min_gap_ground": d.min_gap_ground, "min_gap_excited": d.min_gap_excited }))?;
    let params = json!({ "ion": ion.describe(), "direction": direction, "b_range_mt": [lo, hi], "n_points": n });
    w.finish(config, ctx.provenance.clone(), params, vec![])
}

fn spectrum_options(s: &SpectrumArgs, x: f64) -> SpectrumOptions {
    SpectrumOptions {
        detrend: match s.detrend {
            DetrendArg::Envelope => Detrend::EnvelopeNormalize,
            DetrendArg::None => Detrend::None,
        },
        window: match s.window {
            WindowArg::Hann => Window::Hann,
            WindowArg::Rectangular => Window::Rectangular,
        },
        zero_pad: s.zero_pad,
        x,
    }
}

fn cmd_echo_sim(ctx: &Context, cmd: &Command, a: &EchoSimArgs) -> Result<Vec<PathBuf>> {
    let mut sources = Vec::new();
    let modulations = match (a.delta_g, a.delta_e, a.rho) {
        (Some(dg), Some(de), Some(rho)) => vec![Modulation::new(dg, de, rho)?],
        _ if !a.ion.is_empty() => {
            let field = FieldSpec::new(parse_field_mt(&a.b)?, ctx.direction(&a.direction)?)?;
            let mut m = Vec::new();
            for label in &a.ion {
                let ion = ctx.ion(label, a.site)?;
                let r = shf_solve(&ion.center, &ion.site, &field, Branch::Minus)?;
                m.push(Modulation::new(r.delta_g, r.delta_e, r.rho)?);
                sources.push(json!({ "ion": ion.describe(), "field": field, "result": r }));
            }
            m
        }
        _ => return Err(invalid("give --delta-g/--delta-e/--rho or at least one --ion")),
    };
    if !(a.t_max > 0.0) || a.points < 2 {
        return Err(invalid("need --t-max > 0 and --points >= 2"));
    }
    let params = EchoParams::new(a.i0, a.t2, a.x, modulations)?;
    let trace = echo::simulate_trace(&linspace(0.0, a.t_max, a.points), &params, a.noise * a.i0, a.seed)?;
    let opts = spectrum_options(&a.spectrum, a.x);
    let spec = echo::spectrum(&trace, &opts)?;

    let mut t = Table::new(["t12_us", "intensity"]);
    for (x, y) in trace.t12_us.iter().zip(&trace.intensity) {
        t.push_numbers(&[*x, *y]);
    }
    let mut s = Table::new(["freq_kHz", "magnitude"]);
    for (f, m) in spec.freq_khz.iter().zip(&spec.magnitude) {
        s.push_numbers(&[*f, *m]);
    }
    let config = ctx.run_config(cmd);
    let mut w = ctx.writer("echo-sim", &config)?;
    w.csv("", &t)?;
    w.csv("-spectrum", &s)?;
    w.json("-peaks", &json!({ "bin_khz": spec.bin_khz, "peaks": spec.dominant_peaks(4), "envelope": spec.envelope }))?;
    let mut notes = Vec::new();
    if params.is_multi_spin() {
        notes.push("multi-spin: modulation factors of several ions multiplied before squaring (product-rule extension of the single-spin model)".to_string());
    }
    let meta = json!({ "params": params, "multi_spin": params.is_multi_spin(), "sources": sources, "t_max_us": a.t_max,
        "points": a.points, "noise_sigma": a.noise * a.i0, "seed": a.seed, "spectrum": opts });
    w.finish(config, ctx.provenance.clone(), meta, notes)
}

fn cmd_echo_fit(ctx: &Context, cmd: &Command, a: &EchoFitArgs) -> Result<Vec<PathBuf>> {
    let trace = echo::read_trace_csv(&a.input)?;
    let cfg = FitConfig { x_fixed: a.x, max_iterations: a.max_iter, tolerance: a.tol, initial: None };
    let fit = fitkit::fit_echo(&trace, &cfg)?;
    let gamma = fitkit::linewidth(fit.estimates.t2)?;
    // Γ ∝ 1/T2, so the relative errors match
    let gamma_sigma = gamma * fit.sigmas.t2 / fit.estimates.t2;
    let model = fit.estimates.echo_params(a.x)?;
    let mut table = Table::new(["t12_us", "intensity", "model", "residual"]);
    for (t, y) in trace.t12_us.iter().zip(&trace.intensity) {
        let m = echo::echo_intensity(*t, &model);
        table.push_numbers(&[*t, *y, m, y - m]);
    }
    let summary = json!({ "fit": fit, "linewidth_khz": gamma, "linewidth_sigma_khz": gamma_sigma });
    print_json(&summary)?;
    let mut config = ctx.run_config(cmd);
    config["input_sha256"] = json!(crate::output::sha256_hex(&std::fs::read(&a.input)?));
    let mut w = ctx.writer("echo-fit", &config)?;
    w.json("", &summary)?;
    w.csv("-residuals", &table)?;
    let mut prov = ctx.provenance.clone();
    prov.push(Provenance { name: "trace".into(), source: a.input.display().to_string(), sha256: config["input_sha256"].as_str().unwrap_or_default().into() });
    let notes = if fit.usable { vec![] } else { vec!["fit flagged unusable".to_string()] };
    w.finish(config, prov, json!({ "fit_config": cfg }), notes)
}

fn cmd_oracle(ctx: &Context, cmd: &Command, a: &OracleArgs) -> Result<Vec<PathBuf>> {
    let ion = ctx.ion(&a.ion.ion, a.ion.site)?;
    let field = FieldSpec::new(parse_field_mt(&a.b)?, ctx.direction(&a.direction)?)?;
    let p = shf_solve(&ion.center, &ion.site, &field, Branch::Minus)?;
    let o = oracle_solve(&ion.center, &ion.site, &field)?;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let summary = json!({
        "ion": ion.describe(),
        "field": field,
        "perturbative": p,
        "oracle": o,
        "column_sums": o.column_sums(),
        "rel_diff_delta_g": rel(p.delta_g, o.delta_g),
        "rel_diff_delta_e": rel(p.delta_e, o.delta_e),
        "abs_diff_rho": (p.rho - o.rho_oracle).abs(),
    });
    print_json(&summary)?;
    let config = ctx.run_config(cmd);
    let mut w = ctx.writer("oracle-check", &config)?;
    w.json("", &summary)?;
    w.finish(config, ctx.provenance.clone(), json!({ "field": field }), vec![])
}

fn cmd_neighbors(ctx: &Context, cmd: &Command, a: &NeighborsArgs) -> Result<Vec<PathBuf>> {
    let k = a.k.unwrap_or(ctx.lattice.len());
    let mut table = Table::new(["label", "x_angstrom", "y_angstrom", "z_angstrom", "distance_angstrom", "gamma_MHz_per_T"]);
    for s in ctx.lattice.neighbors(k)? {
        let p = s.position;
        table.push(vec![s.label.clone(), p.x.to_string(), p.y.to_string(), p.z.to_string(), s.distance().to_string(), s.gamma.to_string()]);
    }
    let config = ctx.run_config(cmd);
    let mut w = ctx.writer("neighbors", &config)?;
    w.csv("", &table)?;
    w.finish(config, ctx.provenance.clone(), json!({ "k": k }), vec![])
}

pub fn execute(cli: &Cli) -> Result<()> {
    let ctx = Context::new(cli)?;
    let cmd = &cli.command;
    let written = match cmd {
        Command::Solve(a) => return cmd_solve(&ctx, a),
        Command::Scan(a) => cmd_scan(&ctx, cmd, a)?,
        Command::Map(a) => cmd_map(&ctx, cmd, a)?,
        Command::Levels(a) => cmd_levels(&ctx, cmd, a)?,
        Command::EchoSim(a) => cmd_echo_sim(&ctx, cmd, a)?,
        Command::EchoFit(a) => cmd_echo_fit(&ctx, cmd, a)?,
        Command::OracleCheck(a) => cmd_oracle(&ctx, cmd, a)?,
        Command::Neighbors(a) => cmd_neighbors(&ctx, cmd, a)?,
    };
    report(&written);
    Ok(())
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                2
            } else {
                3
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn field_strings() {
        assert_eq!(parse_field_mt("40mT").unwrap(), 40.0);
        assert_eq!(parse_field_mt("0.04T").unwrap(), 40.0);
        assert_eq!(parse_field_mt("400G").unwrap(), 40.0);
        assert_eq!(parse_field_mt("67").unwrap(), 67.0);
        assert_eq!(parse_field_mt("0").unwrap(), 0.0);
        assert!(parse_field_mt("-1mT").is_err());
        assert!(parse_field_mt("fast").is_err());
        assert_eq!(parse_field_range("5:100:200").unwrap(), (5.0, 100.0, 200));
        assert_eq!(parse_field_range("5mT:0.1T:3").unwrap(), (5.0, 100.0, 3));
        assert!(parse_field_range("5:100").is_err());
        assert_eq!(parse_field_bounds("0.1:500").unwrap(), (0.1, 500.0));
    }

    #[test]
    fn angle_strings() {
        assert_eq!(parse_angle_deg("1deg").unwrap(), 1.0);
        assert_eq!(parse_angle_deg("5").unwrap(), 5.0);
        assert!((parse_angle_deg("0.5rad").unwrap() - 28.6479).abs() < 1e-4);
    }

    #[test]
    fn every_flag_states_a_unit() {
        // each help ends with a parenthetical naming the unit, or "no unit"
        let root = Cli::command();
        for sub in root.get_subcommands().chain([&root]) {
            for arg in sub.get_arguments() {
                if matches!(arg.get_id().as_str(), "help" | "version") {
                    continue;
                }
                let help = arg.get_help().map(|h| h.to_string()).unwrap_or_default();
                assert!(help.contains('(') && help.contains(')'), "{} --{}: `{help}`", sub.get_name(), arg.get_id());
            }
        }
    }

    #[test]
    fn ion_labels() {
        let cli = Cli::try_parse_from(["shf", "neighbors"]).unwrap();
        let ctx = Context::new(&cli).unwrap();
        assert_eq!(ctx.ion("pinned-A", 1).unwrap().orientation, Orientation::A);
        let b = ctx.ion("pinned-B", 1).unwrap();
        assert_eq!(b.orientation, Orientation::B);
        assert!((b.site.position.x - 1.01).abs() < 1e-12);
        assert_eq!(ctx.ion("pinned-c2", 1).unwrap().orientation, Orientation::A);
        match ctx.ion("nowhere", 1) {
            Err(ShfError::UnknownIon { known, .. }) => assert!(known.contains(&"pinned-A".to_string())),
            _ => panic!("expected unknown ion"),
        }
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "threads = 2\nbogus = 1\n").unwrap();
        assert!(matches!(ToolConfig::load(&p), Err(ShfError::Parse { line: 2, .. })));
        std::fs::write(&p, "threads = 2\noutput_dir = \"out\"\n").unwrap();
        let c = ToolConfig::load(&p).unwrap();
        assert_eq!(c.threads, 2);
        assert_eq!(c.output_dir, dir.path().join("out"));
    }
}
