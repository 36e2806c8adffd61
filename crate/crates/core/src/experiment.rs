//! Experiment configuration and the run driver behind the CLI.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{uniform_times, SystemSetup};
use crate::ensembles::{
    sample, Band, EnsembleKind, EnsembleSpec, FixedSpectrum, NamedSpectrum, NormalizationMode,
    Symmetry,
};
use crate::error::{Error, Result};
use crate::export::{self, GradientRow};
use crate::linalg::MAX_DIM;
use crate::rng::SeededRng;
use crate::typicality::gradient::{gradient_report, GRADIENT_DIM_CAP};
use crate::typicality::poincare::{poincare_mc_test, TestFunction};
use crate::typicality::stationary::{
    default_window, stationary_p0_theory, stationary_window_stats, window_past_transient,
};
use crate::typicality::statistics::{
    ensemble_trajectories, interaction_strength, scaling_study, typicality_fraction,
    EnsembleStatistics,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Relative slack of the gradient chain check.
pub const GRADIENT_CHAIN_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Speckle,
    Concentration,
    Scaling,
    GradientCheck,
    PoincareCheck,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Speckle => "speckle",
            Mode::Concentration => "concentration",
            Mode::Scaling => "scaling",
            Mode::GradientCheck => "gradient-check",
            Mode::PoincareCheck => "poincare-check",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown mode `{s}`")))
    }
}

/// An ensemble without its dimension, which comes from the system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub kind: EnsembleKind,
    #[serde(default)]
    pub symmetry: Symmetry,
    /// Required except for RRM with explicit values.
    #[serde(default)]
    pub sigma_w: Option<f64>,
    #[serde(default)]
    pub band: Option<Band>,
    #[serde(default)]
    pub fixed_spectrum: Option<FixedSpectrum>,
    #[serde(default)]
    pub normalization: NormalizationMode,
}

impl EnsembleConfig {
    pub fn spec(&self, dim: usize) -> Result<EnsembleSpec> {
        let fixed_spectrum = match (self.kind, &self.fixed_spectrum) {
            (EnsembleKind::Rrm, None) => Some(FixedSpectrum::Named(NamedSpectrum::Semicircle)),
            (_, f) => f.clone(),
        };
        let sigma_w = match (&fixed_spectrum, self.sigma_w) {
            (_, Some(s)) => s,
            (Some(FixedSpectrum::Values(v)), None) if self.kind == EnsembleKind::Rrm => {
                EnsembleSpec::rrm(v.clone()).sigma_w
            }
            _ => return Err(Error::Config("ensemble.sigma_w is required".into())),
        };
        let spec = EnsembleSpec {
            kind: self.kind,
            symmetry: self.symmetry,
            dim,
            sigma_w,
            band: self.band,
            fixed_spectrum,
            normalization: self.normalization,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t_max: f64,
    #[serde(default = "default_n_points")]
    pub n_points: usize,
}

fn default_n_points() -> usize {
    400
}

impl TimeGrid {
    pub fn times(&self) -> Vec<f64> {
        uniform_times(self.t_max, self.n_points)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub dims_e: Vec<usize>,
    pub fixed_time: f64,
    /// Also evaluate the stationary speckle amplitude on the `times` grid.
    #[serde(default = "yes")]
    pub window: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientConfig {
    #[serde(default = "default_gradient_dims")]
    pub dims_e: Vec<usize>,
    #[serde(default = "default_instances")]
    pub n_instances: usize,
    /// `tau` is drawn uniformly from `(0, tau_max]`.
    #[serde(default = "default_tau_max")]
    pub tau_max: f64,
    /// Finite-difference step relative to `sigma_w`.
    #[serde(default = "default_step")]
    pub step: f64,
}

fn default_gradient_dims() -> Vec<usize> {
    vec![2, 4, 8]
}

fn default_instances() -> usize {
    100
}

fn default_tau_max() -> f64 {
    2.0
}

fn default_step() -> f64 {
    1e-5
}

impl Default for GradientConfig {
    fn default() -> Self {
        Self {
            dims_e: default_gradient_dims(),
            n_instances: default_instances(),
            tau_max: default_tau_max(),
            step: default_step(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoincareConfig {
    /// Test-function ids: `linear`, `quadratic`, `constant`, `population:<level>:<time>`.
    pub functions: Vec<String>,
    /// Environment sizes to test at; defaults to `system.dim_e`.
    #[serde(default)]
    pub dims_e: Option<Vec<usize>>,
    #[serde(default = "default_poincare_n")]
    pub n: usize,
}

fn default_poincare_n() -> usize {
    2000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub mode: Option<Mode>,
    pub system: SystemSetup,
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub times: Option<TimeGrid>,
    #[serde(default = "one")]
    pub n_realizations: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub window: Option<Window>,
    #[serde(default)]
    pub scaling: Option<ScalingConfig>,
    #[serde(default)]
    pub gradient: Option<GradientConfig>,
    #[serde(default)]
    pub poincare: Option<PoincareConfig>,
}

fn one() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub mode: Mode,
    /// Largest composite dimension the run touches.
    pub dim: usize,
    /// Dense storage of one `dim x dim` complex matrix.
    pub matrix_bytes: u64,
    pub warnings: Vec<String>,
}

pub fn dense_matrix_bytes(dim: usize) -> u64 {
    (dim as u64).saturating_mul(dim as u64).saturating_mul(16)
}

fn format_bytes(b: u64) -> String {
    const GIB: f64 = (1u64 << 30) as f64;
    if b as f64 >= GIB {
        format!("{:.1} GiB", b as f64 / GIB)
    } else {
        format!("{:.1} MiB", b as f64 / (1u64 << 20) as f64)
    }
}

impl ExperimentConfig {
    /// Parses JSON, reporting the offending field path and position on failure.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Config(format!(
                "at `{path}` (line {}, column {}): {inner}",
                inner.line(),
                inner.column()
            ))
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn resolve_mode(&self, requested: Option<Mode>) -> Result<Mode> {
        match (requested, self.mode) {
            (Some(r), Some(c)) if r != c => {
                log::warn!("running mode {r} on a config written for {c}");
                Ok(r)
            }
            (Some(r), _) => Ok(r),
            (None, Some(c)) => Ok(c),
            (None, None) => Err(Error::Config("no mode given in the config or on the command line".into())),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    fn dims_e(&self, mode: Mode) -> Vec<usize> {
        match mode {
            Mode::Scaling => self.scaling.as_ref().map(|s| s.dims_e.clone()).unwrap_or_default(),
            Mode::GradientCheck => self.gradient.clone().unwrap_or_default().dims_e,
            Mode::PoincareCheck => self
                .poincare
                .as_ref()
                .and_then(|p| p.dims_e.clone())
                .unwrap_or_else(|| vec![self.system.dim_e]),
            _ => vec![self.system.dim_e],
        }
    }

    /// Schema and physics checks. Errors are fatal, warnings are returned.
    pub fn validate(&self, mode: Mode) -> Result<ValidationReport> {
        let mut warnings = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let sys = &self.system;
        let dim_s = sys.system_spectrum().len();
        if dim_s == 0 || sys.system_spectrum().iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("system spectrum must be non-empty and finite".into()));
        }
        if !(sys.sigma_e.is_finite() && sys.sigma_e > 0.0) {
            return Err(Error::Config(format!("system.sigma_e must be positive, got {}", sys.sigma_e)));
        }
        if !sys.epsilon_e.is_finite() {
            return Err(Error::Config("system.epsilon_e must be finite".into()));
        }
        if sys.initial_system_level >= dim_s {
            return Err(Error::Config(format!(
                "system.initial_system_level {} out of range for {dim_s} levels",
                sys.initial_system_level
            )));
        }

        let dims_e = self.dims_e(mode);
        if dims_e.is_empty() || dims_e.contains(&0) {
            return Err(Error::Config("environment sizes must be at least 1".into()));
        }
        let dim = dims_e.iter().max().unwrap().saturating_mul(dim_s);
        let matrix_bytes = dense_matrix_bytes(dim);
        if dim > MAX_DIM {
            return Err(Error::Config(format!(
                "composite dimension {dim} exceeds the limit {MAX_DIM}: dense storage needs \
                 dim^2 * 16 bytes = {} per matrix",
                format_bytes(matrix_bytes)
            )));
        }
        for &d in &dims_e {
            self.ensemble.spec(d * dim_s)?;
        }
        let spec = self.ensemble.spec(dim)?;
        let sigma = interaction_strength(&spec)?;

        let spectrum_s = sys.system_spectrum();
        let span_s = spectrum_s.iter().cloned().fold(f64::MIN, f64::max)
            - spectrum_s.iter().cloned().fold(f64::MAX, f64::min);
        // The environment grid spans roughly +-3 sigma_e.
        let span = span_s + 6.0 * sys.sigma_e;
        if sigma > 0.1 * span {
            warnings.push(format!(
                "sigma_w = {sigma} is not small compared with the spectral span {span:.3} of H_0"
            ));
        }

        let needs_times = matches!(mode, Mode::Speckle | Mode::Concentration)
            || (mode == Mode::Scaling && self.scaling.as_ref().is_some_and(|s| s.window));
        if needs_times {
            let grid = self
                .times
                .ok_or_else(|| Error::Config(format!("mode {mode} needs a `times` grid")))?;
            if !(grid.t_max.is_finite() && grid.t_max > 0.0) {
                return Err(Error::Config(format!("times.t_max must be positive, got {}", grid.t_max)));
            }
            if grid.n_points < 2 {
                return Err(Error::Config("times.n_points must be at least 2".into()));
            }
            if let Some(w) = self.window {
                if !(w.start <= w.end && w.start >= 0.0 && w.end <= grid.t_max) {
                    return Err(Error::Config(format!(
                        "window [{}, {}] must lie inside [0, {}]",
                        w.start, w.end, grid.t_max
                    )));
                }
            } else if !window_past_transient(sigma, grid.t_max) {
                warnings.push(format!(
                    "sigma_w * t_max = {:.2} < 20: the default window [t_max/2, t_max] may still \
                     contain the relaxation transient",
                    sigma * grid.t_max
                ));
            }
        }

        if self.n_realizations == 0 {
            return Err(Error::Config("n_realizations must be at least 1".into()));
        }
        match mode {
            Mode::Concentration | Mode::Scaling if self.n_realizations < 2 => {
                return Err(Error::Config(format!(
                    "mode {mode} estimates a variance and needs n_realizations >= 2, got {}",
                    self.n_realizations
                )));
            }
            Mode::Scaling => {
                let s = self.scaling.as_ref().ok_or_else(|| {
                    Error::Config("mode scaling needs a `scaling` section".into())
                })?;
                if s.dims_e.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Config("scaling.dims_e must be strictly ascending".into()));
                }
                if !(s.fixed_time.is_finite() && s.fixed_time >= 0.0) {
                    return Err(Error::Config("scaling.fixed_time must be non-negative".into()));
                }
            }
            Mode::GradientCheck => {
                let g = self.gradient.clone().unwrap_or_default();
                if dim > GRADIENT_DIM_CAP {
                    return Err(Error::Config(format!(
                        "gradient check enumerates every direction and needs dim <= \
                         {GRADIENT_DIM_CAP}, got {dim}"
                    )));
                }
                if !(g.tau_max.is_finite() && g.tau_max > 0.0) || !(g.step > 0.0) || g.n_instances == 0 {
                    return Err(Error::Config(
                        "gradient needs tau_max > 0, step > 0 and n_instances >= 1".into(),
                    ));
                }
            }
            Mode::PoincareCheck => {
                let p = self.poincare.as_ref().ok_or_else(|| {
                    Error::Config("mode poincare-check needs a `poincare` section".into())
                })?;
                if p.n < 2 {
                    return Err(Error::Config("poincare.n must be at least 2".into()));
                }
                for f in &p.functions {
                    f.parse::<TestFunction>()?;
                }
                if spec.normalization == NormalizationMode::Exact {
                    warnings.push(
                        "Poincaré tests always sample in expectation-normalization mode".into(),
                    );
                }
            }
            _ => {}
        }
        Ok(ValidationReport {
            mode,
            dim,
            matrix_bytes,
            warnings,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl InvariantCheck {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub output_dir: PathBuf,
    pub artifacts: Vec<String>,
    pub invariants: Vec<InvariantCheck>,
    pub results: serde_json::Value,
}

impl RunSummary {
    pub fn all_passed(&self) -> bool {
        self.invariants.iter().all(|c| c.passed)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    mode: Mode,
    config_sha256: String,
    config: &'a ExperimentConfig,
    crate_name: &'static str,
    crate_version: &'static str,
    artifacts: &'a [String],
    workers: usize,
    started_unix: u64,
    wall_time_s: f64,
}

/// Validates `config` and runs `mode`, writing artifacts and `manifest.json`
/// into `config.output_dir`.
pub fn run(config: &ExperimentConfig, mode: Mode) -> Result<RunSummary> {
    for w in config.validate(mode)?.warnings {
        log::warn!("{w}");
    }
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    std::fs::create_dir_all(&config.output_dir)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let workers = pool.current_num_threads();
    let mut summary = pool.install(|| match mode {
        Mode::Speckle => run_speckle(config),
        Mode::Concentration => run_concentration(config),
        Mode::Scaling => run_scaling(config),
        Mode::GradientCheck => run_gradient(config),
        Mode::PoincareCheck => run_poincare(config),
    })?;

    let summary_path = config.output_dir.join("summary.json");
    export::write_json(
        &summary_path,
        &serde_json::json!({
            "mode": mode,
            "invariants": summary.invariants,
            "results": summary.results,
        }),
    )?;
    summary.artifacts.push("summary.json".into());

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        mode,
        config_sha256: config.hash(),
        config,
        crate_name: env!("CARGO_PKG_NAME"),
        crate_version: env!("CARGO_PKG_VERSION"),
        artifacts: &summary.artifacts,
        workers,
        started_unix,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    export::write_json(&config.output_dir.join("manifest.json"), &manifest)?;
    summary.artifacts.push("manifest.json".into());
    Ok(summary)
}

fn physicality_detail(p: &crate::dynamics::PhysicalityReport) -> String {
    format!(
        "max trace error {:.1e}, max hermiticity error {:.1e}, min eigenvalue {:.1e}, max norm error {:.1e}",
        p.max_trace_error, p.max_hermiticity_error, p.min_eigenvalue, p.max_norm_error
    )
}

fn base(config: &ExperimentConfig, dim_e: usize) -> Result<(SystemSetup, EnsembleSpec)> {
    let setup = config.system.clone().with_dim_e(dim_e);
    let dim = setup.system_spectrum().len() * dim_e;
    Ok((setup, config.ensemble.spec(dim)?))
}

fn window_of(config: &ExperimentConfig) -> (f64, f64) {
    config
        .window
        .map(|w| (w.start, w.end))
        .unwrap_or_else(|| default_window(config.times.unwrap().t_max))
}

fn run_speckle(config: &ExperimentConfig) -> Result<RunSummary> {
    let (setup, spec) = base(config, config.system.dim_e)?;
    let (sys, psi0) = setup.build()?;
    let times = config.times.unwrap().times();
    let trajs = ensemble_trajectories(&sys, &spec, &psi0, &times, config.n_realizations, config.master_seed)?;
    let window = window_of(config);
    let mut artifacts = Vec::new();
    let mut per_realization = Vec::new();
    for (stream, traj) in trajs.iter().enumerate() {
        let name = format!("trajectory_{stream:04}.csv");
        export::write_trajectory_csv(&config.output_dir.join(&name), traj, config.master_seed, stream as u64)?;
        artifacts.push(name);
        let stats = stationary_window_stats(traj, window)?;
        per_realization.push(serde_json::json!({
            "stream": stream,
            "window_mean_p0": stats[0].mean,
            "window_std_p0": stats[0].std,
        }));
    }
    let e_env = setup.initial_environment_energy()?;
    let spectrum_s = setup.system_spectrum();
    let theory = (spectrum_s.len() == 2)
        .then(|| stationary_p0_theory(e_env, spectrum_s[1] - spectrum_s[0], setup.sigma_e));
    let physicality = trajs
        .iter()
        .fold(crate::dynamics::PhysicalityReport::default(), |a, t| a.merge(&t.physicality));
    let mut invariants = vec![InvariantCheck::new(
        "physicality",
        physicality.is_physical(crate::dynamics::PHYSICALITY_TOL),
        physicality_detail(&physicality),
    )];
    if let Some(p0) = theory {
        let means: Vec<f64> = per_realization
            .iter()
            .map(|r| r["window_mean_p0"].as_f64().unwrap())
            .collect();
        let worst = means.iter().map(|m| (m - p0).abs()).fold(0.0, f64::max);
        invariants.push(InvariantCheck::new(
            "stationary_mean_p0",
            worst <= 0.05,
            format!("theory {p0:.4}, largest deviation {worst:.4}"),
        ));
    }
    Ok(RunSummary {
        mode: Mode::Speckle,
        output_dir: config.output_dir.clone(),
        artifacts,
        invariants,
        results: serde_json::json!({
            "window": window,
            "initial_environment_energy": e_env,
            "p0_theory": theory,
            "realizations": per_realization,
        }),
    })
}

fn run_concentration(config: &ExperimentConfig) -> Result<RunSummary> {
    let (setup, spec) = base(config, config.system.dim_e)?;
    let (sys, psi0) = setup.build()?;
    let times = config.times.unwrap().times();
    let trajs = ensemble_trajectories(&sys, &spec, &psi0, &times, config.n_realizations, config.master_seed)?;
    let stats = EnsembleStatistics::from_trajectories(
        &trajs,
        interaction_strength(&spec)?,
        sys.dim_e(),
        Some(window_of(config)),
    )?;
    export::write_statistics_csv(&config.output_dir.join("statistics.csv"), &stats)?;
    let fraction = typicality_fraction(&trajs, &stats);
    let worst_ratio = stats
        .sigma_rho_sq
        .iter()
        .zip(&stats.variance_bound)
        .filter(|(_, b)| **b > 0.0)
        .map(|(s, b)| s / b)
        .fold(0.0, f64::max);
    let invariants = vec![
        InvariantCheck::new(
            "variance_bound",
            stats.bound_violations() == 0,
            format!("{} violations, largest sigma_rho_sq / bound = {worst_ratio:.4}", stats.bound_violations()),
        ),
        InvariantCheck::new(
            "typicality_fraction",
            fraction >= 0.99,
            format!("{:.4} of (realization, time) pairs within 3 sigma_rho of the mean", fraction),
        ),
        InvariantCheck::new(
            "physicality",
            stats.physicality.is_physical(crate::dynamics::PHYSICALITY_TOL),
            physicality_detail(&stats.physicality),
        ),
    ];
    Ok(RunSummary {
        mode: Mode::Concentration,
        output_dir: config.output_dir.clone(),
        artifacts: vec!["statistics.csv".into()],
        invariants,
        results: serde_json::json!({
            "n_realizations": stats.n_realizations,
            "dim_e": stats.dim_e,
            "sigma_w": stats.sigma_w,
            "window": stats.window,
            "speckle_std": stats.speckle_std,
            "largest_ratio_to_bound": worst_ratio,
            "typicality_fraction": fraction,
        }),
    })
}

fn run_scaling(config: &ExperimentConfig) -> Result<RunSummary> {
    let sc = config.scaling.as_ref().unwrap();
    let (setup, spec) = base(config, sc.dims_e[0])?;
    let grid = sc.window.then(|| {
        let t = config.times.unwrap();
        (t.t_max, t.n_points)
    });
    let table = scaling_study(&setup, &spec, &sc.dims_e, sc.fixed_time, grid, config.n_realizations, config.master_seed)?;
    export::write_scaling_csv(&config.output_dir.join("scaling.csv"), &table)?;
    let violations = table.rows.iter().filter(|r| r.sigma_rho_sq > r.variance_bound).count();
    let mut invariants = vec![InvariantCheck::new(
        "variance_bound",
        violations == 0,
        format!("{violations} of {} rows above the bound", table.rows.len()),
    )];
    if table.rows.len() > 1 {
        invariants.push(InvariantCheck::new(
            "monotone_decrease",
            table.monotone_decreasing,
            "sigma_rho_sq decreases with dim_e within two standard errors".into(),
        ));
    }
    for c in &table.ratio_checks {
        invariants.push(InvariantCheck::new(
            &format!("ratio_{}_{}", c.dim_e_small, c.dim_e_large),
            c.within_band,
            format!("ratio {:.3}, expected 4 within a factor 2", c.ratio),
        ));
    }
    Ok(RunSummary {
        mode: Mode::Scaling,
        output_dir: config.output_dir.clone(),
        artifacts: vec!["scaling.csv".into()],
        invariants,
        results: serde_json::to_value(&table)?,
    })
}

fn run_gradient(config: &ExperimentConfig) -> Result<RunSummary> {
    let g = config.gradient.clone().unwrap_or_default();
    let mut rows = Vec::new();
    for &dim_e in &g.dims_e {
        let (setup, spec) = base(config, dim_e)?;
        let (sys, psi0) = setup.build()?;
        let step = g.step * interaction_strength(&spec)?.max(f64::MIN_POSITIVE);
        let reports: Vec<GradientRow> = (0..g.n_instances as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = SeededRng::new(config.master_seed, i);
                let w = sample(&spec, &mut rng)?;
                let tau = g.tau_max * (1.0 - rng.random::<f64>());
                let report = gradient_report(&sys, &w, &psi0, tau, step)?;
                Ok(GradientRow {
                    dim_e,
                    instance: i,
                    chain_holds: report.chain_holds(GRADIENT_CHAIN_TOL),
                    report,
                })
            })
            .collect::<Result<_>>()?;
        rows.extend(reports);
    }
    export::write_gradient_csv(&config.output_dir.join("gradient.csv"), &rows)?;
    let violations = rows.iter().filter(|r| !r.chain_holds).count();
    let worst = rows
        .iter()
        .map(|r| r.report.numeric_gradient_norm_sq / r.report.exact_commutator_norm_sq.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok(RunSummary {
        mode: Mode::GradientCheck,
        output_dir: config.output_dir.clone(),
        artifacts: vec!["gradient.csv".into()],
        invariants: vec![InvariantCheck::new(
            "gradient_chain",
            violations == 0,
            format!("{violations} of {} instances violate numeric <= exact <= bound; largest numeric / exact = {worst:.6}", rows.len()),
        )],
        results: serde_json::json!({ "instances": rows.len(), "largest_numeric_over_exact": worst }),
    })
}

fn run_poincare(config: &ExperimentConfig) -> Result<RunSummary> {
    let p = config.poincare.as_ref().unwrap();
    let functions: Vec<TestFunction> = p.functions.iter().map(|f| f.parse()).collect::<Result<_>>()?;
    let mut reports = Vec::new();
    let mut invariants = Vec::new();
    for dim_e in config.dims_e(Mode::PoincareCheck) {
        let (setup, spec) = base(config, dim_e)?;
        for f in &functions {
            let r = poincare_mc_test(&spec, f, Some(&setup), p.n, config.master_seed)?;
            invariants.push(InvariantCheck::new(
                &format!("poincare_{}_{}", r.function, spec.dim),
                r.holds(3.0),
                format!("margin {:.4} +- {:.4} (constant {:.4})", r.margin, r.margin_se, r.constant),
            ));
            if *f == TestFunction::Linear && spec.kind != EnsembleKind::Rrm && spec.band.is_none() {
                invariants.push(InvariantCheck::new(
                    &format!("poincare_equality_{}", spec.dim),
                    r.saturates(3.0),
                    format!("|margin - 1| = {:.4}, 3 SE = {:.4}", (r.margin - 1.0).abs(), 3.0 * r.margin_se),
                ));
            }
            reports.push((spec.dim, r));
        }
    }
    export::write_poincare_csv(&config.output_dir.join("poincare.csv"), &reports)?;
    Ok(RunSummary {
        mode: Mode::PoincareCheck,
        output_dir: config.output_dir.clone(),
        artifacts: vec!["poincare.csv".into()],
        invariants,
        results: serde_json::to_value(reports.iter().map(|(_, r)| r).collect::<Vec<_>>())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(mode: &str) -> ExperimentConfig {
        ExperimentConfig::from_json_str(&format!(
            r#"{{
                "schema_version": 1,
                "mode": "{mode}",
                "system": {{ "dim_e": 4 }},
                "ensemble": {{ "kind": "wigner", "sigma_w": 0.2 }},
                "times": {{ "t_max": 5.0, "n_points": 11 }},
                "n_realizations": 3,
                "master_seed": 9
            }}"#
        ))
        .unwrap()
    }

    #[test]
    fn parses_defaults() {
        let c = config("speckle");
        assert_eq!(c.mode, Some(Mode::Speckle));
        assert_eq!(c.system.gap, 1.0);
        assert_eq!(c.system.epsilon_e, -1.27);
        assert_eq!(c.ensemble.normalization, NormalizationMode::Exact);
        let t: TimeGrid = serde_json::from_str(r#"{"t_max": 1}"#).unwrap();
        assert_eq!(t.n_points, 400);
    }

    #[test]
    fn field_errors_name_the_path() {
        let err = ExperimentConfig::from_json_str(
            r#"{"schema_version": 1, "system": {"dim_e": 4}, "ensemble": {"kind": "gue"}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("ensemble.kind"), "{err}");
        let err = ExperimentConfig::from_json_str(
            r#"{"schema_version": 1, "system": {"dim_e": 4}, "ensemble": {"kind": "wigner"}, "bogus": 1}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn negative_sigma_rejected() {
        let mut c = config("speckle");
        c.ensemble.sigma_w = Some(-0.2);
        assert!(c.validate(Mode::Speckle).unwrap_err().is_config_error());
    }

    #[test]
    fn huge_environment_rejected_with_estimate() {
        let mut c = config("speckle");
        c.system.dim_e = 1_000_000;
        let msg = c.validate(Mode::Speckle).unwrap_err().to_string();
        assert!(msg.contains("GiB"), "{msg}");
    }

    #[test]
    fn concentration_needs_two() {
        let mut c = config("concentration");
        c.n_realizations = 1;
        assert!(matches!(c.validate(Mode::Concentration), Err(Error::Config(_))));
    }

    #[test]
    fn short_window_warns() {
        let report = config("speckle").validate(Mode::Speckle).unwrap();
        assert!(report.warnings.iter().any(|w| w.contains("transient")));
    }

    #[test]
    fn mode_resolution() {
        let c = config("speckle");
        assert_eq!(c.resolve_mode(None).unwrap(), Mode::Speckle);
        assert_eq!(c.resolve_mode(Some(Mode::Concentration)).unwrap(), Mode::Concentration);
        assert_eq!("gradient-check".parse::<Mode>().unwrap(), Mode::GradientCheck);
        assert!("nope".parse::<Mode>().is_err());
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(config("speckle").hash(), config("speckle").hash());
        assert_ne!(config("speckle").hash(), config("scaling").hash());
        assert_eq!(config("speckle").hash().len(), 64);
    }

    #[test]
    fn speckle_run_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config("speckle");
        c.output_dir = dir.path().join("a");
        c.workers = 1;
        run(&c, Mode::Speckle).unwrap();
        c.output_dir = dir.path().join("b");
        c.workers = 3;
        let s = run(&c, Mode::Speckle).unwrap();
        assert!(s.artifacts.contains(&"trajectory_0002.csv".to_string()));
        for name in ["trajectory_0000.csv", "trajectory_0002.csv", "summary.json"] {
            assert_eq!(
                std::fs::read(dir.path().join("a").join(name)).unwrap(),
                std::fs::read(dir.path().join("b").join(name)).unwrap(),
                "{name}"
            );
        }
    }
}
