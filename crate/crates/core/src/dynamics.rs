//! Composite Hamiltonians, exact propagation and reduced states.
//!
//! `H_s` and `H_e` are diagonal in the working basis, so `H_0 = H_s + H_e`
//! is diagonal with entry `spectrum_s[s] + spectrum_e[e]` at
//! [`basis_index`]`(s, e)`. Time is measured in units where hbar = 1.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{
    basis_index, eigh, eigvalsh, frobenius_norm_sq, ComplexMatrix, Eigensystem, HermitianOperator,
    C64,
};

/// Tolerance on trace, Hermiticity, positivity and norm of evolved states.
pub const PHYSICALITY_TOL: f64 = 1e-10;

/// Full density-matrix propagation is only offered up to this dimension.
pub const MAX_DENSITY_DIM: usize = 512;

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeSystem {
    spectrum_s: Vec<f64>,
    spectrum_e: Vec<f64>,
}

impl CompositeSystem {
    pub fn new(spectrum_s: Vec<f64>, spectrum_e: Vec<f64>) -> Result<Self> {
        if spectrum_s.is_empty() || spectrum_e.is_empty() {
            return Err(Error::Dimension("system and environment need at least one level".into()));
        }
        if spectrum_s.iter().chain(&spectrum_e).any(|x| !x.is_finite()) {
            return Err(Error::InvalidState("spectra must be finite".into()));
        }
        let dim = spectrum_s.len().saturating_mul(spectrum_e.len());
        if dim > crate::linalg::MAX_DIM {
            return Err(Error::TooLarge {
                dim,
                max: crate::linalg::MAX_DIM,
            });
        }
        Ok(Self {
            spectrum_s,
            spectrum_e,
        })
    }

    pub fn dim_s(&self) -> usize {
        self.spectrum_s.len()
    }

    pub fn dim_e(&self) -> usize {
        self.spectrum_e.len()
    }

    pub fn dim(&self) -> usize {
        self.dim_s() * self.dim_e()
    }

    pub fn spectrum_s(&self) -> &[f64] {
        &self.spectrum_s
    }

    pub fn spectrum_e(&self) -> &[f64] {
        &self.spectrum_e
    }
}

/// How to build the system, environment and initial product state.
///
/// The environment levels are a deterministic Gaussian quantile grid and the
/// initial environment level is the one closest to `epsilon_e`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSetup {
    /// Explicit system spectrum; overrides `gap` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum_s: Option<Vec<f64>>,
    /// Two-level gap, giving levels `(0, gap)`.
    #[serde(default = "default_gap")]
    pub gap: f64,
    pub dim_e: usize,
    #[serde(default = "default_sigma_e")]
    pub sigma_e: f64,
    #[serde(default = "default_epsilon_e")]
    pub epsilon_e: f64,
    #[serde(default = "default_initial_level")]
    pub initial_system_level: usize,
}

fn default_gap() -> f64 {
    1.0
}

fn default_sigma_e() -> f64 {
    1.0
}

fn default_epsilon_e() -> f64 {
    -1.27
}

fn default_initial_level() -> usize {
    1
}

impl SystemSetup {
    /// Two-level system with gap 1 in a unit-width Gaussian environment,
    /// starting in the excited state with the environment near -1.27.
    pub fn two_level(dim_e: usize) -> Self {
        Self {
            spectrum_s: None,
            gap: default_gap(),
            dim_e,
            sigma_e: default_sigma_e(),
            epsilon_e: default_epsilon_e(),
            initial_system_level: default_initial_level(),
        }
    }

    pub fn with_dim_e(mut self, dim_e: usize) -> Self {
        self.dim_e = dim_e;
        self
    }

    pub fn system_spectrum(&self) -> Vec<f64> {
        self.spectrum_s.clone().unwrap_or_else(|| vec![0.0, self.gap])
    }

    pub fn build(&self) -> Result<(CompositeSystem, PureState)> {
        let spectrum_e = gaussian_environment_spectrum(self.dim_e, self.sigma_e)?;
        let env_level = nearest_level(&spectrum_e, self.epsilon_e);
        let sys = CompositeSystem::new(self.system_spectrum(), spectrum_e)?;
        if self.initial_system_level >= sys.dim_s() {
            return Err(Error::InvalidState(format!(
                "initial system level {} out of range for {} levels",
                self.initial_system_level,
                sys.dim_s()
            )));
        }
        let psi0 = PureState::product(&sys, self.initial_system_level, env_level)?;
        Ok((sys, psi0))
    }

    /// Energy of the environment level actually used in the initial state.
    pub fn initial_environment_energy(&self) -> Result<f64> {
        let spectrum_e = gaussian_environment_spectrum(self.dim_e, self.sigma_e)?;
        Ok(spectrum_e[nearest_level(&spectrum_e, self.epsilon_e)])
    }
}

/// A normalized state vector on `H_s ⊗ H_e`.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    amplitudes: Vec<C64>,
}

impl PureState {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        Self::checked(amplitudes, 1e-12)
    }

    /// Normalizes `amplitudes`; fails on the zero vector.
    pub fn normalized(mut amplitudes: Vec<C64>) -> Result<Self> {
        let norm = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidState("cannot normalize a zero or non-finite vector".into()));
        }
        amplitudes.iter_mut().for_each(|z| *z /= norm);
        Ok(Self { amplitudes })
    }

    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::Dimension(format!("basis index {index} out of range {dim}")));
        }
        let mut v = vec![C64::new(0.0, 0.0); dim];
        v[index] = C64::new(1.0, 0.0);
        Ok(Self { amplitudes: v })
    }

    /// `|s> ⊗ |e>`.
    pub fn product(sys: &CompositeSystem, s: usize, e: usize) -> Result<Self> {
        if s >= sys.dim_s() || e >= sys.dim_e() {
            return Err(Error::Dimension(format!("level ({s}, {e}) out of range")));
        }
        Self::basis(sys.dim(), basis_index(s, e, sys.dim_e()))
    }

    fn checked(amplitudes: Vec<C64>, tol: f64) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::InvalidState("empty state vector".into()));
        }
        let norm_sq: f64 = amplitudes.iter().map(|z| z.norm_sqr()).sum();
        if !norm_sq.is_finite() || (norm_sq.sqrt() - 1.0).abs() > tol {
            return Err(Error::InvalidState(format!(
                "state norm {} differs from 1 by more than {tol:e}",
                norm_sq.sqrt()
            )));
        }
        Ok(Self { amplitudes })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn projector(&self) -> HermitianOperator {
        HermitianOperator::projector(&self.amplitudes)
    }
}

/// The amplitudes `gamma[s, e]` of a pure state in the tensor basis.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMatrix {
    gamma: ComplexMatrix,
}

impl CoefficientMatrix {
    /// Wraps a matrix without checking `Tr(gamma gamma^H) = 1`.
    pub fn from_matrix(gamma: ComplexMatrix) -> Self {
        Self { gamma }
    }

    pub fn from_state(psi: &PureState, dim_s: usize, dim_e: usize) -> Result<Self> {
        if dim_s == 0 || dim_e == 0 || dim_s.checked_mul(dim_e) != Some(psi.dim()) {
            return Err(Error::Dimension(format!(
                "state of dimension {} cannot be split as {dim_s} x {dim_e}",
                psi.dim()
            )));
        }
        let amps = psi.amplitudes();
        Ok(Self {
            gamma: ComplexMatrix::from_fn(dim_s, dim_e, |s, e| amps[basis_index(s, e, dim_e)]),
        })
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.gamma
    }

    pub fn dim_s(&self) -> usize {
        self.gamma.rows()
    }

    pub fn dim_e(&self) -> usize {
        self.gamma.cols()
    }

    /// `|Tr(gamma gamma^H) - 1|`.
    pub fn normalization_error(&self) -> f64 {
        (frobenius_norm_sq(&self.gamma) - 1.0).abs()
    }

    /// `gamma gamma^H` before symmetrization, entry by entry.
    fn raw_reduced(&self) -> ComplexMatrix {
        let g = &self.gamma;
        ComplexMatrix::from_fn(g.rows(), g.rows(), |s, t| {
            g.row(s).iter().zip(g.row(t)).map(|(a, b)| a * b.conj()).sum()
        })
    }

    /// `rho_s = gamma gamma^H`.
    pub fn reduced(&self) -> HermitianOperator {
        HermitianOperator::hermitize(self.raw_reduced())
    }

    /// `Tr((gamma gamma^H)^2)`.
    pub fn purity(&self) -> f64 {
        frobenius_norm_sq(self.reduced().matrix())
    }
}

/// `gamma` and `rho_s = gamma gamma^H` for a pure state.
pub fn reduce_pure(
    psi: &PureState,
    dim_s: usize,
    dim_e: usize,
) -> Result<(CoefficientMatrix, HermitianOperator)> {
    let gamma = CoefficientMatrix::from_state(psi, dim_s, dim_e)?;
    let rho = gamma.reduced();
    Ok((gamma, rho))
}

/// `H_0 = H_s + H_e`, diagonal in the composite basis.
pub fn build_h0(sys: &CompositeSystem) -> HermitianOperator {
    let dim_e = sys.dim_e();
    let mut diagonal = vec![0.0; sys.dim()];
    for (s, es) in sys.spectrum_s().iter().enumerate() {
        for (e, ee) in sys.spectrum_e().iter().enumerate() {
            diagonal[basis_index(s, e, dim_e)] = es + ee;
        }
    }
    HermitianOperator::from_real_diagonal(&diagonal)
}

/// `H = H_0 + W`.
pub fn total_hamiltonian(sys: &CompositeSystem, w: &HermitianOperator) -> Result<HermitianOperator> {
    if w.dim() != sys.dim() {
        return Err(Error::Dimension(format!(
            "interaction of dimension {} for a composite space of dimension {}",
            w.dim(),
            sys.dim()
        )));
    }
    let mut h = w.clone().into_matrix();
    let dim_e = sys.dim_e();
    for (s, es) in sys.spectrum_s().iter().enumerate() {
        for (e, ee) in sys.spectrum_e().iter().enumerate() {
            let i = basis_index(s, e, dim_e);
            h[(i, i)].re += es + ee;
        }
    }
    Ok(HermitianOperator::hermitize(h))
}

/// `e^{-iHt}` applied through one eigendecomposition of `H`.
#[derive(Clone, Debug)]
pub struct Propagator {
    eigen: Eigensystem,
}

impl Propagator {
    pub fn new(h: &HermitianOperator) -> Result<Self> {
        Ok(Self { eigen: eigh(h)? })
    }

    pub fn from_eigensystem(eigen: Eigensystem) -> Self {
        Self { eigen }
    }

    pub fn eigensystem(&self) -> &Eigensystem {
        &self.eigen
    }

    pub fn dim(&self) -> usize {
        self.eigen.dim()
    }

    /// Raw amplitude vectors `V e^{-i Lambda t} V^H psi0`, one per time.
    pub fn evolve_amplitudes(&self, psi0: &[C64], times: &[f64]) -> Result<Vec<Vec<C64>>> {
        let n = self.dim();
        if psi0.len() != n {
            return Err(Error::Dimension(format!(
                "state of dimension {} for a Hamiltonian of dimension {n}",
                psi0.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidState("times must be finite".into()));
        }
        if times.is_empty() {
            return Ok(Vec::new());
        }
        let v = self.eigen.eigenvectors.view();
        // c = V^H psi0
        let mut coeffs = vec![C64::new(0.0, 0.0); n];
        for i in 0..n {
            let p = psi0[i];
            if p == C64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..n {
                coeffs[k] += v[(i, k)].conj() * p;
            }
        }
        let phased = Mat::<C64>::from_fn(n, times.len(), |k, j| {
            let t = times[j];
            if t == 0.0 {
                coeffs[k]
            } else {
                C64::from_polar(1.0, -self.eigen.eigenvalues[k] * t) * coeffs[k]
            }
        });
        let mut out = Mat::<C64>::zeros(n, times.len());
        matmul(out.as_mut(), Accum::Replace, v, phased.as_ref(), C64::new(1.0, 0.0), Par::Seq);
        Ok((0..times.len())
            .map(|j| {
                if times[j] == 0.0 {
                    psi0.to_vec()
                } else {
                    out.col(j).iter().copied().collect()
                }
            })
            .collect())
    }

    /// `e^{-iHt} rho0 e^{iHt}` for each time.
    pub fn evolve_density(
        &self,
        rho0: &HermitianOperator,
        times: &[f64],
    ) -> Result<Vec<HermitianOperator>> {
        let n = self.dim();
        if rho0.dim() != n {
            return Err(Error::Dimension(format!(
                "density matrix of dimension {} for a Hamiltonian of dimension {n}",
                rho0.dim()
            )));
        }
        if n > MAX_DENSITY_DIM {
            return Err(Error::TooLarge {
                dim: n,
                max: MAX_DENSITY_DIM,
            });
        }
        let v = &self.eigen.eigenvectors;
        let rho_eig = v.adjoint().matmul(rho0.matrix())?.matmul(v)?;
        times
            .iter()
            .map(|&t| {
                let phases: Vec<C64> = self
                    .eigen
                    .eigenvalues
                    .iter()
                    .map(|l| C64::from_polar(1.0, -l * t))
                    .collect();
                let rotated =
                    ComplexMatrix::from_fn(n, n, |i, j| phases[i] * rho_eig[(i, j)] * phases[j].conj());
                let rho_t = v.matmul(&rotated)?.matmul(&v.adjoint())?;
                Ok(HermitianOperator::hermitize(rho_t))
            })
            .collect()
    }
}

/// Evolve `psi0` under `h` at each time, reusing one eigendecomposition.
pub fn evolve_pure(h: &HermitianOperator, psi0: &PureState, times: &[f64]) -> Result<Vec<PureState>> {
    let prop = Propagator::new(h)?;
    prop.evolve_amplitudes(psi0.amplitudes(), times)?
        .into_iter()
        .zip(times)
        .map(|(amps, t)| {
            PureState::checked(amps, PHYSICALITY_TOL).map_err(|e| {
                Error::Numerical(format!("norm not preserved at t = {t}: {e}"))
            })
        })
        .collect()
}

/// Worst-case deviations from a physical reduced state seen so far.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalityReport {
    pub max_trace_error: f64,
    pub max_hermiticity_error: f64,
    pub min_eigenvalue: f64,
    pub max_norm_error: f64,
}

impl Default for PhysicalityReport {
    fn default() -> Self {
        Self {
            max_trace_error: 0.0,
            max_hermiticity_error: 0.0,
            min_eigenvalue: f64::INFINITY,
            max_norm_error: 0.0,
        }
    }
}

impl PhysicalityReport {
    pub fn merge(&self, other: &Self) -> Self {
        Self {
            max_trace_error: self.max_trace_error.max(other.max_trace_error),
            max_hermiticity_error: self.max_hermiticity_error.max(other.max_hermiticity_error),
            min_eigenvalue: self.min_eigenvalue.min(other.min_eigenvalue),
            max_norm_error: self.max_norm_error.max(other.max_norm_error),
        }
    }

    pub fn is_physical(&self, tol: f64) -> bool {
        self.violation(tol).is_none()
    }

    pub fn violation(&self, tol: f64) -> Option<String> {
        if !(self.max_trace_error <= tol) {
            Some(format!("trace error {:e}", self.max_trace_error))
        } else if !(self.max_hermiticity_error <= tol) {
            Some(format!("hermiticity error {:e}", self.max_hermiticity_error))
        } else if !(self.min_eigenvalue >= -tol) {
            Some(format!("negative eigenvalue {:e}", self.min_eigenvalue))
        } else if !(self.max_norm_error <= tol) {
            Some(format!("global norm error {:e}", self.max_norm_error))
        } else {
            None
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub reduced_states: Vec<HermitianOperator>,
    pub populations: Vec<Vec<f64>>,
    pub physicality: PhysicalityReport,
}

impl Trajectory {
    pub fn dim_s(&self) -> usize {
        self.reduced_states.first().map_or(0, |r| r.dim())
    }

    /// Population of system level `level` at every time point.
    pub fn population_series(&self, level: usize) -> Vec<f64> {
        self.populations.iter().map(|p| p[level]).collect()
    }
}

/// `rho_s(t) = Tr_e(e^{-i(H_0+W)t} |psi0><psi0| e^{i(H_0+W)t})` on a time grid.
pub fn run_trajectory(
    sys: &CompositeSystem,
    w: &HermitianOperator,
    psi0: &PureState,
    times: &[f64],
) -> Result<Trajectory> {
    run_trajectory_tagged(sys, w, psi0, times, 0)
}

pub(crate) fn run_trajectory_tagged(
    sys: &CompositeSystem,
    w: &HermitianOperator,
    psi0: &PureState,
    times: &[f64],
    stream: u64,
) -> Result<Trajectory> {
    if psi0.dim() != sys.dim() {
        return Err(Error::Dimension(format!(
            "initial state of dimension {} for a composite space of dimension {}",
            psi0.dim(),
            sys.dim()
        )));
    }
    let h = total_hamiltonian(sys, w)?;
    let prop = Propagator::new(&h)?;
    trajectory_from_propagator(&prop, sys, psi0, times, stream)
}

pub(crate) fn trajectory_from_propagator(
    prop: &Propagator,
    sys: &CompositeSystem,
    psi0: &PureState,
    times: &[f64],
    stream: u64,
) -> Result<Trajectory> {
    let states = prop.evolve_amplitudes(psi0.amplitudes(), times)?;
    let mut reduced_states = Vec::with_capacity(times.len());
    let mut populations = Vec::with_capacity(times.len());
    let mut physicality = PhysicalityReport::default();
    for (amps, &t) in states.into_iter().zip(times) {
        let norm_error = (amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() - 1.0).abs();
        let gamma = CoefficientMatrix::from_matrix(ComplexMatrix::from_row_major(
            sys.dim_s(),
            sys.dim_e(),
            amps,
        )?);
        let raw = gamma.raw_reduced();
        let hermiticity_error = raw.hermiticity_deviation();
        let rho = HermitianOperator::hermitize(raw);
        let eigenvalues = eigvalsh(&rho)?;
        let report = PhysicalityReport {
            max_trace_error: (rho.trace() - 1.0).abs(),
            max_hermiticity_error: hermiticity_error,
            min_eigenvalue: eigenvalues[0],
            max_norm_error: norm_error,
        };
        if let Some(detail) = report.violation(PHYSICALITY_TOL) {
            return Err(Error::Unphysical {
                stream,
                time: t,
                detail,
            });
        }
        physicality = physicality.merge(&report);
        populations.push((0..rho.dim()).map(|s| rho[(s, s)].re).collect());
        reduced_states.push(rho);
    }
    Ok(Trajectory {
        times: times.to_vec(),
        reduced_states,
        populations,
        physicality,
    })
}

/// Reduced dynamics from a mixed initial state, via full density-matrix
/// propagation. Limited to `dim <= MAX_DENSITY_DIM`.
pub fn run_trajectory_mixed(
    sys: &CompositeSystem,
    w: &HermitianOperator,
    rho0: &HermitianOperator,
    times: &[f64],
) -> Result<Vec<HermitianOperator>> {
    if sys.dim() > MAX_DENSITY_DIM {
        return Err(Error::TooLarge {
            dim: sys.dim(),
            max: MAX_DENSITY_DIM,
        });
    }
    let h = total_hamiltonian(sys, w)?;
    Propagator::new(&h)?
        .evolve_density(rho0, times)?
        .iter()
        .map(|rho| crate::linalg::partial_trace_env(rho, sys.dim_s(), sys.dim_e()))
        .collect()
}

/// Deterministic Gaussian density of states: level `k` sits at
/// `sigma_e * Phi^{-1}((k + 1/2) / dim_e)`. The grid is exactly symmetric.
pub fn gaussian_environment_spectrum(dim_e: usize, sigma_e: f64) -> Result<Vec<f64>> {
    if dim_e == 0 {
        return Err(Error::Dimension("environment needs at least one level".into()));
    }
    if !(sigma_e.is_finite() && sigma_e > 0.0) {
        return Err(Error::InvalidState(format!("sigma_e must be positive, got {sigma_e}")));
    }
    let normal = Normal::standard();
    let mut levels = vec![0.0; dim_e];
    for k in 0..dim_e / 2 {
        let q = (k as f64 + 0.5) / dim_e as f64;
        let x = sigma_e * normal.inverse_cdf(q);
        levels[k] = x;
        levels[dim_e - 1 - k] = -x;
    }
    Ok(levels)
}

/// Index of the level closest to `target`; ties go to the lower level.
pub fn nearest_level(levels: &[f64], target: f64) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, &x) in levels.iter().enumerate() {
        let d = (x - target).abs();
        if d < best_dist || (d == best_dist && x < levels[best]) {
            best = i;
            best_dist = d;
        }
    }
    best
}

/// Uniform grid of `n_points` times on `[0, t_max]`, endpoints included.
pub fn uniform_times(t_max: f64, n_points: usize) -> Vec<f64> {
    match n_points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n_points)
            .map(|k| t_max * k as f64 / (n_points - 1) as f64)
            .collect(),
    }
}
