//! Sensitivity of `rho_s(tau)` to the interaction.
//!
//! The gradient norm is the Hilbert-Schmidt norm of the differential
//! `W -> rho_s`, i.e. the sum of `||d rho_s(B)||_F^2` over an orthonormal
//! basis `B` of Hermitian matrices. The exact commutator value
//! `2 tau^2 (dim_s - Tr(rho_s^2))` bounds it from above, and is itself at
//! most `2 tau^2 dim_s`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{reduce_pure, total_hamiltonian, CoefficientMatrix, CompositeSystem, Propagator, PureState};
use crate::ensembles::Symmetry;
use crate::error::{Error, Result};
use crate::linalg::{HermitianOperator, C64};

/// Largest composite dimension for which the full direction basis is enumerated.
pub const GRADIENT_DIM_CAP: usize = 24;

/// Relative agreement required between steps `h` and `h/2`.
pub const RICHARDSON_TOL: f64 = 1e-3;

/// `2 tau^2 (dim_s - Tr((gamma gamma^H)^2))`.
pub fn exact_commutator_norm_sq(gamma: &CoefficientMatrix, tau: f64) -> Result<f64> {
    let err = gamma.normalization_error();
    if !(err <= 1e-9) {
        return Err(Error::InvalidState(format!(
            "coefficient matrix is not normalized: |Tr(gamma gamma^H) - 1| = {err:e}"
        )));
    }
    Ok(2.0 * tau * tau * (gamma.dim_s() as f64 - gamma.purity()).max(0.0))
}

/// `2 tau^2 dim_s`, uniform in the environment dimension.
pub fn gradient_upper_bound(dim_s: usize, tau: f64) -> f64 {
    2.0 * tau * tau * dim_s as f64
}

/// A sparse Hermitian matrix of unit Frobenius norm.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianDirection {
    pub entries: Vec<(usize, usize, C64)>,
}

/// Orthonormal basis of the Hermitian (or real-symmetric) `n x n` matrices:
/// `E_ii`, `(E_ij + E_ji)/sqrt 2` and, in the complex case, `i(E_ij - E_ji)/sqrt 2`.
pub fn hermitian_basis(n: usize, symmetry: Symmetry) -> Vec<HermitianDirection> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mut basis = Vec::with_capacity(n * n);
    for i in 0..n {
        basis.push(HermitianDirection {
            entries: vec![(i, i, C64::new(1.0, 0.0))],
        });
        for j in (i + 1)..n {
            basis.push(HermitianDirection {
                entries: vec![(i, j, C64::new(r, 0.0)), (j, i, C64::new(r, 0.0))],
            });
            if symmetry == Symmetry::ComplexHermitian {
                basis.push(HermitianDirection {
                    entries: vec![(i, j, C64::new(0.0, r)), (j, i, C64::new(0.0, -r))],
                });
            }
        }
    }
    basis
}

fn perturbed(h: &HermitianOperator, direction: &HermitianDirection, step: f64) -> HermitianOperator {
    let mut m = h.clone().into_matrix();
    for &(i, j, z) in &direction.entries {
        m[(i, j)] += z * step;
    }
    HermitianOperator::hermitize(m)
}

/// Central-difference estimate of `sum_B ||df(H + eps B)||^2` where `f`
/// returns the real components of some observable of `H`.
pub fn finite_difference_norm_sq<F>(
    h: &HermitianOperator,
    directions: &[HermitianDirection],
    step: f64,
    f: F,
) -> Result<f64>
where
    F: Fn(&HermitianOperator) -> Result<Vec<f64>>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidState(format!("step must be positive, got {step}")));
    }
    let mut total = 0.0;
    for d in directions {
        let plus = f(&perturbed(h, d, step))?;
        let minus = f(&perturbed(h, d, -step))?;
        total += plus
            .iter()
            .zip(&minus)
            .map(|(a, b)| ((a - b) / (2.0 * step)).powi(2))
            .sum::<f64>();
    }
    Ok(total)
}

/// Real and imaginary parts of every entry of `rho_s(tau)` for Hamiltonian `h`.
pub(crate) fn reduced_components(
    h: &HermitianOperator,
    psi0: &PureState,
    tau: f64,
    dim_s: usize,
    dim_e: usize,
) -> Result<Vec<f64>> {
    let rho = reduced_at(h, psi0, tau, dim_s, dim_e)?;
    Ok(rho
        .matrix()
        .as_slice()
        .iter()
        .flat_map(|z| [z.re, z.im])
        .collect())
}

pub(crate) fn reduced_at(
    h: &HermitianOperator,
    psi0: &PureState,
    tau: f64,
    dim_s: usize,
    dim_e: usize,
) -> Result<HermitianOperator> {
    let amps = Propagator::new(h)?.evolve_amplitudes(psi0.amplitudes(), &[tau])?.remove(0);
    let psi = PureState::normalized(amps)?;
    Ok(reduce_pure(&psi, dim_s, dim_e)?.1)
}

/// Finite-difference `||grad_W rho_s(tau)||^2` over the full Hermitian basis.
pub fn numeric_gradient_norm_sq(
    sys: &CompositeSystem,
    w: &HermitianOperator,
    psi0: &PureState,
    tau: f64,
    step: f64,
) -> Result<f64> {
    let n = sys.dim();
    if n > GRADIENT_DIM_CAP {
        return Err(Error::Infeasible(format!(
            "finite-difference gradient needs dim <= {GRADIENT_DIM_CAP}, got {n}; \
             use exact_commutator_norm_sq for large systems"
        )));
    }
    let h = total_hamiltonian(sys, w)?;
    let basis = hermitian_basis(n, Symmetry::ComplexHermitian);
    let (dim_s, dim_e) = (sys.dim_s(), sys.dim_e());
    finite_difference_norm_sq(&h, &basis, step, |hp| {
        reduced_components(hp, psi0, tau, dim_s, dim_e)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub tau: f64,
    pub numeric_gradient_norm_sq: f64,
    /// Same estimate at half the step.
    pub numeric_gradient_norm_sq_half_step: f64,
    pub exact_commutator_norm_sq: f64,
    pub analytic_upper_bound: f64,
}

impl GradientReport {
    /// `numeric <= exact (1 + rel_tol) <= bound (1 + 1e-12)`.
    pub fn chain_holds(&self, rel_tol: f64) -> bool {
        self.numeric_gradient_norm_sq <= self.exact_commutator_norm_sq * (1.0 + rel_tol)
            && self.exact_commutator_norm_sq <= self.analytic_upper_bound * (1.0 + 1e-12)
    }

    pub fn richardson_rel_diff(&self) -> f64 {
        let (a, b) = (self.numeric_gradient_norm_sq, self.numeric_gradient_norm_sq_half_step);
        let scale = a.abs().max(b.abs());
        if scale < 1e-300 {
            0.0
        } else {
            (a - b).abs() / scale
        }
    }
}

/// Numeric gradient at `step` and `step / 2`, the exact commutator value at
/// the evolved state and the uniform bound, for one `(W, tau)`.
pub fn gradient_report(
    sys: &CompositeSystem,
    w: &HermitianOperator,
    psi0: &PureState,
    tau: f64,
    step: f64,
) -> Result<GradientReport> {
    let numeric = numeric_gradient_norm_sq(sys, w, psi0, tau, step)?;
    let numeric_half = numeric_gradient_norm_sq(sys, w, psi0, tau, step / 2.0)?;
    let h = total_hamiltonian(sys, w)?;
    let amps = Propagator::new(&h)?.evolve_amplitudes(psi0.amplitudes(), &[tau])?.remove(0);
    let psi_tau = PureState::normalized(amps)?;
    let gamma = CoefficientMatrix::from_state(&psi_tau, sys.dim_s(), sys.dim_e())?;
    let report = GradientReport {
        tau,
        numeric_gradient_norm_sq: numeric,
        numeric_gradient_norm_sq_half_step: numeric_half,
        exact_commutator_norm_sq: exact_commutator_norm_sq(&gamma, tau)?,
        analytic_upper_bound: gradient_upper_bound(sys.dim_s(), tau),
    };
    let diff = report.richardson_rel_diff();
    if diff > RICHARDSON_TOL {
        return Err(Error::Numerical(format!(
            "finite-difference gradient not converged: steps {step:e} and {:e} differ by {diff:e}",
            step / 2.0
        )));
    }
    Ok(report)
}
