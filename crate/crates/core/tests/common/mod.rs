//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;
use typicality_core::dynamics::{CoefficientMatrix, CompositeSystem, PureState};
use typicality_core::linalg::{frobenius_norm_sq, ComplexMatrix, HermitianOperator, C64};

/// `exp(A)` by scaling and squaring with a 24-term Taylor series.
pub fn expm(a: &ComplexMatrix) -> ComplexMatrix {
    let n = a.rows();
    let norm = frobenius_norm_sq(a).sqrt();
    let s = if norm > 0.25 { (norm / 0.25).log2().ceil() as i32 } else { 0 };
    let b = a.scaled(C64::new(0.5f64.powi(s), 0.0));
    let mut result = ComplexMatrix::identity(n);
    let mut term = ComplexMatrix::identity(n);
    for k in 1..=24 {
        term = term.matmul(&b).unwrap().scaled(C64::new(1.0 / k as f64, 0.0));
        result = result.add(&term).unwrap();
    }
    for _ in 0..s {
        result = result.matmul(&result).unwrap();
    }
    result
}

/// `e^{-iHt}`.
pub fn propagator(h: &HermitianOperator, t: f64) -> ComplexMatrix {
    expm(&h.matrix().scaled(C64::new(0.0, -t)))
}

/// Environment trace by explicit index loops.
pub fn partial_trace(m: &ComplexMatrix, dim_s: usize, dim_e: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(dim_s, dim_s, |s, t| {
        (0..dim_e).map(|e| m[(s * dim_e + e, t * dim_e + e)]).sum()
    })
}

/// Reduced state at `t` from full density-matrix propagation with `expm`.
pub fn reduced_by_expm(h: &HermitianOperator, psi0: &PureState, t: f64, dim_s: usize, dim_e: usize) -> ComplexMatrix {
    let u = propagator(h, t);
    let rho0 = HermitianOperator::projector(psi0.amplitudes());
    let rho_t = u.matmul(rho0.matrix()).unwrap().matmul(&u.adjoint()).unwrap();
    partial_trace(&rho_t, dim_s, dim_e)
}

/// `tau^2 sum_{i,j} ||Tr_e [E_ij, |psi><psi|]||_F^2` over every elementary matrix `E_ij`.
pub fn commutator_norm_brute_force(gamma: &ComplexMatrix, tau: f64) -> f64 {
    let (dim_s, dim_e) = (gamma.rows(), gamma.cols());
    let n = dim_s * dim_e;
    let psi = gamma.as_slice();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let comm = ComplexMatrix::from_fn(n, n, |k, l| {
                let left = if k == i { psi[j] * psi[l].conj() } else { C64::new(0.0, 0.0) };
                let right = if l == j { psi[k] * psi[i].conj() } else { C64::new(0.0, 0.0) };
                left - right
            });
            total += frobenius_norm_sq(&partial_trace(&comm, dim_s, dim_e));
        }
    }
    tau * tau * total
}

/// `2 tau^2 (dim_s - sum_{s,s',c,d} gamma_{s'c} conj(gamma_{sc}) gamma_{sd} conj(gamma_{s'd}))`.
pub fn commutator_norm_quadruple_sum(gamma: &ComplexMatrix, tau: f64) -> f64 {
    let (dim_s, dim_e) = (gamma.rows(), gamma.cols());
    let mut q = C64::new(0.0, 0.0);
    for s in 0..dim_s {
        for sp in 0..dim_s {
            for c in 0..dim_e {
                for d in 0..dim_e {
                    q += gamma[(sp, c)] * gamma[(s, c)].conj() * gamma[(s, d)] * gamma[(sp, d)].conj();
                }
            }
        }
    }
    2.0 * tau * tau * (dim_s as f64 - q.re)
}

pub fn random_complex(rows: usize, cols: usize, rng: &mut impl Rng) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

pub fn random_hermitian(n: usize, rng: &mut impl Rng) -> HermitianOperator {
    let a = random_complex(n, n, rng);
    HermitianOperator::new(a.add(&a.adjoint()).unwrap().scaled(C64::new(0.5, 0.0))).unwrap()
}

pub fn random_gamma(dim_s: usize, dim_e: usize, rng: &mut impl Rng) -> CoefficientMatrix {
    let g = random_complex(dim_s, dim_e, rng);
    let norm = frobenius_norm_sq(&g).sqrt();
    CoefficientMatrix::from_matrix(g.scaled(C64::new(1.0 / norm, 0.0)))
}

pub fn random_state(n: usize, rng: &mut impl Rng) -> PureState {
    let v: Vec<C64> = (0..n)
        .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    PureState::normalized(v).unwrap()
}

pub fn random_system(dim_s: usize, dim_e: usize, rng: &mut impl Rng) -> CompositeSystem {
    let s: Vec<f64> = (0..dim_s).map(|_| rng.random_range(-1.0..1.0)).collect();
    let e: Vec<f64> = (0..dim_e).map(|_| rng.random_range(-2.0..2.0)).collect();
    CompositeSystem::new(s, e).unwrap()
}

pub fn frobenius_distance(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    frobenius_norm_sq(&a.sub(b).unwrap()).sqrt()
}
