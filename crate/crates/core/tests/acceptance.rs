//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use typicality_core::dynamics::{
    run_trajectory, total_hamiltonian, uniform_times, PhysicalityReport, SystemSetup,
    PHYSICALITY_TOL,
};
use typicality_core::ensembles::{sample, EnsembleSpec};
use typicality_core::rng::SeededRng;
use typicality_core::typicality::statistics::{ScalingRow, ScalingTable};
use typicality_core::typicality::{
    ensemble_statistics, ensemble_trajectories, exact_commutator_norm_sq, gradient_report,
    poincare_mc_test, stationary_p0_theory, stationary_window_stats, EnsembleStatistics,
    TestFunction,
};
use typicality_core::Result;

const SIGMA_W: f64 = 0.2;
const DIMS_E: [usize; 4] = [50, 100, 200, 400];
const TIMES: [f64; 3] = [1.0, 5.0, 10.0];
const N_REALIZATIONS: usize = 50;

struct Outcome {
    passed: bool,
    detail: String,
}

struct Suite {
    physicality: PhysicalityReport,
    runs: usize,
    results: Vec<(String, Outcome)>,
}

impl Suite {
    fn record(&mut self, name: &str, run: impl FnOnce(&mut Self) -> Result<Outcome>) {
        let start = Instant::now();
        let outcome = run(self).unwrap_or_else(|e| Outcome {
            passed: false,
            detail: format!("error: {e}"),
        });
        println!(
            "{} {name}: {} [{:.1}s]",
            if outcome.passed { "PASS" } else { "FAIL" },
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
        self.results.push((name.to_string(), outcome));
    }

    fn absorb(&mut self, report: &PhysicalityReport, trajectories: usize) {
        self.physicality = self.physicality.merge(report);
        self.runs += trajectories;
    }
}

fn bound_grid(suite: &mut Suite, label: &str, make: fn(usize) -> EnsembleSpec) -> Result<(usize, usize, Vec<EnsembleStatistics>)> {
    let mut violations = 0;
    let mut points = 0;
    let mut all = Vec::new();
    for dim_e in DIMS_E {
        let (sys, psi0) = SystemSetup::two_level(dim_e).build()?;
        let stats = ensemble_statistics(&sys, &make(sys.dim()), &psi0, &TIMES, N_REALIZATIONS, 2024)?;
        for k in 0..TIMES.len() {
            points += 1;
            if stats.sigma_rho_sq[k] > stats.variance_bound[k] {
                violations += 1;
                println!(
                    "  {label} dim_e={dim_e} t={}: sigma_rho_sq {:.3e} > bound {:.3e}",
                    TIMES[k], stats.sigma_rho_sq[k], stats.variance_bound[k]
                );
            }
        }
        suite.absorb(&stats.physicality, N_REALIZATIONS);
        all.push(stats);
    }
    Ok((violations, points, all))
}

fn ratio_table(stats: &[EnsembleStatistics]) -> ScalingTable {
    let rows = stats
        .iter()
        .map(|s| {
            let k = s.time_index(5.0).unwrap();
            ScalingRow {
                dim_e: s.dim_e,
                time: 5.0,
                sigma_rho_sq: s.sigma_rho_sq[k],
                sigma_rho_sq_se: s.sigma_rho_sq_se[k],
                variance_bound: s.variance_bound[k],
                speckle_std_p0: None,
                n_realizations: s.n_realizations,
            }
        })
        .collect();
    ScalingTable::from_rows(rows)
}

fn main() -> ExitCode {
    let mut suite = Suite {
        physicality: PhysicalityReport::default(),
        runs: 0,
        results: Vec::new(),
    };
    let mut grids: Vec<(&str, Vec<EnsembleStatistics>)> = Vec::new();

    suite.record("C1 variance bound (Wigner and RRM, 24 grid points)", |s| {
        let mut detail = Vec::new();
        let mut passed = true;
        for (label, make) in [
            ("wigner", (|d| EnsembleSpec::wigner(d, SIGMA_W)) as fn(usize) -> EnsembleSpec),
            ("rrm", |d| EnsembleSpec::rrm_semicircle(d, SIGMA_W)),
        ] {
            let (violations, points, stats) = bound_grid(s, label, make)?;
            let worst = stats
                .iter()
                .flat_map(|st| st.sigma_rho_sq.iter().zip(&st.variance_bound).map(|(a, b)| a / b))
                .fold(0.0, f64::max);
            passed &= violations == 0;
            detail.push(format!("{label}: {violations}/{points} violations, max ratio to bound {worst:.3}"));
            grids.push((label, stats));
        }
        Ok(Outcome { passed, detail: detail.join("; ") })
    });

    suite.record("C2 1/dim_e trend at t=5 (ratio in [2, 8])", |_| {
        let mut detail = Vec::new();
        let mut passed = !grids.is_empty();
        for (label, stats) in &grids {
            let table = ratio_table(stats);
            for c in &table.ratio_checks {
                passed &= c.within_band;
                detail.push(format!("{label} {}/{}: {:.2}", c.dim_e_small, c.dim_e_large, c.ratio));
            }
            passed &= table.ratio_checks.len() == 2;
        }
        Ok(Outcome { passed, detail: detail.join(", ") })
    });

    suite.record("C3 gradient chain (100 instances per dim_e in {2,4,8})", |_| {
        let mut violations = 0;
        let mut worst = 0.0f64;
        let mut total = 0;
        let mut max_formula_err = 0.0f64;
        for dim_e in [2, 4, 8] {
            let (sys, psi0) = SystemSetup::two_level(dim_e).build()?;
            let spec = EnsembleSpec::wigner(sys.dim(), 0.5);
            for i in 0..100u64 {
                let mut rng = SeededRng::new(31, i);
                let w = sample(&spec, &mut rng)?;
                let tau = 2.0 * (1.0 - rng.random::<f64>());
                let r = gradient_report(&sys, &w, &psi0, tau, 1e-5 * 0.5)?;
                total += 1;
                if !r.chain_holds(1e-4) {
                    violations += 1;
                }
                worst = worst.max(r.numeric_gradient_norm_sq / r.exact_commutator_norm_sq);
                if i < 5 {
                    let h = total_hamiltonian(&sys, &w)?;
                    let amps = typicality_core::dynamics::Propagator::new(&h)?
                        .evolve_amplitudes(psi0.amplitudes(), &[tau])?
                        .remove(0);
                    let gamma = typicality_core::dynamics::CoefficientMatrix::from_state(
                        &typicality_core::dynamics::PureState::normalized(amps)?,
                        2,
                        dim_e,
                    )?;
                    let brute = commutator_norm_brute_force(gamma.matrix(), tau);
                    max_formula_err = max_formula_err.max((brute - exact_commutator_norm_sq(&gamma, tau)?).abs());
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let gamma = random_gamma(3, 5, &mut rng);
            let tau = rng.random_range(0.1..2.0);
            let exact = exact_commutator_norm_sq(&gamma, tau)?;
            max_formula_err = max_formula_err
                .max((commutator_norm_brute_force(gamma.matrix(), tau) - exact).abs())
                .max((commutator_norm_quadruple_sum(gamma.matrix(), tau) - exact).abs());
        }
        Ok(Outcome {
            passed: violations == 0 && max_formula_err < 1e-12,
            detail: format!(
                "{violations}/{total} violations, max numeric/exact {worst:.6}, brute-force formula error {max_formula_err:.1e}"
            ),
        })
    });

    suite.record("C4 Poincaré (linear equality at N=16,64; p0 at dim_e=8)", |_| {
        let mut passed = true;
        let mut detail = Vec::new();
        for n in [16, 64] {
            let spec = EnsembleSpec::wigner(n, SIGMA_W);
            let r = poincare_mc_test(&spec, &TestFunction::Linear, None, 2000, 77)?;
            passed &= r.saturates(3.0);
            detail.push(format!("linear N={n}: {:.4} +- {:.4}", r.margin, r.margin_se));
        }
        let setup = SystemSetup::two_level(8);
        let spec = EnsembleSpec::wigner(16, SIGMA_W);
        let f = TestFunction::Population { time: 5.0, level: 0 };
        let r = poincare_mc_test(&spec, &f, Some(&setup), 500, 78)?;
        passed &= r.holds(3.0);
        detail.push(format!("p0(t=5): {:.4} +- {:.4}", r.margin, r.margin_se));
        Ok(Outcome { passed, detail: detail.join(", ") })
    });

    suite.record("C5 stationary p0 at dim_e=500 (0.683 +- 0.05)", |s| {
        let setup = SystemSetup::two_level(500);
        let (sys, psi0) = setup.build()?;
        let theory = stationary_p0_theory(setup.initial_environment_energy()?, 1.0, 1.0);
        let t_max = 1000.0;
        let times = uniform_times(t_max, 2000);
        let trajs = ensemble_trajectories(&sys, &EnsembleSpec::wigner(sys.dim(), SIGMA_W), &psi0, &times, 4, 2024)?;
        let mut means = Vec::new();
        for t in &trajs {
            s.absorb(&t.physicality, 1);
            means.push(stationary_window_stats(t, (t_max / 2.0, t_max))?[0].mean);
        }
        let passed = means.iter().all(|m| (m - 0.683).abs() <= 0.05);
        let average = means.iter().sum::<f64>() / means.len() as f64;
        Ok(Outcome {
            passed,
            detail: format!(
                "theory {theory:.4}, window [{}, {t_max}] means {} (average {average:.4})",
                t_max / 2.0,
                means.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>().join(" ")
            ),
        })
    });

    suite.record("C7 propagation vs matrix exponential (20 instances, dim <= 16)", |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let times = [0.0, 0.5, 2.0, 7.5, 20.0];
        let mut worst = 0.0f64;
        for i in 0..20u64 {
            let (dim_s, dim_e) = [(2, 2), (2, 4), (2, 8), (3, 5), (4, 4)][i as usize % 5];
            let sys = random_system(dim_s, dim_e, &mut rng);
            let w = sample(&EnsembleSpec::wigner(sys.dim(), 0.5), &mut SeededRng::new(70, i))?;
            let psi0 = random_state(sys.dim(), &mut rng);
            let traj = run_trajectory(&sys, &w, &psi0, &times)?;
            s.absorb(&traj.physicality, 1);
            let h = total_hamiltonian(&sys, &w)?;
            for (k, &t) in times.iter().enumerate() {
                worst = worst.max(frobenius_distance(
                    traj.reduced_states[k].matrix(),
                    &reduced_by_expm(&h, &psi0, t, dim_s, dim_e),
                ));
            }
        }
        Ok(Outcome { passed: worst < 1e-8, detail: format!("max Frobenius distance {worst:.2e}") })
    });

    let physicality = suite.physicality;
    let runs = suite.runs;
    suite.record("C6 physicality across all runs", |_| {
        Ok(Outcome {
            passed: runs > 0 && physicality.is_physical(PHYSICALITY_TOL),
            detail: format!(
                "{runs} trajectories; max trace error {:.1e}, max hermiticity error {:.1e}, min eigenvalue {:.1e}, max norm error {:.1e}",
                physicality.max_trace_error,
                physicality.max_hermiticity_error,
                physicality.min_eigenvalue,
                physicality.max_norm_error
            ),
        })
    });

    let failed = suite.results.iter().filter(|(_, o)| !o.passed).count();
    println!("acceptance: {} passed, {failed} failed", suite.results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
