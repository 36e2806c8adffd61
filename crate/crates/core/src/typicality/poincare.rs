//! Monte Carlo test of `Var g <= E ||grad g||^2 / C` for test functions `g` of the interaction.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{total_hamiltonian, SystemSetup};
use crate::ensembles::{poincare_lower_bound, sample, EnsembleSpec, NormalizationMode, Symmetry};
use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm_sq, ComplexMatrix, HermitianOperator, C64};
use crate::rng::SeededRng;
use crate::typicality::gradient::{finite_difference_norm_sq, hermitian_basis, reduced_at};

/// Seed of the fixed matrix `A` in the linear test function. Independent of
/// the master seed so that every run tests the same function.
pub const LINEAR_DIRECTION_SEED: u64 = 0x0a11_ce5e_ed00;

/// Finite-difference step for the population function, relative to `sigma_w`.
pub const POPULATION_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum TestFunction {
    /// `Re Tr(A W)` with `A` a fixed zero-diagonal Hermitian matrix of unit norm.
    Linear,
    /// `Tr(W^2) / N`.
    Quadratic,
    /// Population of system `level` at time `time` under `H_0 + W`.
    Population { time: f64, level: usize },
    Constant,
}

impl TestFunction {
    pub fn id(&self) -> String {
        match self {
            TestFunction::Linear => "linear".into(),
            TestFunction::Quadratic => "quadratic".into(),
            TestFunction::Population { time, level } => format!("population:{level}:{time}"),
            TestFunction::Constant => "constant".into(),
        }
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Accepts `linear`, `quadratic`, `constant` and `population:<level>:<time>`.
impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownTestFunction(s.to_string());
        match s {
            "linear" => Ok(TestFunction::Linear),
            "quadratic" => Ok(TestFunction::Quadratic),
            "constant" => Ok(TestFunction::Constant),
            _ => {
                let rest = s.strip_prefix("population:").ok_or_else(unknown)?;
                let (level, time) = rest.split_once(':').ok_or_else(unknown)?;
                Ok(TestFunction::Population {
                    level: level.parse().map_err(|_| unknown())?,
                    time: time.parse().map_err(|_| unknown())?,
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoincareTestReport {
    pub function: String,
    pub n: usize,
    pub variance: f64,
    pub variance_se: f64,
    pub mean_gradient_sq: f64,
    pub mean_gradient_sq_se: f64,
    /// Tightest available lower bound on the Poincaré constant.
    pub constant: f64,
    /// `variance * constant / mean_gradient_sq`; 0 when `g` is constant.
    pub margin: f64,
    pub margin_se: f64,
}

impl PoincareTestReport {
    pub fn holds(&self, n_se: f64) -> bool {
        self.margin <= 1.0 + n_se * self.margin_se
    }

    pub fn saturates(&self, n_se: f64) -> bool {
        (self.margin - 1.0).abs() <= n_se * self.margin_se
    }
}

/// The fixed direction of the linear test function: zero diagonal, unit
/// Frobenius norm, real in the real-symmetric case.
pub fn linear_direction(dim: usize, symmetry: Symmetry) -> ComplexMatrix {
    let mut rng = SeededRng::new(LINEAR_DIRECTION_SEED, dim as u64);
    let mut a = ComplexMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in (i + 1)..dim {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = match symmetry {
                Symmetry::ComplexHermitian => rng.sample(StandardNormal),
                Symmetry::RealSymmetric => 0.0,
            };
            a[(i, j)] = C64::new(re, im);
            a[(j, i)] = C64::new(re, -im);
        }
    }
    let norm = frobenius_norm_sq(&a).sqrt();
    if norm > 0.0 {
        a = a.scaled(C64::new(1.0 / norm, 0.0));
    }
    a
}

fn re_trace_product(a: &ComplexMatrix, w: &HermitianOperator) -> f64 {
    let n = a.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (a[(i, j)] * w[(j, i)]).re;
        }
    }
    acc
}

/// Value of `g` and `||grad g||^2` at one sample.
struct Evaluator<'a> {
    function: &'a TestFunction,
    spec: &'a EnsembleSpec,
    linear: Option<ComplexMatrix>,
    system: Option<(crate::dynamics::CompositeSystem, crate::dynamics::PureState)>,
}

impl Evaluator<'_> {
    fn eval(&self, w: &HermitianOperator) -> Result<(f64, f64)> {
        let n = self.spec.dim as f64;
        match self.function {
            TestFunction::Constant => Ok((1.0, 0.0)),
            TestFunction::Linear => {
                let a = self.linear.as_ref().unwrap();
                Ok((re_trace_product(a, w), frobenius_norm_sq(a)))
            }
            TestFunction::Quadratic => {
                let tr = frobenius_norm_sq(w.matrix());
                Ok((tr / n, 4.0 * tr / (n * n)))
            }
            TestFunction::Population { time, level } => {
                let (sys, psi0) = self.system.as_ref().unwrap();
                let (dim_s, dim_e) = (sys.dim_s(), sys.dim_e());
                let h = total_hamiltonian(sys, w)?;
                let value = reduced_at(&h, psi0, *time, dim_s, dim_e)?[(*level, *level)].re;
                let basis = hermitian_basis(sys.dim(), self.spec.symmetry);
                let step = POPULATION_STEP * self.spec.sigma_w;
                let grad = finite_difference_norm_sq(&h, &basis, step, |hp| {
                    Ok(vec![reduced_at(hp, psi0, *time, dim_s, dim_e)?[(*level, *level)].re])
                })?;
                Ok((value, grad))
            }
        }
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64], m: f64) -> f64 {
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

fn sample_cov(x: &[f64], mx: f64, y: &[f64], my: f64) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (x.len() - 1) as f64
}

/// Monte Carlo estimate of the Poincaré margin of `function` under `spec`.
///
/// Samples are drawn in expectation-normalization mode whatever `spec`
/// says, since exact rescaling conditions the measure. The population
/// function needs `setup`, whose composite dimension must equal `spec.dim`.
pub fn poincare_mc_test(
    spec: &EnsembleSpec,
    function: &TestFunction,
    setup: Option<&SystemSetup>,
    n: usize,
    master_seed: u64,
) -> Result<PoincareTestReport> {
    if n < 2 {
        return Err(Error::Config(format!(
            "variance estimation needs at least 2 samples, got {n}"
        )));
    }
    let mut spec = spec.clone();
    if spec.normalization != NormalizationMode::Expectation {
        log::info!("Poincaré test switches the ensemble to expectation normalization");
        spec.normalization = NormalizationMode::Expectation;
    }
    let constant = poincare_lower_bound(&spec)?.tightest();

    let system = match function {
        TestFunction::Population { level, .. } => {
            let setup = setup.ok_or_else(|| {
                Error::Config("the population test function needs a system setup".into())
            })?;
            let (sys, psi0) = setup.build()?;
            if sys.dim() != spec.dim {
                return Err(Error::Dimension(format!(
                    "ensemble dimension {} does not match the composite dimension {}",
                    spec.dim,
                    sys.dim()
                )));
            }
            if *level >= sys.dim_s() {
                return Err(Error::Config(format!(
                    "population level {level} out of range for {} levels",
                    sys.dim_s()
                )));
            }
            Some((sys, psi0))
        }
        _ => None,
    };
    let evaluator = Evaluator {
        function,
        spec: &spec,
        linear: matches!(function, TestFunction::Linear)
            .then(|| linear_direction(spec.dim, spec.symmetry)),
        system,
    };

    let samples: Vec<(f64, f64)> = (0..n as u64)
        .into_par_iter()
        .map(|stream| {
            let mut rng = SeededRng::new(master_seed, stream);
            let w = sample(&spec, &mut rng)?;
            evaluator.eval(&w)
        })
        .collect::<Result<_>>()?;

    let values: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let grads: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let nf = n as f64;
    let mv = mean(&values);
    let variance = sample_var(&values, mv);
    let sq_dev: Vec<f64> = values.iter().map(|v| (v - mv).powi(2) * nf / (nf - 1.0)).collect();
    let msq = mean(&sq_dev);
    let variance_se = (sample_var(&sq_dev, msq) / nf).sqrt();
    let mean_gradient_sq = mean(&grads);
    let mean_gradient_sq_se = (sample_var(&grads, mean_gradient_sq) / nf).sqrt();

    let (margin, margin_se) = if mean_gradient_sq > 0.0 {
        // Delta method for the ratio of the two sample means.
        let r = msq / mean_gradient_sq;
        let g2 = mean_gradient_sq * mean_gradient_sq;
        let var_r = (sample_var(&sq_dev, msq) / g2 + r * r * sample_var(&grads, mean_gradient_sq) / g2
            - 2.0 * r * sample_cov(&sq_dev, msq, &grads, mean_gradient_sq) / g2)
            / nf;
        (constant * r, constant * var_r.max(0.0).sqrt())
    } else {
        (0.0, 0.0)
    };

    Ok(PoincareTestReport {
        function: function.id(),
        n,
        variance,
        variance_se,
        mean_gradient_sq,
        mean_gradient_sq_se,
        constant,
        margin,
        margin_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_ids() {
        assert_eq!("linear".parse::<TestFunction>().unwrap(), TestFunction::Linear);
        assert_eq!(
            "population:0:2.5".parse::<TestFunction>().unwrap(),
            TestFunction::Population { level: 0, time: 2.5 }
        );
        assert!(matches!(
            "cubic".parse::<TestFunction>(),
            Err(Error::UnknownTestFunction(_))
        ));
        assert!("population:x".parse::<TestFunction>().is_err());
        for f in [TestFunction::Linear, TestFunction::Population { level: 1, time: 3.0 }] {
            assert_eq!(f.id().parse::<TestFunction>().unwrap(), f);
        }
    }

    #[test]
    fn constant_has_zero_margin() {
        let r = poincare_mc_test(&EnsembleSpec::wigner(4, 1.0), &TestFunction::Constant, None, 10, 0)
            .unwrap();
        assert_eq!(r.variance, 0.0);
        assert_eq!(r.margin, 0.0);
    }

    #[test]
    fn linear_direction_normalized() {
        for sym in [Symmetry::ComplexHermitian, Symmetry::RealSymmetric] {
            let a = linear_direction(6, sym);
            assert!((frobenius_norm_sq(&a) - 1.0).abs() < 1e-14);
            assert!(a.hermiticity_deviation() < 1e-15);
            for i in 0..6 {
                assert_eq!(a[(i, i)], C64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn linear_saturates_small() {
        for sym in [Symmetry::ComplexHermitian, Symmetry::RealSymmetric] {
            let spec = EnsembleSpec::wigner(8, 0.7).with_symmetry(sym);
            let r = poincare_mc_test(&spec, &TestFunction::Linear, None, 4000, 11).unwrap();
            assert!(r.saturates(4.0), "{r:?}");
        }
    }

    #[test]
    fn quadratic_holds() {
        let spec = EnsembleSpec::wigner(8, 1.0);
        let r = poincare_mc_test(&spec, &TestFunction::Quadratic, None, 1000, 2).unwrap();
        assert!(r.holds(3.0), "{r:?}");
        assert!(r.margin > 0.0);
    }

    #[test]
    fn population_needs_setup() {
        let f = TestFunction::Population { time: 1.0, level: 0 };
        assert!(poincare_mc_test(&EnsembleSpec::wigner(4, 0.2), &f, None, 4, 0).is_err());
        let setup = SystemSetup::two_level(3);
        assert!(matches!(
            poincare_mc_test(&EnsembleSpec::wigner(4, 0.2), &f, Some(&setup), 4, 0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn population_small() {
        let setup = SystemSetup::two_level(2);
        let f = TestFunction::Population { time: 2.0, level: 0 };
        let r = poincare_mc_test(&EnsembleSpec::wigner(4, 0.5), &f, Some(&setup), 50, 3).unwrap();
        assert!(r.mean_gradient_sq > 0.0);
        assert!(r.holds(3.0), "{r:?}");
    }
}
