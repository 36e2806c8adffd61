//! Ensemble fluctuations of the reduced state.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    run_trajectory_tagged, CompositeSystem, PhysicalityReport, PureState, SystemSetup, Trajectory,
};
use crate::ensembles::{sample, EnsembleKind, EnsembleSpec};
use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm_sq, ComplexMatrix, HermitianOperator, C64};
use crate::rng::SeededRng;
use crate::typicality::stationary::{default_window, stationary_window_stats};

/// `4 sigma_w^2 t^2 / dim_e`.
pub fn variance_bound(sigma_w: f64, t: f64, dim_e: usize) -> f64 {
    4.0 * sigma_w * sigma_w * t * t / dim_e as f64
}

/// `sqrt(Tr(W^2) / N)` of the ensemble: `sigma_w` for Wigner and WBRM, the
/// spectrum standard deviation for RRM.
pub fn interaction_strength(spec: &EnsembleSpec) -> Result<f64> {
    Ok(match spec.kind {
        EnsembleKind::Rrm => {
            let d = spec.resolved_spectrum()?;
            (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt()
        }
        _ => spec.sigma_w,
    })
}

/// Running mean and sum of squared Frobenius deviations of a sequence of
/// matrix-valued samples, one slot per time point.
///
/// Partial accumulators merge with Chan's update, which is associative up
/// to floating-point reordering.
#[derive(Clone, Debug)]
pub struct MomentAccumulator {
    count: usize,
    mean: Vec<ComplexMatrix>,
    m2: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new() -> Self {
        Self {
            count: 0,
            mean: Vec::new(),
            m2: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, sample: &[HermitianOperator]) {
        if self.count == 0 {
            self.mean = sample.iter().map(|r| r.matrix().clone()).collect();
            self.m2 = vec![0.0; sample.len()];
            self.count = 1;
            return;
        }
        assert_eq!(sample.len(), self.mean.len(), "time grids differ");
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        for (k, x) in sample.iter().enumerate() {
            let delta = x.matrix().sub(&self.mean[k]).unwrap();
            let new_mean = self.mean[k].add(&delta.scaled(C64::new(inv, 0.0))).unwrap();
            let delta2 = x.matrix().sub(&new_mean).unwrap();
            let cross: f64 = delta
                .as_slice()
                .iter()
                .zip(delta2.as_slice())
                .map(|(a, b)| (a.conj() * b).re)
                .sum();
            self.m2[k] += cross;
            self.mean[k] = new_mean;
        }
    }

    pub fn merge(&self, other: &Self) -> Self {
        if self.count == 0 {
            return other.clone();
        }
        if other.count == 0 {
            return self.clone();
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let mut mean = Vec::with_capacity(self.mean.len());
        let mut m2 = Vec::with_capacity(self.m2.len());
        for k in 0..self.mean.len() {
            let delta = other.mean[k].sub(&self.mean[k]).unwrap();
            mean.push(self.mean[k].add(&delta.scaled(C64::new(nb / n, 0.0))).unwrap());
            m2.push(self.m2[k] + other.m2[k] + frobenius_norm_sq(&delta) * na * nb / n);
        }
        Self {
            count: self.count + other.count,
            mean,
            m2,
        }
    }

    pub fn mean(&self) -> &[ComplexMatrix] {
        &self.mean
    }

    /// Unbiased `E ||rho - E rho||_F^2`, per time point.
    pub fn variance(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.m2.len()];
        }
        let denom = (self.count - 1) as f64;
        self.m2.iter().map(|m| (m / denom).max(0.0)).collect()
    }
}

impl Default for MomentAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleStatistics {
    pub n_realizations: usize,
    pub dim_e: usize,
    pub sigma_w: f64,
    pub times: Vec<f64>,
    #[serde(skip)]
    pub mean_reduced: Vec<HermitianOperator>,
    /// Unbiased estimate of `E ||rho_s - E rho_s||_F^2`.
    pub sigma_rho_sq: Vec<f64>,
    pub sigma_rho_sq_se: Vec<f64>,
    /// `4 sigma_w^2 t^2 / dim_e`.
    pub variance_bound: Vec<f64>,
    /// The estimate itself exceeds the bound at this time.
    pub exceeds_bound: Vec<bool>,
    /// Stationary window used for `speckle_std`.
    pub window: Option<(f64, f64)>,
    /// Ensemble mean of the time standard deviation of each population over the window.
    pub speckle_std: Vec<f64>,
    pub physicality: PhysicalityReport,
}

impl EnsembleStatistics {
    pub fn from_trajectories(
        trajectories: &[Trajectory],
        sigma_w: f64,
        dim_e: usize,
        window: Option<(f64, f64)>,
    ) -> Result<Self> {
        let n = trajectories.len();
        if n < 2 {
            return Err(Error::Config(format!(
                "variance estimation needs at least 2 realizations, got {n}"
            )));
        }
        let times = trajectories[0].times.clone();
        let mut acc = MomentAccumulator::new();
        let mut physicality = PhysicalityReport::default();
        for traj in trajectories {
            if traj.times != times {
                return Err(Error::Dimension("trajectories use different time grids".into()));
            }
            acc.push(&traj.reduced_states);
            physicality = physicality.merge(&traj.physicality);
        }
        let sigma_rho_sq = acc.variance();
        let mean_reduced: Vec<HermitianOperator> =
            acc.mean().iter().cloned().map(HermitianOperator::hermitize).collect();

        // Standard error of the variance estimate from the spread of the
        // per-realization squared deviations.
        let nf = n as f64;
        let sigma_rho_sq_se = (0..times.len())
            .map(|k| {
                let devs: Vec<f64> = trajectories
                    .iter()
                    .map(|t| {
                        frobenius_norm_sq(
                            &t.reduced_states[k].matrix().sub(mean_reduced[k].matrix()).unwrap(),
                        )
                    })
                    .collect();
                let mean = devs.iter().sum::<f64>() / nf;
                let var = devs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
                (var / nf).sqrt() * nf / (nf - 1.0)
            })
            .collect();

        let bound: Vec<f64> = times.iter().map(|&t| variance_bound(sigma_w, t, dim_e)).collect();
        let exceeds_bound = sigma_rho_sq.iter().zip(&bound).map(|(s, b)| s > b).collect();

        let window = window.or_else(|| times.last().map(|&t| default_window(t)));
        let speckle_std = match window {
            Some(w) if times.iter().filter(|&&t| t >= w.0 && t <= w.1).count() >= 2 => {
                let dim_s = trajectories[0].dim_s();
                let mut sums = vec![0.0; dim_s];
                for traj in trajectories {
                    for (s, stat) in stationary_window_stats(traj, w)?.iter().enumerate() {
                        sums[s] += stat.std;
                    }
                }
                sums.into_iter().map(|x| x / nf).collect()
            }
            _ => Vec::new(),
        };

        Ok(Self {
            n_realizations: n,
            dim_e,
            sigma_w,
            times,
            mean_reduced,
            sigma_rho_sq,
            sigma_rho_sq_se,
            variance_bound: bound,
            exceeds_bound,
            window,
            speckle_std,
            physicality,
        })
    }

    pub fn bound_violations(&self) -> usize {
        self.exceeds_bound.iter().filter(|&&x| x).count()
    }

    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&x| (x - t).abs() <= 1e-12 * t.abs().max(1.0))
    }
}

/// Independent realizations `W_r`, `r = 0..n`, each from stream `r` of
/// `master_seed`, evolved on the same time grid. Runs on the current rayon pool.
pub fn ensemble_trajectories(
    sys: &CompositeSystem,
    spec: &EnsembleSpec,
    psi0: &PureState,
    times: &[f64],
    n: usize,
    master_seed: u64,
) -> Result<Vec<Trajectory>> {
    if spec.dim != sys.dim() {
        return Err(Error::Dimension(format!(
            "ensemble dimension {} does not match the composite dimension {}",
            spec.dim,
            sys.dim()
        )));
    }
    spec.validate()?;
    (0..n as u64)
        .into_par_iter()
        .map(|stream| {
            let mut rng = SeededRng::new(master_seed, stream);
            let w = sample(spec, &mut rng)?;
            run_trajectory_tagged(sys, &w, psi0, times, stream)
        })
        .collect()
}

pub fn ensemble_statistics(
    sys: &CompositeSystem,
    spec: &EnsembleSpec,
    psi0: &PureState,
    times: &[f64],
    n: usize,
    master_seed: u64,
) -> Result<EnsembleStatistics> {
    if n < 2 {
        return Err(Error::Config(format!(
            "variance estimation needs at least 2 realizations, got {n}"
        )));
    }
    let trajectories = ensemble_trajectories(sys, spec, psi0, times, n, master_seed)?;
    EnsembleStatistics::from_trajectories(&trajectories, interaction_strength(spec)?, sys.dim_e(), None)
}

/// Fraction of `(realization, time)` pairs with
/// `||rho_s - mean||_F <= 3 sqrt(sigma_rho_sq)`.
pub fn typicality_fraction(trajectories: &[Trajectory], stats: &EnsembleStatistics) -> f64 {
    let mut inside = 0usize;
    let mut total = 0usize;
    for traj in trajectories {
        for (k, rho) in traj.reduced_states.iter().enumerate() {
            let dev = frobenius_norm_sq(&rho.matrix().sub(stats.mean_reduced[k].matrix()).unwrap()).sqrt();
            if dev <= 3.0 * stats.sigma_rho_sq[k].sqrt() + 1e-12 {
                inside += 1;
            }
            total += 1;
        }
    }
    inside as f64 / total.max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub dim_e: usize,
    pub time: f64,
    pub sigma_rho_sq: f64,
    pub sigma_rho_sq_se: f64,
    pub variance_bound: f64,
    /// Mean window std of the ground-state population, when a window was evaluated.
    pub speckle_std_p0: Option<f64>,
    pub n_realizations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioCheck {
    pub dim_e_small: usize,
    pub dim_e_large: usize,
    pub ratio: f64,
    pub expected: f64,
    pub within_band: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    /// Every pair with `dim_e_large = 4 dim_e_small`.
    pub ratio_checks: Vec<RatioCheck>,
    /// `sigma_rho_sq` decreases along the table up to two combined standard errors.
    pub monotone_decreasing: bool,
}

impl ScalingTable {
    /// The `1/dim_e` trend is accepted within a factor 2 either side.
    pub const RATIO_BAND: f64 = 2.0;

    pub fn from_rows(rows: Vec<ScalingRow>) -> Self {
        let mut ratio_checks = Vec::new();
        for a in &rows {
            for b in &rows {
                if b.dim_e == 4 * a.dim_e {
                    let ratio = a.sigma_rho_sq / b.sigma_rho_sq;
                    let expected = 4.0;
                    ratio_checks.push(RatioCheck {
                        dim_e_small: a.dim_e,
                        dim_e_large: b.dim_e,
                        ratio,
                        expected,
                        within_band: ratio >= expected / Self::RATIO_BAND
                            && ratio <= expected * Self::RATIO_BAND,
                    });
                }
            }
        }
        let monotone_decreasing = rows.windows(2).all(|w| {
            let slack = 2.0 * (w[0].sigma_rho_sq_se.powi(2) + w[1].sigma_rho_sq_se.powi(2)).sqrt();
            w[1].sigma_rho_sq <= w[0].sigma_rho_sq + slack
        });
        Self {
            rows,
            ratio_checks,
            monotone_decreasing,
        }
    }

    pub fn trend_ok(&self) -> bool {
        self.monotone_decreasing && self.ratio_checks.iter().all(|c| c.within_band)
    }
}

/// Fluctuations at `fixed_time` across environment sizes.
///
/// `window_grid = Some((t_max, n_points))` adds a uniform grid on
/// `[0, t_max]` so that the stationary speckle amplitude over
/// `[t_max/2, t_max]` is reported too.
pub fn scaling_study(
    setup: &SystemSetup,
    spec: &EnsembleSpec,
    dims_e: &[usize],
    fixed_time: f64,
    window_grid: Option<(f64, usize)>,
    n: usize,
    master_seed: u64,
) -> Result<ScalingTable> {
    if dims_e.is_empty() {
        return Err(Error::Config("scaling study needs at least one environment size".into()));
    }
    if dims_e.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("environment sizes must be strictly ascending".into()));
    }
    let mut times = match window_grid {
        Some((t_max, points)) => crate::dynamics::uniform_times(t_max, points),
        None => Vec::new(),
    };
    if !times.iter().any(|&t| t == fixed_time) {
        times.push(fixed_time);
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }
    let mut rows = Vec::with_capacity(dims_e.len());
    for &dim_e in dims_e {
        let (sys, psi0) = setup.clone().with_dim_e(dim_e).build()?;
        let spec_d = spec.clone().with_dim(sys.dim());
        let trajs = ensemble_trajectories(&sys, &spec_d, &psi0, &times, n, master_seed)?;
        let window = window_grid.map(|(t_max, _)| default_window(t_max));
        let stats = EnsembleStatistics::from_trajectories(
            &trajs,
            interaction_strength(&spec_d)?,
            dim_e,
            window,
        )?;
        let k = stats.time_index(fixed_time).expect("fixed time is on the grid");
        rows.push(ScalingRow {
            dim_e,
            time: fixed_time,
            sigma_rho_sq: stats.sigma_rho_sq[k],
            sigma_rho_sq_se: stats.sigma_rho_sq_se[k],
            variance_bound: stats.variance_bound[k],
            speckle_std_p0: window_grid.and_then(|_| stats.speckle_std.first().copied()),
            n_realizations: n,
        });
    }
    Ok(ScalingTable::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::uniform_times;

    fn small_setup() -> (CompositeSystem, PureState) {
        SystemSetup::two_level(6).build().unwrap()
    }

    #[test]
    fn bound_formula() {
        assert!((variance_bound(0.2, 10.0, 500) - 0.032).abs() < 1e-15);
        assert_eq!(variance_bound(0.2, 0.0, 500), 0.0);
    }

    #[test]
    fn needs_two_realizations() {
        let (sys, psi0) = small_setup();
        let spec = EnsembleSpec::wigner(sys.dim(), 0.2);
        assert!(matches!(
            ensemble_statistics(&sys, &spec, &psi0, &[0.0, 1.0], 1, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_time_has_zero_variance() {
        let (sys, psi0) = small_setup();
        let spec = EnsembleSpec::wigner(sys.dim(), 0.2);
        let stats = ensemble_statistics(&sys, &spec, &psi0, &[0.0, 2.0], 8, 3).unwrap();
        assert!(stats.sigma_rho_sq[0].abs() < 1e-30);
        assert_eq!(stats.variance_bound[0], 0.0);
        assert!(stats.sigma_rho_sq[1] > 0.0);
        for m in &stats.mean_reduced {
            assert!((m.trace() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn vanishing_coupling_has_no_fluctuations() {
        // An explicit all-zero RRM spectrum gives W = 0 in every realization.
        let (sys, psi0) = small_setup();
        let spec = EnsembleSpec::rrm(vec![0.0; sys.dim()]);
        let stats =
            ensemble_statistics(&sys, &spec, &psi0, &uniform_times(10.0, 11), 5, 1).unwrap();
        assert!(stats.sigma_rho_sq.iter().all(|&s| s < 1e-28));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let (sys, psi0) = small_setup();
        let spec = EnsembleSpec::wigner(sys.dim() + 1, 0.2);
        assert!(matches!(
            ensemble_statistics(&sys, &spec, &psi0, &[1.0], 3, 0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn accumulator_matches_two_pass() {
        let (sys, psi0) = small_setup();
        let spec = EnsembleSpec::wigner(sys.dim(), 0.3);
        let times = [0.5, 3.0];
        let trajs = ensemble_trajectories(&sys, &spec, &psi0, &times, 7, 5).unwrap();
        let mut acc = MomentAccumulator::new();
        for t in &trajs {
            acc.push(&t.reduced_states);
        }
        for k in 0..times.len() {
            let mean = trajs
                .iter()
                .fold(ComplexMatrix::zeros(2, 2), |m, t| m.add(t.reduced_states[k].matrix()).unwrap())
                .scaled(C64::new(1.0 / 7.0, 0.0));
            let var = trajs
                .iter()
                .map(|t| frobenius_norm_sq(&t.reduced_states[k].matrix().sub(&mean).unwrap()))
                .sum::<f64>()
                / 6.0;
            assert!((acc.variance()[k] - var).abs() < 1e-14);
        }
    }

    #[test]
    fn scaling_single_row() {
        let setup = SystemSetup::two_level(4);
        let spec = EnsembleSpec::wigner(8, 0.2);
        let table = scaling_study(&setup, &spec, &[4], 1.0, None, 4, 0).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert!(table.ratio_checks.is_empty());
        assert!(table.monotone_decreasing);
    }

    #[test]
    fn scaling_rejects_unsorted() {
        let setup = SystemSetup::two_level(4);
        let spec = EnsembleSpec::wigner(8, 0.2);
        assert!(scaling_study(&setup, &spec, &[8, 4], 1.0, None, 4, 0).is_err());
    }
}
