//! Long-time behaviour of single trajectories.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, Normal};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};

/// Minimum `sigma_w * t_max` for the window `[t_max/2, t_max]` to sit past
/// the relaxation transient.
pub const MIN_RELAXATION_PRODUCT: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub mean: f64,
    /// Population standard deviation over the window samples.
    pub std: f64,
    pub n_samples: usize,
}

/// `[t_max / 2, t_max]`.
pub fn default_window(t_max: f64) -> (f64, f64) {
    (0.5 * t_max, t_max)
}

pub fn window_past_transient(sigma_w: f64, t_max: f64) -> bool {
    sigma_w * t_max >= MIN_RELAXATION_PRODUCT
}

/// Time mean and std of every population over `window`, inclusive.
pub fn stationary_window_stats(traj: &Trajectory, window: (f64, f64)) -> Result<Vec<WindowStats>> {
    let idx: Vec<usize> = traj
        .times
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= window.0 && t <= window.1)
        .map(|(k, _)| k)
        .collect();
    if idx.is_empty() {
        return Err(Error::Config(format!(
            "stationary window [{}, {}] contains no time points",
            window.0, window.1
        )));
    }
    let n = idx.len() as f64;
    Ok((0..traj.dim_s())
        .map(|s| {
            let mean = idx.iter().map(|&k| traj.populations[k][s]).sum::<f64>() / n;
            let var = idx
                .iter()
                .map(|&k| (traj.populations[k][s] - mean).powi(2))
                .sum::<f64>()
                / n;
            WindowStats {
                mean,
                std: var.sqrt(),
                n_samples: idx.len(),
            }
        })
        .collect())
}

/// Ground-state population of a two-level system with gap `gap` in an
/// environment of Gaussian density of states (width `sigma_e`) at total
/// energy `epsilon_e + gap`, under equal a priori weighting of the states in
/// the energy shell: `phi(eps + gap) / (phi(eps) + phi(eps + gap))`.
pub fn stationary_p0_theory(epsilon_e: f64, gap: f64, sigma_e: f64) -> f64 {
    let phi = Normal::new(0.0, sigma_e).expect("sigma_e > 0");
    let ground = phi.pdf(epsilon_e + gap);
    let excited = phi.pdf(epsilon_e);
    ground / (ground + excited)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::PhysicalityReport;
    use crate::linalg::HermitianOperator;

    fn fake(populations: Vec<Vec<f64>>, times: Vec<f64>) -> Trajectory {
        Trajectory {
            reduced_states: populations
                .iter()
                .map(|p| HermitianOperator::from_real_diagonal(p))
                .collect(),
            populations,
            times,
            physicality: PhysicalityReport::default(),
        }
    }

    #[test]
    fn theory_value() {
        let p0 = stationary_p0_theory(-1.27, 1.0, 1.0);
        assert!((p0 - 0.6836).abs() < 1e-3, "{p0}");
        assert!((stationary_p0_theory(-0.5, 1.0, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn window_stats() {
        let t = fake(
            vec![vec![0.0, 1.0], vec![0.2, 0.8], vec![0.6, 0.4]],
            vec![0.0, 1.0, 2.0],
        );
        let s = stationary_window_stats(&t, (1.0, 2.0)).unwrap();
        assert!((s[0].mean - 0.4).abs() < 1e-15);
        assert!((s[0].std - 0.2).abs() < 1e-15);
        assert_eq!(s[1].n_samples, 2);
    }

    #[test]
    fn empty_window_rejected() {
        let t = fake(vec![vec![1.0, 0.0]], vec![0.0]);
        assert!(stationary_window_stats(&t, (1.0, 2.0)).is_err());
    }

    #[test]
    fn default_window_and_transient() {
        assert_eq!(default_window(200.0), (100.0, 200.0));
        assert!(window_past_transient(0.2, 100.0));
        assert!(!window_past_transient(0.2, 50.0));
    }
}
