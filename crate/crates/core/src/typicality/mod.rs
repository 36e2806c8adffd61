//! Concentration diagnostics: gradient norms, ensemble fluctuations,
//! Poincaré tests and stationary statistics.

pub mod gradient;
pub mod poincare;
pub mod stationary;
pub mod statistics;

pub use gradient::{
    exact_commutator_norm_sq, gradient_report, gradient_upper_bound, hermitian_basis,
    numeric_gradient_norm_sq, GradientReport,
};
pub use poincare::{poincare_mc_test, PoincareTestReport, TestFunction};
pub use stationary::{default_window, stationary_p0_theory, stationary_window_stats, WindowStats};
pub use statistics::{
    ensemble_statistics, ensemble_trajectories, scaling_study, typicality_fraction, variance_bound,
    EnsembleStatistics, MomentAccumulator, ScalingTable,
};
