//! CSV and JSON artifacts.
//!
//! Floats are written in Rust's shortest round-trip form, so identical
//! results give byte-identical files.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::dynamics::Trajectory;
use crate::error::Result;
use crate::typicality::gradient::GradientReport;
use crate::typicality::poincare::PoincareTestReport;
use crate::typicality::statistics::{EnsembleStatistics, ScalingTable};

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_path(path)?)
}

/// Columns: `time, p_0..p_{d-1}, re_rho_i_j, im_rho_i_j (i < j), seed, stream`.
pub fn trajectory_header(dim_s: usize) -> Vec<String> {
    let mut h = vec!["time".to_string()];
    h.extend((0..dim_s).map(|s| format!("p_{s}")));
    for i in 0..dim_s {
        for j in (i + 1)..dim_s {
            h.push(format!("re_rho_{i}_{j}"));
            h.push(format!("im_rho_{i}_{j}"));
        }
    }
    h.push("seed".into());
    h.push("stream".into());
    h
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory, seed: u64, stream: u64) -> Result<()> {
    let dim_s = traj.dim_s();
    let mut w = writer(path)?;
    w.write_record(trajectory_header(dim_s))?;
    for (k, &t) in traj.times.iter().enumerate() {
        let rho = &traj.reduced_states[k];
        let mut row = vec![t.to_string()];
        row.extend(traj.populations[k].iter().map(|p| p.to_string()));
        for i in 0..dim_s {
            for j in (i + 1)..dim_s {
                row.push(rho[(i, j)].re.to_string());
                row.push(rho[(i, j)].im.to_string());
            }
        }
        row.push(seed.to_string());
        row.push(stream.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: `time, sigma_rho_sq, sigma_rho_sq_se, bound_eq3, exceeds_bound, n, mean_p_0..`.
pub fn write_statistics_csv(path: &Path, stats: &EnsembleStatistics) -> Result<()> {
    let dim_s = stats.mean_reduced.first().map_or(0, |m| m.dim());
    let mut w = writer(path)?;
    let mut header: Vec<String> = ["time", "sigma_rho_sq", "sigma_rho_sq_se", "bound_eq3", "exceeds_bound", "n"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..dim_s).map(|s| format!("mean_p_{s}")));
    w.write_record(&header)?;
    for (k, &t) in stats.times.iter().enumerate() {
        let mut row = vec![
            t.to_string(),
            stats.sigma_rho_sq[k].to_string(),
            stats.sigma_rho_sq_se[k].to_string(),
            stats.variance_bound[k].to_string(),
            stats.exceeds_bound[k].to_string(),
            stats.n_realizations.to_string(),
        ];
        row.extend((0..dim_s).map(|s| stats.mean_reduced[k][(s, s)].re.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: `dim_e, time, sigma_rho_sq, sigma_rho_sq_se, bound_eq3, speckle_std, n`.
pub fn write_scaling_csv(path: &Path, table: &ScalingTable) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["dim_e", "time", "sigma_rho_sq", "sigma_rho_sq_se", "bound_eq3", "speckle_std", "n"])?;
    for r in &table.rows {
        w.write_record([
            r.dim_e.to_string(),
            r.time.to_string(),
            r.sigma_rho_sq.to_string(),
            r.sigma_rho_sq_se.to_string(),
            r.variance_bound.to_string(),
            r.speckle_std_p0.map_or(String::new(), |x| x.to_string()),
            r.n_realizations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientRow {
    pub dim_e: usize,
    pub instance: u64,
    #[serde(flatten)]
    pub report: GradientReport,
    pub chain_holds: bool,
}

pub fn write_gradient_csv(path: &Path, rows: &[GradientRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "dim_e",
        "instance",
        "tau",
        "numeric_gradient_norm_sq",
        "numeric_gradient_norm_sq_half_step",
        "exact_commutator_norm_sq",
        "analytic_upper_bound",
        "chain_holds",
    ])?;
    for r in rows {
        let g = &r.report;
        w.write_record([
            r.dim_e.to_string(),
            r.instance.to_string(),
            g.tau.to_string(),
            g.numeric_gradient_norm_sq.to_string(),
            g.numeric_gradient_norm_sq_half_step.to_string(),
            g.exact_commutator_norm_sq.to_string(),
            g.analytic_upper_bound.to_string(),
            r.chain_holds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_poincare_csv(path: &Path, reports: &[(usize, PoincareTestReport)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "function",
        "dim",
        "n",
        "variance",
        "variance_se",
        "mean_gradient_sq",
        "mean_gradient_sq_se",
        "constant",
        "margin",
        "margin_se",
    ])?;
    for (dim, r) in reports {
        w.write_record([
            r.function.clone(),
            dim.to_string(),
            r.n.to_string(),
            r.variance.to_string(),
            r.variance_se.to_string(),
            r.mean_gradient_sq.to_string(),
            r.mean_gradient_sq_se.to_string(),
            r.constant.to_string(),
            r.margin.to_string(),
            r.margin_se.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}
