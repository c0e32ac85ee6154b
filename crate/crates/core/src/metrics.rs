//! Error statistics and the Cramér–Rao bound for the QuERLoc estimator.

use std::time::Duration;

use nalgebra::DMatrix;

use crate::localize::LinearSystem;
use crate::model::Position;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub truth: Position,
    pub estimate: Position,
    pub error: f64,
    pub solve_time: Duration,
}

impl TrialRecord {
    pub fn new(trial: usize, truth: Position, estimate: Position, solve_time: Duration) -> Self {
        let error = estimate.dist(&truth);
        Self {
            trial,
            truth,
            estimate,
            error,
            solve_time,
        }
    }
}

/// `√(mean e²)` over raw errors, summed in slice order.
pub fn rmse_of(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Empty("no records"));
    }
    let ss: f64 = errors.iter().map(|e| e * e).sum();
    Ok((ss / errors.len() as f64).sqrt())
}

pub fn rmse(records: &[TrialRecord]) -> Result<f64> {
    let errors: Vec<f64> = records.iter().map(|r| r.error).collect();
    rmse_of(&errors)
}

/// Standard error of an RMSE estimate, by the delta method on the mean of `e²`.
pub fn rmse_std_error(errors: &[f64]) -> Result<f64> {
    let n = errors.len();
    if n < 2 {
        return Err(Error::Empty("need at least two records"));
    }
    let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
    let mean = sq.iter().sum::<f64>() / n as f64;
    let var = sq.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64;
    let se_mean = (var / n as f64).sqrt();
    if mean == 0.0 {
        return Ok(0.0);
    }
    Ok(se_mean / (2.0 * mean.sqrt()))
}

/// Empirical CDF of the errors evaluated at each grid point (`P(e ≤ g)`).
pub fn error_cdf_of(errors: &[f64], grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if errors.is_empty() {
        return Err(Error::Empty("no records"));
    }
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidParameter("CDF grid must be sorted".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(grid
        .iter()
        .map(|&g| {
            let count = sorted.partition_point(|e| *e <= g);
            (g, count as f64 / n)
        })
        .collect())
}

pub fn error_cdf(records: &[TrialRecord], grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    let errors: Vec<f64> = records.iter().map(|r| r.error).collect();
    error_cdf_of(&errors, grid)
}

/// `((1+3ρ²)/ρ²) Lᵀ W̃ L`.
pub fn fisher_matrix(sys: &LinearSystem, rho: f64) -> Result<DMatrix<f64>> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::UndefinedInformation);
    }
    let scale = (1.0 + 3.0 * rho * rho) / (rho * rho);
    let f = sys.normal_matrix() * scale;
    // Symmetrize away rounding asymmetry.
    Ok((&f + f.transpose()) * 0.5)
}

/// `Tr F⁻¹` via the eigenvalues of the symmetric Fisher matrix.
pub fn fisher_trace_inverse(f: &DMatrix<f64>) -> Result<f64> {
    let eig = f.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if eig
        .eigenvalues
        .iter()
        .any(|v| !(*v > 0.0) || max / v > crate::linalg::MAX_CONDITION)
    {
        return Err(Error::SingularGeometry("singular Fisher matrix".into()));
    }
    Ok(eig.eigenvalues.iter().map(|v| 1.0 / v).sum())
}

/// `√(mean_t Tr F_t⁻¹)`.
pub fn crlb_rmse_bound(systems: &[LinearSystem], rho: f64) -> Result<f64> {
    if systems.is_empty() {
        return Err(Error::Empty("no systems"));
    }
    let mut total = 0.0;
    for sys in systems {
        total += fisher_trace_inverse(&fisher_matrix(sys, rho)?)?;
    }
    Ok((total / systems.len() as f64).sqrt())
}

/// Same as [`crlb_rmse_bound`] from precomputed per-trial `Tr F⁻¹` values.
pub fn crlb_from_traces(traces: &[f64]) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::Empty("no systems"));
    }
    Ok((traces.iter().sum::<f64>() / traces.len() as f64).sqrt())
}
