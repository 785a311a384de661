//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TreeMaxError};

/// Tolerance for "sums to one" checks on stored distributions.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Entries below this magnitude are clamped to zero before renormalizing.
pub const CLAMP_EPS: f64 = 1e-15;

/// Max-shifted log-sum-exp.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Softmax of `logits`, returning the probabilities and the log partition.
pub fn softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    let lse = log_sum_exp(logits);
    let probs = logits.iter().map(|l| (l - lse).exp()).collect::<Vec<_>>();
    // Renormalize so the sum is 1 to the last ulp.
    let total: f64 = probs.iter().sum();
    (probs.into_iter().map(|p| p / total).collect(), lse)
}

/// Clamp tiny negatives to zero and rescale the slice to sum to one.
pub fn renormalize(row: &mut [f64]) {
    for v in row.iter_mut() {
        if *v < 0.0 && *v > -CLAMP_EPS {
            *v = 0.0;
        }
    }
    let total: f64 = row.iter().sum();
    if total > 0.0 {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
}

/// Checks that `row` is a probability vector within [`SIMPLEX_TOL`].
pub fn check_simplex(row: &[f64], location: impl FnOnce() -> String) -> Result<()> {
    for (i, &p) in row.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(TreeMaxError::InvalidDistribution {
                location: location(),
                reason: format!("entry {i} is {p}"),
            });
        }
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(TreeMaxError::InvalidDistribution {
            location: location(),
            reason: format!("sums to {total:.17}"),
        });
    }
    Ok(())
}

/// Subtracts each row's mean so that every row sums to zero.
///
/// Applied after each right-multiplication by a stochastic matrix when
/// propagating zero-sum rows: the exact rows sum to zero, and rounding drift
/// in the all-ones direction would otherwise never decay.
pub fn project_rows_zero_sum(m: &mut DMatrix<f64>) {
    let cols = m.ncols() as f64;
    for mut row in m.row_iter_mut() {
        let mean = row.sum() / cols;
        row.add_scalar_mut(-mean);
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Stationary vector of a row-stochastic matrix assumed to have a unique one.
///
/// Solves `(P^T - I) mu = 0` with the last equation replaced by `sum(mu) = 1`.
pub fn stationary_vector(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    let mut system = p.transpose() - DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        system[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    let mut mu = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| TreeMaxError::LinearSolve("stationary system is singular".into()))?;
    renormalize(mu.as_mut_slice());
    Ok(mu)
}

/// `max_i |sum_j m[i,j] - 1|` for a square or rectangular stochastic matrix.
pub fn row_sum_defect(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max)
}
