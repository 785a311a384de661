//! Eigenstructure of induced chains.
//!
//! Only eigenvalue moduli are exposed in reports. The second eigenvalue's
//! right eigenvector is available separately for the gradient lower bound.

use nalgebra::{Complex, DMatrix, DVector, Schur};
use serde::Serialize;

use crate::error::{Result, TreeMaxError};
use crate::linalg::{spectral_norm, stationary_vector};
use crate::mdp::InducedChain;

/// Chains with `|lambda_2|` at or above `1 - MIXING_GAP` are treated as non-mixing.
pub const MIXING_GAP: f64 = 1e-9;

/// Iteration budget for the Hessenberg-QR Schur iteration.
pub const MAX_SCHUR_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    /// Moduli of all eigenvalues, sorted descending.
    pub eigenvalue_moduli: Vec<f64>,
    pub lambda2_modulus: f64,
    /// `true` iff `lambda2_modulus < 1 - 1e-9`.
    pub mixing_flag: bool,
}

/// All eigenvalues of a square real matrix, ordered by modulus (descending),
/// with ties broken towards the eigenvalue closest to `1`.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, MAX_SCHUR_ITERATIONS).ok_or(
        TreeMaxError::EigenNonConvergence {
            iterations: MAX_SCHUR_ITERATIONS,
        },
    )?;
    let mut eigs: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    eigs.sort_by(|a, b| {
        b.norm()
            .partial_cmp(&a.norm())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| {
                let da = (a - Complex::new(1.0, 0.0)).norm();
                let db = (b - Complex::new(1.0, 0.0)).norm();
                da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    Ok(eigs)
}

pub fn analyze_spectrum(chain: &InducedChain) -> Result<SpectralReport> {
    analyze_matrix(chain.transition())
}

/// Spectral report for any square row-stochastic matrix.
pub fn analyze_matrix(m: &DMatrix<f64>) -> Result<SpectralReport> {
    let eigs = sorted_eigenvalues(m)?;
    let mut moduli: Vec<f64> = eigs.iter().map(|z| z.norm()).collect();
    moduli.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let lambda2_modulus = moduli.get(1).copied().unwrap_or(0.0).min(1.0);
    Ok(SpectralReport {
        mixing_flag: lambda2_modulus < 1.0 - MIXING_GAP,
        lambda2_modulus,
        eigenvalue_moduli: moduli,
    })
}

/// The second eigenvalue (by modulus) and a unit right eigenvector for it.
///
/// For a single-state chain the pair is `(0, e_1)`.
pub fn second_eigenpair(m: &DMatrix<f64>) -> Result<(Complex<f64>, DVector<Complex<f64>>)> {
    let n = m.nrows();
    let eigs = sorted_eigenvalues(m)?;
    if n < 2 {
        let mut e = DVector::zeros(n.max(1));
        e[0] = Complex::new(1.0, 0.0);
        return Ok((Complex::new(0.0, 0.0), e));
    }
    let lambda = eigs[1];
    let shifted = DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { lambda } else { Complex::new(0.0, 0.0) };
        Complex::new(m[(i, j)], 0.0) - diag
    });
    let svd = shifted.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| TreeMaxError::LinearSolve("SVD did not return V^H".into()))?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &s)| if s < best.1 { (i, s) } else { best });
    let mut u = DVector::from_fn(n, |j, _| v_t[(idx, j)].conj());
    let norm = u.norm();
    u /= Complex::new(norm, 0.0);
    Ok((lambda, u))
}

/// `|| (P^pi)^(d-1) - 1 mu^T ||_2`, the distance of the `(d-1)`-step kernel
/// from its rank-one limit.
pub fn power_remainder(chain: &InducedChain, power: usize) -> Result<f64> {
    if power == 0 {
        return Err(TreeMaxError::InvalidConfig(
            "power_remainder needs d >= 1".into(),
        ));
    }
    let report = analyze_spectrum(chain)?;
    if !report.mixing_flag {
        return Err(TreeMaxError::NonMixing {
            lambda2: report.lambda2_modulus,
        });
    }
    let p = chain.transition();
    let n = p.nrows();
    let mu = stationary_vector(p)?;
    let limit = DMatrix::from_fn(n, n, |_, j| mu[j]);
    if power == 1 {
        return Ok(spectral_norm(&(DMatrix::identity(n, n) - limit)));
    }
    // (P - 1 mu^T)^k = P^k - 1 mu^T since P 1 = 1 and mu^T P = mu^T.
    let deflated = p - &limit;
    let mut acc = deflated.clone();
    for _ in 1..power - 1 {
        acc = &acc * &deflated;
    }
    Ok(spectral_norm(&acc))
}
