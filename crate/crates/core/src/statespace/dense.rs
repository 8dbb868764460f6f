//! Dense `O(N³)` Gaussian conditioning, used as a reference for the chain.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::special::LN_2PI;

#[derive(Debug, Error, PartialEq)]
pub enum DenseError {
    #[error("dimension mismatch: gram is {gram}x{gram}, got {params} pseudo-observations")]
    Dimension { gram: usize, params: usize },
    #[error("linear system is singular")]
    Singular,
}

/// Posterior of `s ~ N(0, K)` given independent pseudo-observations with
/// natural parameters `(α̃_i, β̃_i)`:
/// `Σ = (K⁻¹ + diag β̃)⁻¹`, `μ = Σ α̃`.
///
/// Computed without inverting `K`, so vacuous sites (`β̃ = 0`) and singular
/// Gram matrices are fine.
pub fn batch_posterior(
    gram: &DMatrix<f64>,
    alpha: &[f64],
    beta: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>), DenseError> {
    let n = gram.nrows();
    if alpha.len() != n || beta.len() != n {
        return Err(DenseError::Dimension {
            gram: n,
            params: alpha.len().max(beta.len()),
        });
    }
    // Σ = K − K B½ (I + B½ K B½)⁻¹ B½ K
    let sb = DVector::from_iterator(n, beta.iter().map(|b| b.max(0.0).sqrt()));
    let mut inner = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            inner[(i, j)] += sb[i] * gram[(i, j)] * sb[j];
        }
    }
    let chol = Cholesky::new(inner).ok_or(DenseError::Singular)?;
    let mut kb = gram.clone();
    for j in 0..n {
        kb.column_mut(j).scale_mut(sb[j]);
    }
    // kb = K B½
    let solved = chol.solve(&kb.transpose());
    let cov = gram - &kb * solved;
    let cov = (&cov + cov.transpose()) * 0.5;
    let mean = &cov * DVector::from_column_slice(alpha);
    Ok((mean, cov))
}

/// `log N(μ̃ | 0, K + Σ̃)` over the sites with `β̃ > 0`.
pub fn log_evidence(gram: &DMatrix<f64>, alpha: &[f64], beta: &[f64]) -> Result<f64, DenseError> {
    let n = gram.nrows();
    if alpha.len() != n || beta.len() != n {
        return Err(DenseError::Dimension {
            gram: n,
            params: alpha.len().max(beta.len()),
        });
    }
    let idx: Vec<usize> = (0..n).filter(|&i| beta[i] > 0.0).collect();
    let m = idx.len();
    if m == 0 {
        return Ok(0.0);
    }
    let cov = DMatrix::from_fn(m, m, |r, c| {
        gram[(idx[r], idx[c])] + if r == c { 1.0 / beta[idx[r]] } else { 0.0 }
    });
    let y = DVector::from_iterator(m, idx.iter().map(|&i| alpha[i] / beta[i]));
    let chol = Cholesky::new(cov).ok_or(DenseError::Singular)?;
    let z = chol
        .l()
        .solve_lower_triangular(&y)
        .ok_or(DenseError::Singular)?;
    let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    Ok(-0.5 * (z.norm_squared() + logdet + m as f64 * LN_2PI))
}
