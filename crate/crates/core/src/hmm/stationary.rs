use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Stationary distribution `rho = rho * Gamma` of a row-stochastic matrix.
///
/// Solves `(I - Gamma + U)^T x = 1`, where `U` is the all-ones matrix; the
/// added rank-one term replaces the redundant balance equation with the
/// normalisation constraint. Singular systems (reducible chains) are reported
/// as non-unique.
pub fn stationary_distribution(tpm: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = tpm.nrows();
    if n == 0 || tpm.ncols() != n {
        return Err(Error::input(format!(
            "transition matrix must be square and non-empty, got {}x{}",
            tpm.nrows(),
            tpm.ncols()
        )));
    }
    for (i, row) in tpm.row_iter().enumerate() {
        let s: f64 = row.iter().sum();
        if row.iter().any(|v| !(*v >= 0.0)) || (s - 1.0).abs() > 1e-10 {
            return Err(Error::input(format!("row {i} is not a probability vector")));
        }
    }
    let system = (DMatrix::identity(n, n) - tpm).add_scalar(1.0).transpose();
    let lu = system.lu();
    let u = lu.u();
    let scale = u.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min_pivot = u.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(min_pivot > 1e-12 * scale.max(1.0)) {
        return Err(Error::NonUnique(format!(
            "balance equations are singular (smallest pivot {min_pivot:.3e})"
        )));
    }
    let x = lu
        .solve(&DVector::from_element(n, 1.0))
        .ok_or_else(|| Error::NonUnique("balance equations are singular".into()))?;
    // Entries are non-negative in exact arithmetic; clamp round-off at zero.
    let mut rho: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    let sum: f64 = rho.iter().sum();
    rho.iter_mut().for_each(|v| *v /= sum);
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn symmetric_chain_is_uniform() {
        let g = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]);
        let rho = stationary_distribution(&g).unwrap();
        assert_abs_diff_eq!(rho[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(rho[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn two_state_balance() {
        // 0.5 rho_1 = 0.2 rho_2  =>  rho = (2/7, 5/7)
        let g = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.2, 0.8]);
        let rho = stationary_distribution(&g).unwrap();
        assert_abs_diff_eq!(rho[0], 2.0 / 7.0, epsilon = 1e-14);
        assert_abs_diff_eq!(rho[1], 5.0 / 7.0, epsilon = 1e-14);
    }

    #[test]
    fn identity_is_not_unique() {
        let g = DMatrix::identity(3, 3);
        assert!(matches!(stationary_distribution(&g), Err(Error::NonUnique(_))));
    }

    #[test]
    fn rejects_non_stochastic_input() {
        let g = DMatrix::from_row_slice(2, 2, &[0.5, 0.6, 0.2, 0.8]);
        assert!(stationary_distribution(&g).is_err());
    }
}
