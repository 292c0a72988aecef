use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multinomial-logit coefficients of a covariate-dependent transition matrix.
///
/// For every ordered off-diagonal pair `(i, j)` the linear predictor is
/// `eta_ij = beta_0 + sum_p beta_p * z_p`; diagonal predictors are fixed at 0.
/// Pairs are stored row-major, skipping the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CoefficientsRepr", into = "CoefficientsRepr")]
pub struct TransitionCoefficients {
    n_states: usize,
    n_covariates: usize,
    beta: Vec<f64>,
}

impl TransitionCoefficients {
    /// `beta` holds `N(N-1)` blocks of `P+1` values in pair order.
    pub fn new(n_states: usize, n_covariates: usize, beta: Vec<f64>) -> Result<Self> {
        if n_states < 2 {
            return Err(Error::input(format!(
                "a transition model needs at least 2 states, got {n_states}"
            )));
        }
        let expected = n_states * (n_states - 1) * (n_covariates + 1);
        if beta.len() != expected {
            return Err(Error::Dimension {
                what: "transition coefficients",
                expected,
                actual: beta.len(),
            });
        }
        if let Some(pos) = beta.iter().position(|b| !b.is_finite()) {
            return Err(Error::input(format!(
                "transition coefficient {pos} is not finite"
            )));
        }
        Ok(Self {
            n_states,
            n_covariates,
            beta,
        })
    }

    pub fn zeros(n_states: usize, n_covariates: usize) -> Result<Self> {
        let len = n_states * n_states.saturating_sub(1) * (n_covariates + 1);
        Self::new(n_states, n_covariates, vec![0.0; len])
    }

    /// Builds coefficients from a closure returning the vector for pair `(i, j)`.
    pub fn from_fn(
        n_states: usize,
        n_covariates: usize,
        mut f: impl FnMut(usize, usize) -> Vec<f64>,
    ) -> Result<Self> {
        let mut beta = Vec::with_capacity(n_states * n_states * (n_covariates + 1));
        for i in 0..n_states {
            for j in 0..n_states {
                if i != j {
                    beta.extend(f(i, j));
                }
            }
        }
        Self::new(n_states, n_covariates, beta)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.beta
    }

    fn pair_offset(&self, i: usize, j: usize) -> usize {
        assert!(i != j && i < self.n_states && j < self.n_states);
        let pair = i * (self.n_states - 1) + if j > i { j - 1 } else { j };
        pair * (self.n_covariates + 1)
    }

    /// Coefficient vector `(beta_0, beta_1, .., beta_P)` for the pair `i -> j`.
    pub fn pair(&self, i: usize, j: usize) -> &[f64] {
        let off = self.pair_offset(i, j);
        &self.beta[off..off + self.n_covariates + 1]
    }

    pub fn pair_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let off = self.pair_offset(i, j);
        let width = self.n_covariates + 1;
        &mut self.beta[off..off + width]
    }

    /// Relabels states so that new state `k` is old state `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        for i in 0..self.n_states {
            for j in 0..self.n_states {
                if i != j {
                    out.pair_mut(i, j)
                        .copy_from_slice(self.pair(perm[i], perm[j]));
                }
            }
        }
        out
    }

    /// Writes the linear predictors of row `i` into `eta` (length N).
    #[inline]
    pub(crate) fn row_predictors(&self, i: usize, z: &[f64], eta: &mut [f64]) {
        let width = self.n_covariates + 1;
        let mut off = i * (self.n_states - 1) * width;
        for (j, e) in eta.iter_mut().enumerate() {
            if j == i {
                *e = 0.0;
                continue;
            }
            let b = &self.beta[off..off + width];
            let mut acc = b[0];
            for (bp, zp) in b[1..].iter().zip(z) {
                acc += bp * zp;
            }
            *e = acc;
            off += width;
        }
    }

    fn check_covariates(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.n_covariates {
            return Err(Error::Dimension {
                what: "covariate row",
                expected: self.n_covariates,
                actual: z.len(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("covariate row contains non-finite values"));
        }
        Ok(())
    }

    /// Fills a row-major N x N buffer with the transition matrix at `z`.
    /// Uses a max-shifted softmax per row.
    pub(crate) fn fill_tpm(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.n_states;
        debug_assert_eq!(out.len(), n * n);
        for i in 0..n {
            let row = &mut out[i * n..(i + 1) * n];
            self.row_predictors(i, z, row);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(Error::Overflow { row: i });
            }
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            if !sum.is_finite() || sum <= 0.0 {
                return Err(Error::Overflow { row: i });
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        Ok(())
    }

    /// Row-major log transition probabilities at `z`.
    pub(crate) fn fill_log_tpm(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.n_states;
        for i in 0..n {
            let row = &mut out[i * n..(i + 1) * n];
            self.row_predictors(i, z, row);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(Error::Overflow { row: i });
            }
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Ok(())
    }
}

/// Transition probability matrix `Gamma(z)` for a covariate row `z`.
///
/// Entry `(i, j)` is `exp(eta_ij) / sum_k exp(eta_ik)` with `eta_ii = 0`.
pub fn tpm_from_covariates(coeffs: &TransitionCoefficients, z: &[f64]) -> Result<DMatrix<f64>> {
    coeffs.check_covariates(z)?;
    let n = coeffs.n_states;
    let mut buf = vec![0.0; n * n];
    coeffs.fill_tpm(z, &mut buf)?;
    Ok(DMatrix::from_row_slice(n, n, &buf))
}

#[derive(Serialize, Deserialize)]
struct PairRepr {
    from: usize,
    to: usize,
    beta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CoefficientsRepr {
    n_states: usize,
    n_covariates: usize,
    /// 1-based state labels.
    pairs: Vec<PairRepr>,
}

impl From<TransitionCoefficients> for CoefficientsRepr {
    fn from(c: TransitionCoefficients) -> Self {
        let mut pairs = Vec::new();
        for i in 0..c.n_states {
            for j in 0..c.n_states {
                if i != j {
                    pairs.push(PairRepr {
                        from: i + 1,
                        to: j + 1,
                        beta: c.pair(i, j).to_vec(),
                    });
                }
            }
        }
        CoefficientsRepr {
            n_states: c.n_states,
            n_covariates: c.n_covariates,
            pairs,
        }
    }
}

impl TryFrom<CoefficientsRepr> for TransitionCoefficients {
    type Error = Error;

    fn try_from(r: CoefficientsRepr) -> Result<Self> {
        let mut out = TransitionCoefficients::zeros(r.n_states, r.n_covariates)?;
        let mut seen = vec![false; r.n_states * r.n_states];
        for p in r.pairs {
            if p.from == 0 || p.to == 0 || p.from > r.n_states || p.to > r.n_states || p.from == p.to
            {
                return Err(Error::input(format!(
                    "invalid transition pair {} -> {}",
                    p.from, p.to
                )));
            }
            if p.beta.len() != r.n_covariates + 1 {
                return Err(Error::Dimension {
                    what: "transition pair coefficients",
                    expected: r.n_covariates + 1,
                    actual: p.beta.len(),
                });
            }
            seen[(p.from - 1) * r.n_states + p.to - 1] = true;
            out.pair_mut(p.from - 1, p.to - 1).copy_from_slice(&p.beta);
        }
        let missing = (0..r.n_states * r.n_states)
            .filter(|&k| k / r.n_states != k % r.n_states && !seen[k])
            .count();
        if missing > 0 {
            return Err(Error::input(format!(
                "{missing} off-diagonal transition pairs are missing"
            )));
        }
        TransitionCoefficients::new(out.n_states, out.n_covariates, out.beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_coefficients_give_uniform_rows() {
        let c = TransitionCoefficients::zeros(3, 2).unwrap();
        let g = tpm_from_covariates(&c, &[1.7, -4.0]).unwrap();
        for v in g.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn symmetric_two_state() {
        let c = TransitionCoefficients::zeros(2, 0).unwrap();
        let g = tpm_from_covariates(&c, &[]).unwrap();
        assert_eq!(g, DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]));
    }

    #[test]
    fn logit_one_ninth_gives_persistent_chain() {
        // exp(ln(1/9)) / (1 + exp(ln(1/9))) = (1/9) / (10/9) = 0.1
        let b = (1.0f64 / 9.0).ln();
        let c = TransitionCoefficients::new(2, 0, vec![b, b]).unwrap();
        let g = tpm_from_covariates(&c, &[]).unwrap();
        assert_abs_diff_eq!(g[(0, 0)], 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(g[(0, 1)], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(g[(1, 0)], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(g[(1, 1)], 0.9, epsilon = 1e-15);
    }

    #[test]
    fn pair_layout_skips_diagonal() {
        let c = TransitionCoefficients::from_fn(3, 1, |i, j| vec![(10 * i + j) as f64, 0.5])
            .unwrap();
        assert_eq!(c.pair(0, 1), &[1.0, 0.5]);
        assert_eq!(c.pair(2, 1), &[21.0, 0.5]);
        assert_eq!(c.pair(1, 0), &[10.0, 0.5]);
    }

    #[test]
    fn permutation_relabels_pairs() {
        let c = TransitionCoefficients::from_fn(3, 0, |i, j| vec![(10 * i + j) as f64]).unwrap();
        let p = c.permuted(&[2, 0, 1]);
        // new 0 = old 2, new 1 = old 0
        assert_eq!(p.pair(0, 1), c.pair(2, 0));
        let g_old = tpm_from_covariates(&c, &[]).unwrap();
        let g_new = tpm_from_covariates(&p, &[]).unwrap();
        let perm = [2, 0, 1];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(g_new[(i, j)], g_old[(perm[i], perm[j])], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let c = TransitionCoefficients::zeros(2, 1).unwrap();
        assert!(matches!(
            tpm_from_covariates(&c, &[]),
            Err(Error::Dimension { .. })
        ));
        assert!(TransitionCoefficients::new(2, 1, vec![0.0; 3]).is_err());
        assert!(TransitionCoefficients::zeros(1, 0).is_err());
    }

    #[test]
    fn extreme_predictors_stay_finite() {
        let c = TransitionCoefficients::new(2, 1, vec![0.0, 400.0, 0.0, -400.0]).unwrap();
        let g = tpm_from_covariates(&c, &[3.0]).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(g[(0, 1)], 1.0, epsilon = 1e-15);
        assert!(tpm_from_covariates(&c, &[f64::NAN]).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let c = TransitionCoefficients::from_fn(3, 1, |i, j| vec![i as f64 - 0.3, j as f64 * 0.1])
            .unwrap();
        let s = serde_json::to_string(&c).unwrap();
        let back: TransitionCoefficients = serde_json::from_str(&s).unwrap();
        assert_eq!(c, back);
    }
}
