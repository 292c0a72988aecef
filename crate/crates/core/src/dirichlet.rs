//! Penalised B-spline Dirichlet regression of state probabilities on a
//! covariate: `delta_t ~ Dirichlet(alpha_t)`, `log alpha_ti = b(z_t)' c_i`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::hmm::StateProbSeries;
use crate::occupancy::{quantile_sorted, Method, OccupancyCurve};

/// Trigamma function via upward recurrence and the asymptotic series.
pub fn trigamma(x: f64) -> f64 {
    if x <= 0.0 && x == x.floor() {
        return f64::NAN;
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    acc + r
        + 0.5 * r2
        + r * r2 * (1.0 / 6.0 - r2 * (1.0 / 30.0 - r2 * (1.0 / 42.0 - r2 * (1.0 / 30.0 - r2 * 5.0 / 66.0))))
}

/// Log density of `Dirichlet(alpha)` at an interior point `x`.
pub fn dirichlet_logpdf(alpha: &[f64], x: &[f64]) -> Result<f64> {
    if alpha.len() != x.len() || alpha.is_empty() {
        return Err(Error::Dimension {
            what: "dirichlet point",
            expected: alpha.len(),
            actual: x.len(),
        });
    }
    if alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(Error::input("dirichlet concentrations must be positive"));
    }
    if x.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
        return Err(Error::Domain(format!(
            "dirichlet point {x:?} is not in the open simplex; clip it first"
        )));
    }
    let s: f64 = x.iter().sum();
    if (s - 1.0).abs() > 1e-8 {
        return Err(Error::Domain(format!("dirichlet point sums to {s}, not 1")));
    }
    let a0: f64 = alpha.iter().sum();
    Ok(ln_gamma(a0)
        + alpha
            .iter()
            .zip(x)
            .map(|(a, v)| (a - 1.0) * v.ln() - ln_gamma(*a))
            .sum::<f64>())
}

/// Clamps every component to `[eps, 1 - eps]` and renormalises.
pub fn clip_simplex(x: &[f64], eps: f64) -> Vec<f64> {
    if x.iter().all(|v| *v >= eps && *v <= 1.0 - eps) {
        return x.to_vec();
    }
    let c: Vec<f64> = x.iter().map(|v| v.clamp(eps, 1.0 - eps)).collect();
    let s: f64 = c.iter().sum();
    c.into_iter().map(|v| v / s).collect()
}

/// Cubic B-splines on equally spaced knots spanning `[lo, hi]`, with a
/// second-order difference penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    lo: f64,
    hi: f64,
    dim: usize,
}

impl SplineBasis {
    pub fn new(lo: f64, hi: f64, dim: usize) -> Result<Self> {
        if dim < 4 {
            return Err(Error::input(format!("cubic spline basis needs dimension >= 4, got {dim}")));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::input(format!("spline range [{lo}, {hi}] is invalid")));
        }
        Ok(Self { lo, hi, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.dim - 3) as f64
    }

    /// Full knot vector, `dim + 4` knots, three beyond each end of the range.
    pub fn knots(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.dim + 4)
            .map(|j| self.lo + (j as f64 - 3.0) * h)
            .collect()
    }

    pub fn contains(&self, z: f64) -> bool {
        z >= self.lo && z <= self.hi
    }

    /// Basis row `b(z)`; refuses points outside the fitted range.
    pub fn evaluate(&self, z: f64) -> Result<Vec<f64>> {
        if !self.contains(z) {
            return Err(Error::Extrapolation {
                z,
                lo: self.lo,
                hi: self.hi,
            });
        }
        let mut row = vec![0.0; self.dim];
        self.fill_row(z, &mut row);
        Ok(row)
    }

    /// Uniform cubic B-spline values; only four are non-zero.
    fn fill_row(&self, z: f64, row: &mut [f64]) {
        let h = self.spacing();
        let u = (z - self.lo) / h;
        let seg = (u.floor() as usize).min(self.dim - 4);
        let t = u - seg as f64;
        let s = 1.0 - t;
        row.iter_mut().for_each(|v| *v = 0.0);
        row[seg] = s * s * s / 6.0;
        row[seg + 1] = (3.0 * t * t * t - 6.0 * t * t + 4.0) / 6.0;
        row[seg + 2] = (-3.0 * t * t * t + 3.0 * t * t + 3.0 * t + 1.0) / 6.0;
        row[seg + 3] = t * t * t / 6.0;
    }

    /// `D'D` for the second-difference operator `D`.
    pub fn penalty(&self) -> DMatrix<f64> {
        let k = self.dim;
        let d = DMatrix::from_fn(k - 2, k, |r, c| match c as isize - r as isize {
            0 | 2 => 1.0,
            1 => -2.0,
            _ => 0.0,
        });
        d.transpose() * d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DirichletConfig {
    pub basis_dim: usize,
    /// Candidate `log10(lambda)` values.
    pub log10_lambda_grid: Vec<f64>,
    pub folds: usize,
    pub burn_in: usize,
    pub epsilon: f64,
    /// Quantiles of the training covariate spanned by the basis.
    pub range_quantiles: (f64, f64),
    pub max_iter: usize,
    pub tol: f64,
    /// Skip cross-validation and use these per-state values.
    pub lambdas: Option<Vec<f64>>,
}

impl Default for DirichletConfig {
    fn default() -> Self {
        Self {
            basis_dim: 10,
            log10_lambda_grid: (-3..=4).map(f64::from).collect(),
            folds: 5,
            burn_in: 100,
            epsilon: 1e-6,
            range_quantiles: (0.005, 0.995),
            max_iter: 200,
            tol: 1e-8,
            lambdas: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletSmoothFit {
    pub basis: SplineBasis,
    /// One coefficient vector of length `K` per state.
    pub coefficients: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
    pub penalized_loglik: f64,
    pub epsilon: f64,
    pub converged: bool,
    pub n_obs: usize,
}

impl DirichletSmoothFit {
    pub fn n_states(&self) -> usize {
        self.coefficients.len()
    }

    /// `alpha(z) = exp(f(z))`.
    pub fn alpha(&self, z: f64) -> Result<Vec<f64>> {
        let b = self.basis.evaluate(z)?;
        Ok(self
            .coefficients
            .iter()
            .map(|c| c.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>().exp())
            .collect())
    }

    /// Sum over states of `c_i' P c_i`.
    pub fn roughness(&self) -> f64 {
        let p = self.basis.penalty();
        self.coefficients
            .iter()
            .map(|c| {
                let v = DVector::from_column_slice(c);
                (v.transpose() * &p * &v)[(0, 0)]
            })
            .sum()
    }
}

/// Training data on the working scale: basis rows and clipped log responses.
#[derive(Debug, Clone)]
pub(crate) struct Problem {
    n: usize,
    k: usize,
    rows: Vec<f64>,
    logx: Vec<f64>,
    penalty: DMatrix<f64>,
}

impl Problem {
    pub(crate) fn new(basis: &SplineBasis, z: &[f64], x: &[Vec<f64>], eps: f64) -> Self {
        let k = basis.dim();
        let n = x.first().map_or(0, Vec::len);
        let mut rows = vec![0.0; z.len() * k];
        for (r, &zt) in rows.chunks_exact_mut(k).zip(z) {
            basis.fill_row(zt, r);
        }
        let logx = x.iter().flat_map(|v| clip_simplex(v, eps)).map(f64::ln).collect();
        Self {
            n,
            k,
            rows,
            logx,
            penalty: basis.penalty(),
        }
    }

    fn len(&self) -> usize {
        self.rows.len() / self.k
    }

    fn subset(&self, idx: &[usize]) -> Self {
        let (k, n) = (self.k, self.n);
        Self {
            n,
            k,
            rows: idx.iter().flat_map(|&t| self.rows[t * k..(t + 1) * k].iter().copied()).collect(),
            logx: idx.iter().flat_map(|&t| self.logx[t * n..(t + 1) * n].iter().copied()).collect(),
            penalty: self.penalty.clone(),
        }
    }

    fn alpha_at(&self, t: usize, coef: &[f64], alpha: &mut [f64]) {
        let b = &self.rows[t * self.k..(t + 1) * self.k];
        for (i, a) in alpha.iter_mut().enumerate() {
            let c = &coef[i * self.k..(i + 1) * self.k];
            *a = c.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().exp();
        }
    }

    /// Unpenalised log-likelihood; `coef` is state-major (`N * K`).
    pub(crate) fn loglik(&self, coef: &[f64]) -> f64 {
        let mut alpha = vec![0.0; self.n];
        let mut ll = 0.0;
        for t in 0..self.len() {
            self.alpha_at(t, coef, &mut alpha);
            let a0: f64 = alpha.iter().sum();
            ll += ln_gamma(a0);
            for (i, a) in alpha.iter().enumerate() {
                ll += (a - 1.0) * self.logx[t * self.n + i] - ln_gamma(*a);
            }
        }
        ll
    }

    fn penalty_term(&self, coef: &[f64], lambdas: &[f64]) -> f64 {
        lambdas
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let c = DVector::from_column_slice(&coef[i * self.k..(i + 1) * self.k]);
                0.5 * l * (c.transpose() * &self.penalty * &c)[(0, 0)]
            })
            .sum()
    }

    pub(crate) fn penalized(&self, coef: &[f64], lambdas: &[f64]) -> f64 {
        self.loglik(coef) - self.penalty_term(coef, lambdas)
    }

    /// Penalised gradient and expected information (plus penalty).
    pub(crate) fn score_and_information(
        &self,
        coef: &[f64],
        lambdas: &[f64],
    ) -> (DVector<f64>, DMatrix<f64>) {
        let (n, k) = (self.n, self.k);
        let d = n * k;
        let mut g = DVector::zeros(d);
        let mut info = DMatrix::zeros(d, d);
        let mut alpha = vec![0.0; n];
        let mut a_mat = vec![0.0; n * n];
        for t in 0..self.len() {
            self.alpha_at(t, coef, &mut alpha);
            let a0: f64 = alpha.iter().sum();
            let (dg0, tg0) = (digamma(a0), trigamma(a0));
            let b = &self.rows[t * k..(t + 1) * k];
            for i in 0..n {
                let gi = alpha[i] * (dg0 - digamma(alpha[i]) + self.logx[t * n + i]);
                for (m, bm) in b.iter().enumerate() {
                    g[i * k + m] += gi * bm;
                }
                for j in 0..n {
                    let diag = if i == j { trigamma(alpha[i]) } else { 0.0 };
                    a_mat[i * n + j] = alpha[i] * alpha[j] * (diag - tg0);
                }
            }
            // only the 4 non-zero basis entries contribute to the outer product
            let nz: Vec<usize> = (0..k).filter(|&m| b[m] != 0.0).collect();
            for i in 0..n {
                for j in 0..n {
                    let a = a_mat[i * n + j];
                    for &m in &nz {
                        let am = a * b[m];
                        for &q in &nz {
                            info[(i * k + m, j * k + q)] += am * b[q];
                        }
                    }
                }
            }
        }
        for (i, l) in lambdas.iter().enumerate() {
            let c = DVector::from_column_slice(&coef[i * k..(i + 1) * k]);
            let pc = &self.penalty * c;
            for m in 0..k {
                g[i * k + m] -= l * pc[m];
                for q in 0..k {
                    info[(i * k + m, i * k + q)] += l * self.penalty[(m, q)];
                }
            }
        }
        (g, info)
    }

    /// Analytic gradient of the penalised log-likelihood.
    #[cfg(test)]
    pub(crate) fn gradient(&self, coef: &[f64], lambdas: &[f64]) -> Vec<f64> {
        self.score_and_information(coef, lambdas).0.iter().copied().collect()
    }

    fn initial_coefficients(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.n];
        for row in self.logx.chunks_exact(self.n) {
            mean.iter_mut().zip(row).for_each(|(m, l)| *m += l.exp());
        }
        // partition of unity: a constant coefficient vector is a constant function
        mean.iter()
            .flat_map(|m| std::iter::repeat_n((10.0 * m / self.len() as f64).ln(), self.k))
            .collect()
    }

    /// Fisher scoring with step halving.
    pub(crate) fn fit(
        &self,
        lambdas: &[f64],
        start: Option<&[f64]>,
        max_iter: usize,
        tol: f64,
    ) -> (Vec<f64>, f64, bool) {
        let mut coef = start.map_or_else(|| self.initial_coefficients(), <[f64]>::to_vec);
        let mut value = self.penalized(&coef, lambdas);
        for _ in 0..max_iter {
            let (g, info) = self.score_and_information(&coef, lambdas);
            let Some(chol) = info.cholesky() else {
                return (coef, value, false);
            };
            let step = chol.solve(&g);
            let mut scale = 1.0;
            let mut improved = None;
            for _ in 0..40 {
                let trial: Vec<f64> = coef.iter().zip(step.iter()).map(|(c, s)| c + scale * s).collect();
                let v = self.penalized(&trial, lambdas);
                if v.is_finite() && v >= value {
                    improved = Some((trial, v));
                    break;
                }
                scale *= 0.5;
            }
            let Some((trial, v)) = improved else {
                return (coef, value, true);
            };
            let rel = (v - value).abs() / value.abs().max(1.0);
            coef = trial;
            value = v;
            if rel < tol {
                return (coef, value, true);
            }
        }
        (coef, value, false)
    }
}

fn contiguous_folds(n: usize, folds: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    (0..folds)
        .map(|f| {
            let (lo, hi) = (f * n / folds, (f + 1) * n / folds);
            let train = (0..lo).chain(hi..n).collect();
            (train, (lo..hi).collect())
        })
        .collect()
}

fn cv_score(folds: &[(Problem, Problem)], lambdas: &[f64], cfg: &DirichletConfig) -> f64 {
    folds
        .par_iter()
        .map(|(train, test)| {
            let (coef, _, _) = train.fit(lambdas, None, cfg.max_iter, cfg.tol);
            -test.loglik(&coef)
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

/// Fits the smooth Dirichlet regression to the post-burn-in rows of `probs`.
/// Per-state smoothing parameters are chosen by contiguous-fold
/// cross-validation: first a common value, then one coordinate sweep.
pub fn fit_dirichlet_smooth(
    probs: &StateProbSeries,
    cov: &[f64],
    config: &DirichletConfig,
) -> Result<DirichletSmoothFit> {
    if probs.len() != cov.len() {
        return Err(Error::Dimension {
            what: "covariate column",
            expected: probs.len(),
            actual: cov.len(),
        });
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("covariate values must be finite"));
    }
    let kept: Vec<usize> = probs
        .segments()
        .into_iter()
        .flat_map(|s| (s.start + config.burn_in).min(s.end)..s.end)
        .collect();
    let k = config.basis_dim;
    if kept.len() < 10 * k {
        return Err(Error::input(format!(
            "{} post-burn-in rows cannot support a basis of dimension {k} (need {})",
            kept.len(),
            10 * k
        )));
    }
    let mut zs: Vec<f64> = kept.iter().map(|&t| cov[t]).collect();
    zs.sort_by(f64::total_cmp);
    let (qlo, qhi) = config.range_quantiles;
    let basis = SplineBasis::new(quantile_sorted(&zs, qlo), quantile_sorted(&zs, qhi), k)?;
    let inside: Vec<usize> = kept.into_iter().filter(|&t| basis.contains(cov[t])).collect();
    let z: Vec<f64> = inside.iter().map(|&t| cov[t]).collect();
    let x: Vec<Vec<f64>> = inside.iter().map(|&t| probs.row(t).to_vec()).collect();
    let problem = Problem::new(&basis, &z, &x, config.epsilon);
    let n = probs.n_states();

    let lambdas = match &config.lambdas {
        Some(l) if l.len() != n => {
            return Err(Error::Dimension {
                what: "smoothing parameters",
                expected: n,
                actual: l.len(),
            })
        }
        Some(l) => l.clone(),
        None => select_lambdas(&problem, n, config)?,
    };
    let (coef, value, converged) = problem.fit(&lambdas, None, config.max_iter, config.tol);
    if !converged {
        log::warn!("dirichlet regression did not converge; returning best iterate");
    }
    Ok(DirichletSmoothFit {
        basis,
        coefficients: coef.chunks_exact(k).map(<[f64]>::to_vec).collect(),
        lambdas,
        penalized_loglik: value,
        epsilon: config.epsilon,
        converged,
        n_obs: z.len(),
    })
}

fn select_lambdas(problem: &Problem, n: usize, config: &DirichletConfig) -> Result<Vec<f64>> {
    if config.log10_lambda_grid.is_empty() || config.folds < 2 {
        return Err(Error::input("smoothing selection needs a grid and at least 2 folds"));
    }
    let folds: Vec<(Problem, Problem)> = contiguous_folds(problem.len(), config.folds)
        .into_iter()
        .map(|(tr, te)| (problem.subset(&tr), problem.subset(&te)))
        .collect();
    let grid: Vec<f64> = config.log10_lambda_grid.iter().map(|l| 10f64.powf(*l)).collect();
    let best_of = |cands: Vec<Vec<f64>>| -> (Vec<f64>, f64) {
        cands
            .into_iter()
            .map(|l| {
                let s = cv_score(&folds, &l, config);
                (l, s)
            })
            .fold((Vec::new(), f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best })
    };
    let (mut lambdas, mut score) = best_of(grid.iter().map(|&l| vec![l; n]).collect());
    if lambdas.is_empty() {
        return Err(Error::Numerical("cross-validation failed for every smoothing value".into()));
    }
    for i in 0..n {
        let cands = grid
            .iter()
            .filter(|&&l| l != lambdas[i])
            .map(|&l| {
                let mut c = lambdas.clone();
                c[i] = l;
                c
            })
            .collect();
        let (l, s) = best_of(cands);
        if s < score {
            lambdas = l;
            score = s;
        }
    }
    log::debug!("selected smoothing parameters {lambdas:?} (cv score {score:.4})");
    Ok(lambdas)
}

/// Dirichlet mean `alpha(z) / sum alpha(z)` on `grid`.
pub fn predict_occupancy(fit: &DirichletSmoothFit, grid: &[f64]) -> Result<OccupancyCurve> {
    let probs = grid
        .iter()
        .map(|&z| {
            let a = fit.alpha(z)?;
            let s: f64 = a.iter().sum();
            Ok(Some(a.into_iter().map(|v| v / s).collect()))
        })
        .collect::<Result<_>>()?;
    Ok(OccupancyCurve {
        grid: grid.to_vec(),
        probs,
        counts: vec![0; grid.len()],
        method: Method::Dirichlet,
    })
}

/// As [`predict_occupancy`], but grid points outside the training range are
/// reported missing instead of failing.
pub fn predict_occupancy_within(fit: &DirichletSmoothFit, grid: &[f64]) -> OccupancyCurve {
    let probs = grid
        .iter()
        .map(|&z| {
            fit.alpha(z).ok().map(|a| {
                let s: f64 = a.iter().sum();
                a.into_iter().map(|v| v / s).collect()
            })
        })
        .collect();
    OccupancyCurve {
        grid: grid.to_vec(),
        probs,
        counts: vec![0; grid.len()],
        method: Method::Dirichlet,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma, Uniform};

    #[test]
    fn special_values() {
        let pi2 = std::f64::consts::PI.powi(2);
        assert_abs_diff_eq!(trigamma(1.0), pi2 / 6.0, epsilon = 1e-13);
        assert_abs_diff_eq!(trigamma(0.5), pi2 / 2.0, epsilon = 1e-12);
        // scipy.special.polygamma(1, 7.3)
        assert_abs_diff_eq!(trigamma(7.3), 0.14679576813142703, epsilon = 1e-13);
        assert_abs_diff_eq!(digamma(1.0), -0.5772156649015329, epsilon = 1e-14);
    }

    #[test]
    fn logpdf_values() {
        assert_abs_diff_eq!(dirichlet_logpdf(&[1.0, 1.0], &[0.3, 0.7]).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            dirichlet_logpdf(&[2.0, 2.0], &[0.5, 0.5]).unwrap(),
            1.5f64.ln(),
            epsilon = 1e-12
        );
        assert!(matches!(dirichlet_logpdf(&[2.0, 2.0], &[1.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(dirichlet_logpdf(&[0.0, 2.0], &[0.5, 0.5]), Err(Error::Input(_))));
    }

    #[test]
    fn clipping() {
        let c = clip_simplex(&[1.0, 0.0], 1e-6);
        assert_abs_diff_eq!(c.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c[1], 1e-6, epsilon = 1e-12);
        assert_eq!(clip_simplex(&[0.5, 0.5], 0.1), vec![0.5, 0.5]);
        assert_eq!(clip_simplex(&[0.2, 0.3, 0.5], 1e-6), vec![0.2, 0.3, 0.5]);
    }

    #[test]
    fn basis_partition_of_unity_and_penalty() {
        let b = SplineBasis::new(-2.0, 3.0, 10).unwrap();
        assert_eq!(b.knots().len(), 14);
        for z in [-2.0, -1.3, 0.0, 2.99, 3.0] {
            let r = b.evaluate(z).unwrap();
            assert_abs_diff_eq!(r.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            assert!(r.iter().all(|v| *v >= 0.0));
        }
        assert!(matches!(b.evaluate(3.1), Err(Error::Extrapolation { .. })));
        let p = b.penalty();
        assert_eq!(p, p.transpose());
        let eig = p.symmetric_eigenvalues();
        assert!(eig.iter().all(|v| *v >= -1e-10));
        // linear coefficients lie in the null space
        let lin = DVector::from_fn(10, |i, _| 0.3 * i as f64 - 1.0);
        assert_abs_diff_eq!((&p * lin).norm(), 0.0, epsilon = 1e-12);
    }

    fn random_problem(seed: u64, t: usize) -> Problem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = SplineBasis::new(0.0, 1.0, 6).unwrap();
        let u = Uniform::new(0.0, 1.0).unwrap();
        let z: Vec<f64> = (0..t).map(|_| u.sample(&mut rng)).collect();
        let x: Vec<Vec<f64>> = z
            .iter()
            .map(|&zt| {
                let g: Vec<f64> = [3.0 + 5.0 * zt, 4.0, 6.0 - 3.0 * zt]
                    .iter()
                    .map(|a| Gamma::new(*a, 1.0).unwrap().sample(&mut rng))
                    .collect();
                let s: f64 = g.iter().sum();
                g.into_iter().map(|v| v / s).collect()
            })
            .collect();
        Problem::new(&basis, &z, &x, 1e-6)
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let p = random_problem(3, 200);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = Uniform::new(-0.5, 1.5).unwrap();
        let coef: Vec<f64> = (0..18).map(|_| u.sample(&mut rng)).collect();
        let lambdas = [0.7, 2.0, 0.1];
        let g = p.gradient(&coef, &lambdas);
        for j in 0..coef.len() {
            let h = 1e-6 * (1.0 + coef[j].abs());
            let (mut up, mut dn) = (coef.clone(), coef.clone());
            up[j] += h;
            dn[j] -= h;
            let fd = (p.penalized(&up, &lambdas) - p.penalized(&dn, &lambdas)) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-4 * fd.abs().max(1.0), "coordinate {j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn heavier_penalty_is_smoother() {
        let p = random_problem(9, 400);
        let basis = SplineBasis::new(0.0, 1.0, 6).unwrap();
        let mut last = f64::INFINITY;
        for l in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let (coef, _, conv) = p.fit(&[l; 3], None, 500, 1e-12);
            assert!(conv);
            let fit = DirichletSmoothFit {
                basis: basis.clone(),
                coefficients: coef.chunks_exact(6).map(<[f64]>::to_vec).collect(),
                lambdas: vec![l; 3],
                penalized_loglik: 0.0,
                epsilon: 1e-6,
                converged: true,
                n_obs: 400,
            };
            let r = fit.roughness();
            assert!(r <= last * (1.0 + 1e-6) + 1e-12, "roughness {r} after {last}");
            last = r;
        }
    }
}
