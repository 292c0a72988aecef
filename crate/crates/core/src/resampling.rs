//! Long synthetic covariate paths from an autoregressive fit or a
//! non-overlapping block bootstrap, and the occupancy estimator built on them.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::HmmModel;
use crate::occupancy::{accumulate_path, BinAccumulator, BinningConfig, Method, OccupancyCurve};

/// `Z_t = c + phi_1 Z_{t-1} + ... + phi_p Z_{t-p} + eps_t`, `eps_t ~ N(0, sigma^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArRepr")]
pub struct ArModel {
    coefficients: Vec<f64>,
    intercept: f64,
    noise_sd: f64,
}

#[derive(Deserialize)]
struct ArRepr {
    coefficients: Vec<f64>,
    intercept: f64,
    noise_sd: f64,
}

impl TryFrom<ArRepr> for ArModel {
    type Error = Error;
    fn try_from(r: ArRepr) -> Result<Self> {
        ArModel::new(r.coefficients, r.intercept, r.noise_sd)
    }
}

impl ArModel {
    /// Rejects non-stationary coefficient vectors.
    pub fn new(coefficients: Vec<f64>, intercept: f64, noise_sd: f64) -> Result<Self> {
        if !(noise_sd > 0.0 && noise_sd.is_finite()) {
            return Err(Error::input(format!("noise sd must be positive, got {noise_sd}")));
        }
        if !intercept.is_finite() || coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::input("AR coefficients must be finite"));
        }
        let radius = spectral_radius(&coefficients);
        if radius >= 1.0 {
            return Err(Error::NonStationary(format!(
                "companion matrix has spectral radius {radius:.6} >= 1"
            )));
        }
        Ok(Self {
            coefficients,
            intercept,
            noise_sd,
        })
    }

    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    pub fn mean(&self) -> f64 {
        self.intercept / (1.0 - self.coefficients.iter().sum::<f64>())
    }
}

/// Largest eigenvalue modulus of the AR companion matrix; all roots of the
/// characteristic polynomial lie outside the unit circle iff this is < 1.
fn spectral_radius(phi: &[f64]) -> f64 {
    let p = phi.len();
    if p == 0 {
        return 0.0;
    }
    let mut m = DMatrix::<f64>::zeros(p, p);
    for (j, &f) in phi.iter().enumerate() {
        m[(0, j)] = f;
    }
    for i in 1..p {
        m[(i, i - 1)] = 1.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// One candidate order considered by [`fit_ar`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArCandidate {
    pub order: usize,
    pub aic: f64,
    pub stationary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArFit {
    pub model: ArModel,
    pub candidates: Vec<ArCandidate>,
}

fn series_mean_var(series: &[f64]) -> (f64, f64) {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Conditional least squares on the mean-centred series for orders
/// `0..=max_order` over a common sample; the stationary fit with the lowest
/// AIC (`n ln(RSS/n) + 2(p+1)`) wins.
pub fn fit_ar(series: &[f64], max_order: usize) -> Result<ArFit> {
    if series.len() <= 10 * max_order.max(1) {
        return Err(Error::input(format!(
            "AR fitting up to order {max_order} needs more than {} values, got {}",
            10 * max_order.max(1),
            series.len()
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("AR fitting needs finite values"));
    }
    let (mean, var) = series_mean_var(series);
    if !(var > 1e-12 * mean.abs().max(1.0).powi(2)) {
        return Err(Error::input("series has zero variance"));
    }
    let y: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let n_eff = y.len() - max_order;
    let target = DVector::from_column_slice(&y[max_order..]);

    let mut fits = Vec::with_capacity(max_order + 1);
    for p in 0..=max_order {
        let (phi, rss) = if p == 0 {
            (Vec::new(), target.norm_squared())
        } else {
            let x = DMatrix::from_fn(n_eff, p, |r, c| y[max_order + r - c - 1]);
            let xtx = x.transpose() * &x;
            let xty = x.transpose() * &target;
            let sol = xtx
                .cholesky()
                .ok_or_else(|| Error::Singular(format!("AR({p}) normal equations are singular")))?
                .solve(&xty);
            let rss = (&target - &x * &sol).norm_squared();
            (sol.iter().copied().collect(), rss)
        };
        let sigma2 = rss / n_eff as f64;
        let aic = n_eff as f64 * sigma2.ln() + 2.0 * (p as f64 + 1.0);
        let intercept = mean * (1.0 - phi.iter().sum::<f64>());
        fits.push((p, aic, ArModel::new(phi, intercept, sigma2.sqrt())));
    }
    let candidates = fits
        .iter()
        .map(|(p, aic, m)| ArCandidate {
            order: *p,
            aic: *aic,
            stationary: m.is_ok(),
        })
        .collect();
    let mut ranked: Vec<_> = fits.into_iter().collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    let model = ranked
        .into_iter()
        .find_map(|(_, _, m)| m.ok())
        .ok_or_else(|| Error::NonStationary("no candidate order gives a stationary fit".into()))?;
    Ok(ArFit { model, candidates })
}

/// Simulates `length` values, discarding a warm-up of `10p + 100` steps
/// started at the process mean.
pub fn simulate_ar(model: &ArModel, length: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, model.noise_sd).expect("validated sd");
    let p = model.order();
    let warm = 10 * p + 100;
    let mu = model.mean();
    let mut hist = vec![mu; p];
    let mut out = Vec::with_capacity(length);
    for t in 0..warm + length {
        let mut z = model.intercept + noise.sample(&mut rng);
        for (k, f) in model.coefficients.iter().enumerate() {
            z += f * hist[(t + p - 1 - k) % p];
        }
        if p > 0 {
            hist[t % p] = z;
        }
        if t >= warm {
            out.push(z);
        }
    }
    out
}

/// `beta_0 + beta_1 sin(2 pi t / period) + beta_2 cos(2 pi t / period)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalTrend {
    pub period: f64,
    pub coefficients: [f64; 3],
    pub standard_errors: [f64; 3],
    pub residual_sd: f64,
}

impl SeasonalTrend {
    pub fn evaluate(&self, t: f64) -> f64 {
        let w = 2.0 * PI * t / self.period;
        let [b0, b1, b2] = self.coefficients;
        b0 + b1 * w.sin() + b2 * w.cos()
    }

    pub fn residuals(&self, series: &[f64], times: &[f64]) -> Vec<f64> {
        series
            .iter()
            .zip(times)
            .map(|(y, &t)| y - self.evaluate(t))
            .collect()
    }
}

/// Ordinary least squares on an intercept and one sine/cosine pair.
pub fn fit_seasonal_trend(series: &[f64], times: &[f64], period: f64) -> Result<SeasonalTrend> {
    if series.len() != times.len() {
        return Err(Error::Dimension {
            what: "seasonal time index",
            expected: series.len(),
            actual: times.len(),
        });
    }
    if series.len() < 10 {
        return Err(Error::input("seasonal regression needs at least 10 values"));
    }
    if !(period > 0.0) || series.iter().chain(times).any(|v| !v.is_finite()) {
        return Err(Error::input("seasonal regression needs finite data and a positive period"));
    }
    let n = series.len();
    let x = DMatrix::from_fn(n, 3, |r, c| {
        let w = 2.0 * PI * times[r] / period;
        match c {
            0 => 1.0,
            1 => w.sin(),
            _ => w.cos(),
        }
    });
    let y = DVector::from_column_slice(series);
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-8 * smax) {
        return Err(Error::Singular(format!(
            "seasonal regressors are collinear (singular values {smin:.3e} .. {smax:.3e})"
        )));
    }
    let beta = svd.solve(&y, 0.0).map_err(|e| Error::Numerical(e.to_string()))?;
    let rss = (&y - &x * &beta).norm_squared();
    let sigma2 = rss / (n - 3) as f64;
    let xtx_inv = (x.transpose() * &x)
        .try_inverse()
        .ok_or_else(|| Error::Singular("seasonal normal equations are singular".into()))?;
    Ok(SeasonalTrend {
        period,
        coefficients: [beta[0], beta[1], beta[2]],
        standard_errors: [0, 1, 2].map(|k| (sigma2 * xtx_inv[(k, k)]).sqrt()),
        residual_sd: sigma2.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockBootstrapConfig {
    pub block_length: usize,
    pub output_blocks: usize,
    pub detrend: Option<SeasonalTrend>,
}

/// Concatenates `output_blocks` blocks drawn with replacement from the
/// `floor(T / L)` consecutive non-overlapping blocks of `series` (the tail
/// remainder is unused). With `detrend`, blocks are drawn from the residuals
/// and the trend is re-added on synthetic times continuing from the first
/// observed time at the median sampling interval.
pub fn block_bootstrap(
    series: &[f64],
    times: Option<&[f64]>,
    config: &BlockBootstrapConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let l = config.block_length;
    if l == 0 || l > series.len() {
        return Err(Error::input(format!(
            "block length {l} must lie in 1..={}",
            series.len()
        )));
    }
    if config.output_blocks == 0 {
        return Err(Error::input("at least one output block is required"));
    }
    let base: Vec<f64>;
    let mut synthetic_time: Option<(f64, f64)> = None;
    let source: &[f64] = match &config.detrend {
        None => series,
        Some(trend) => {
            let times = times.ok_or_else(|| Error::input("detrending needs a time index"))?;
            if times.len() != series.len() {
                return Err(Error::Dimension {
                    what: "bootstrap time index",
                    expected: series.len(),
                    actual: times.len(),
                });
            }
            synthetic_time = Some((times[0], median_step(times)?));
            base = trend.residuals(series, times);
            &base
        }
    };
    let m = source.len() / l;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(config.output_blocks * l);
    for _ in 0..config.output_blocks {
        let b = rng.random_range(0..m);
        out.extend_from_slice(&source[b * l..(b + 1) * l]);
    }
    if let (Some(trend), Some((t0, dt))) = (&config.detrend, synthetic_time) {
        for (k, v) in out.iter_mut().enumerate() {
            *v += trend.evaluate(t0 + k as f64 * dt);
        }
    }
    Ok(out)
}

fn median_step(times: &[f64]) -> Result<f64> {
    let mut d: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
    if d.is_empty() {
        return Err(Error::input("time index has no positive increments"));
    }
    d.sort_by(f64::total_cmp);
    Ok(d[d.len() / 2])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleOccupancyOptions {
    pub burn_in: usize,
    /// Restart propagation (and burn-in) every this many steps, e.g. at each
    /// bootstrap block; `None` propagates straight through the joins.
    pub restart_every: Option<usize>,
    /// Fraction of bins that must reach the minimum count before a warning.
    pub min_coverage: f64,
}

impl Default for ResampleOccupancyOptions {
    fn default() -> Self {
        Self {
            burn_in: 1000,
            restart_every: None,
            min_coverage: 0.8,
        }
    }
}

/// Propagates the fitted model along a synthetic covariate path and bins the
/// resulting state probabilities.
pub fn occupancy_via_resampling(
    model: &HmmModel,
    synthetic: &[f64],
    config: &BinningConfig,
    options: &ResampleOccupancyOptions,
    method: Method,
) -> Result<OccupancyCurve> {
    let chunk = options.restart_every.unwrap_or(synthetic.len()).max(1);
    let kept: Vec<f64> = synthetic
        .chunks(chunk)
        .flat_map(|c| c[options.burn_in.min(c.len())..].iter().copied())
        .collect();
    let (lo, hi) = config.resolve_range(&kept)?;
    drop(kept);
    let mut acc = BinAccumulator::new(lo, hi, config.n_bins, model.n_states());
    for c in synthetic.chunks(chunk) {
        accumulate_path(model, c, options.burn_in, &mut acc)?;
    }
    if acc.dropped() > 0 {
        log::info!(
            "{} synthetic covariate values outside [{lo}, {hi}] were not binned",
            acc.dropped()
        );
    }
    let curve = acc.finish(config.min_count, method)?;
    let covered = curve.probs.iter().filter(|p| p.is_some()).count();
    if (covered as f64) < options.min_coverage * curve.len() as f64 {
        log::warn!(
            "only {covered} of {} bins reach {} samples; bin counts {:?}",
            curve.len(),
            config.min_count,
            curve.counts
        );
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rejects_explosive_coefficients() {
        assert!(matches!(ArModel::new(vec![1.01], 0.0, 1.0), Err(Error::NonStationary(_))));
        assert!(ArModel::new(vec![0.5, 0.6], 0.0, 1.0).is_err());
        assert!(ArModel::new(vec![1.2, -0.5], 0.0, 1.0).is_ok());
    }

    #[test]
    fn noiseless_path_sits_at_the_mean() {
        let m = ArModel::new(vec![0.6, 0.2], 1.0, 1e-12).unwrap();
        for v in simulate_ar(&m, 500, 4) {
            assert_abs_diff_eq!(v, 5.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn simulation_is_seeded() {
        let m = ArModel::new(vec![0.5], 0.0, 1.0).unwrap();
        assert_eq!(simulate_ar(&m, 100, 9), simulate_ar(&m, 100, 9));
        assert_ne!(simulate_ar(&m, 100, 9), simulate_ar(&m, 100, 10));
    }

    #[test]
    fn recovers_ar1() {
        let truth = ArModel::new(vec![0.95], 0.5, (1.0f64 - 0.95 * 0.95).sqrt()).unwrap();
        let fit = fit_ar(&simulate_ar(&truth, 10_000, 11), 5).unwrap();
        let phi = fit.model.coefficients()[0];
        assert!((0.93..=0.97).contains(&phi), "phi = {phi}");
        assert_abs_diff_eq!(fit.model.mean(), 10.0, epsilon = 1.0);
        assert_eq!(fit.candidates.len(), 6);
    }

    #[test]
    fn white_noise_has_negligible_coefficients() {
        let wn = ArModel::new(vec![], 0.0, 1.0).unwrap();
        let fit = fit_ar(&simulate_ar(&wn, 10_000, 2), 5).unwrap();
        assert!(fit.model.coefficients().iter().all(|c| c.abs() < 0.05));
    }

    #[test]
    fn constant_series_is_rejected() {
        assert!(matches!(fit_ar(&[3.0; 100], 5), Err(Error::Input(_))));
    }

    #[test]
    fn exact_seasonal_model() {
        let doy: Vec<f64> = (0..400).map(|t| (t % 365) as f64 + 1.0).collect();
        let y: Vec<f64> = doy.iter().map(|d| 20.0 + 5.0 * (2.0 * PI * d / 365.0).sin()).collect();
        let tr = fit_seasonal_trend(&y, &doy, 365.0).unwrap();
        assert_abs_diff_eq!(tr.coefficients[0], 20.0, epsilon = 1e-8);
        assert_abs_diff_eq!(tr.coefficients[1], 5.0, epsilon = 1e-8);
        assert_abs_diff_eq!(tr.coefficients[2], 0.0, epsilon = 1e-8);
        assert!(tr.residual_sd < 1e-8);
    }

    #[test]
    fn residuals_are_centred_and_single_day_is_singular() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let doy: Vec<f64> = (0..300).map(|t| t as f64).collect();
        let y: Vec<f64> = (0..300).map(|_| rng.random::<f64>() * 3.0).collect();
        let tr = fit_seasonal_trend(&y, &doy, 365.0).unwrap();
        let r = tr.residuals(&y, &doy);
        assert_abs_diff_eq!(r.iter().sum::<f64>() / 300.0, 0.0, epsilon = 1e-10);
        assert!(matches!(
            fit_seasonal_trend(&y, &[42.0; 300], 365.0),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn single_block_repeats_series() {
        let s: Vec<f64> = (0..7).map(f64::from).collect();
        let cfg = BlockBootstrapConfig {
            block_length: 7,
            output_blocks: 3,
            detrend: None,
        };
        assert_eq!(block_bootstrap(&s, None, &cfg, 1).unwrap(), [s.clone(), s.clone(), s].concat());
    }

    #[test]
    fn blocks_are_exact_input_blocks() {
        let s: Vec<f64> = (0..103).map(|v| (v as f64).sin()).collect();
        let cfg = BlockBootstrapConfig {
            block_length: 10,
            output_blocks: 50,
            detrend: None,
        };
        let out = block_bootstrap(&s, None, &cfg, 8).unwrap();
        let blocks: Vec<&[f64]> = s.chunks_exact(10).collect();
        assert_eq!(blocks.len(), 10);
        for b in out.chunks_exact(10) {
            assert!(blocks.contains(&b));
        }
        let too_long = BlockBootstrapConfig { block_length: 104, ..cfg };
        assert!(block_bootstrap(&s, None, &too_long, 8).is_err());
    }

    #[test]
    fn detrended_bootstrap_of_pure_trend_continues_cycle() {
        let t: Vec<f64> = (0..200).map(f64::from).collect();
        let tr = SeasonalTrend {
            period: 50.0,
            coefficients: [1.0, 2.0, 0.5],
            standard_errors: [0.0; 3],
            residual_sd: 0.0,
        };
        let y: Vec<f64> = t.iter().map(|&v| tr.evaluate(v)).collect();
        let cfg = BlockBootstrapConfig {
            block_length: 50,
            output_blocks: 10,
            detrend: Some(tr.clone()),
        };
        let out = block_bootstrap(&y, Some(&t), &cfg, 3).unwrap();
        for (k, v) in out.iter().enumerate() {
            assert_abs_diff_eq!(*v, tr.evaluate(k as f64), epsilon = 1e-12);
        }
    }
}
