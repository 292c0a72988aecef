//! Estimators of `Pr(state i | z)` that need neither resampling nor
//! regression: the hypothetical stationary curve, the binning estimator and
//! the Monte Carlo reference curve.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{
    stationary_distribution, tpm_from_covariates, CovariateSeries, HmmModel, Propagator,
    StateProbSeries,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Stationary,
    Binned,
    ArResample,
    BlockBootstrap,
    Dirichlet,
    MonteCarlo,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Stationary => "stationary",
            Method::Binned => "binned",
            Method::ArResample => "ar-resample",
            Method::BlockBootstrap => "block-bootstrap",
            Method::Dirichlet => "dirichlet",
            Method::MonteCarlo => "monte-carlo",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "stationary" => Method::Stationary,
            "binned" => Method::Binned,
            "ar-resample" => Method::ArResample,
            "block-bootstrap" => Method::BlockBootstrap,
            "dirichlet" => Method::Dirichlet,
            "monte-carlo" => Method::MonteCarlo,
            other => return Err(Error::input(format!("unknown occupancy method '{other}'"))),
        })
    }
}

/// `Pr(state i | z)` on a grid of covariate values. Missing rows are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyCurve {
    pub grid: Vec<f64>,
    pub probs: Vec<Option<Vec<f64>>>,
    pub counts: Vec<u64>,
    pub method: Method,
}

impl OccupancyCurve {
    pub fn n_states(&self) -> usize {
        self.probs.iter().flatten().map(Vec::len).next().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    /// Grid points whose count-weighted cumulative position lies in the
    /// central `frac` of the mass. Curves without counts keep every point.
    pub fn central_mask(&self, frac: f64) -> Vec<bool> {
        let total: u64 = self.counts.iter().sum();
        if total == 0 {
            return vec![true; self.len()];
        }
        let (lo, hi) = ((1.0 - frac) / 2.0, (1.0 + frac) / 2.0);
        let mut before = 0u64;
        self.counts
            .iter()
            .map(|&c| {
                let mid = (before as f64 + c as f64 / 2.0) / total as f64;
                before += c;
                c > 0 && mid >= lo && mid <= hi
            })
            .collect()
    }

    fn deviations<'a>(
        &'a self,
        other: &'a OccupancyCurve,
        mask: Option<&'a [bool]>,
    ) -> Result<impl Iterator<Item = f64> + 'a> {
        if self.grid != other.grid {
            return Err(Error::input("curves are defined on different grids"));
        }
        Ok(self
            .probs
            .iter()
            .zip(&other.probs)
            .enumerate()
            .filter(move |(k, _)| mask.is_none_or(|m| m[*k]))
            .filter_map(|(_, pair)| match pair {
                (Some(a), Some(b)) => Some(
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| (x - y).abs())
                        .fold(0.0, f64::max),
                ),
                _ => None,
            }))
    }

    /// Largest absolute difference over states and jointly present grid
    /// points, optionally restricted by `mask`. `None` if nothing overlaps.
    pub fn max_abs_deviation(
        &self,
        other: &OccupancyCurve,
        mask: Option<&[bool]>,
    ) -> Result<Option<f64>> {
        Ok(self
            .deviations(other, mask)?
            .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.max(d)))))
    }

    /// Mean over grid points of the per-point maximum state deviation.
    pub fn mean_abs_deviation(
        &self,
        other: &OccupancyCurve,
        mask: Option<&[bool]>,
    ) -> Result<Option<f64>> {
        let (s, n) = self
            .deviations(other, mask)?
            .fold((0.0, 0usize), |(s, n), d| (s + d, n + 1));
        Ok((n > 0).then(|| s / n as f64))
    }

    /// Writes `z,count,p_1..p_N,method`; missing probabilities are empty fields.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.n_states();
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["z".to_string(), "count".to_string()];
        header.extend((1..=n).map(|i| format!("p_{i}")));
        header.push("method".into());
        wr.write_record(&header)?;
        for k in 0..self.len() {
            let mut rec = vec![self.grid[k].to_string(), self.counts[k].to_string()];
            match &self.probs[k] {
                Some(p) => rec.extend(p.iter().map(f64::to_string)),
                None => rec.extend(std::iter::repeat_n(String::new(), n)),
            }
            rec.push(self.method.to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let n = rd.headers()?.len().saturating_sub(3);
        let mut curve = OccupancyCurve {
            grid: Vec::new(),
            probs: Vec::new(),
            counts: Vec::new(),
            method: Method::Binned,
        };
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::input(format!("occupancy row {}: bad {what}", line + 2));
            curve.grid.push(rec[0].parse().map_err(|_| bad("z"))?);
            curve.counts.push(rec[1].parse().map_err(|_| bad("count"))?);
            let cells: Vec<&str> = (0..n).map(|i| &rec[2 + i]).collect();
            curve.probs.push(if cells.iter().all(|c| c.is_empty()) {
                None
            } else {
                Some(
                    cells
                        .iter()
                        .map(|c| c.parse().map_err(|_| bad("probability")))
                        .collect::<Result<_>>()?,
                )
            });
            curve.method = rec[2 + n].parse()?;
        }
        Ok(curve)
    }
}

/// How the binning interval is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BinRange {
    /// Observed minimum to maximum.
    Full,
    /// Between two empirical quantiles (probabilities in `[0, 1]`).
    Quantile { lo: f64, hi: f64 },
    /// An explicit interval; values outside are dropped.
    Fixed { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinningConfig {
    pub n_bins: usize,
    pub range: BinRange,
    pub min_count: u64,
}

impl Default for BinningConfig {
    fn default() -> Self {
        Self {
            n_bins: 50,
            range: BinRange::Quantile { lo: 0.005, hi: 0.995 },
            min_count: 5,
        }
    }
}

impl BinningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 2 {
            return Err(Error::input("binning needs at least 2 bins"));
        }
        match self.range {
            BinRange::Quantile { lo, hi } if !(0.0 <= lo && lo < hi && hi <= 1.0) => Err(
                Error::input(format!("quantile bounds must satisfy 0 <= lo < hi <= 1, got {lo}, {hi}")),
            ),
            BinRange::Fixed { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo < hi) => {
                Err(Error::input(format!("fixed bin range [{lo}, {hi}] is invalid")))
            }
            _ => Ok(()),
        }
    }

    /// Resolves the interval for the given sample. A degenerate interval is
    /// widened symmetrically so a constant covariate still occupies one bin.
    pub fn resolve_range(&self, values: &[f64]) -> Result<(f64, f64)> {
        self.validate()?;
        let (lo, hi) = match self.range {
            BinRange::Fixed { lo, hi } => return Ok((lo, hi)),
            BinRange::Full => values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            }),
            BinRange::Quantile { lo, hi } => {
                let mut sorted = values.to_vec();
                sorted.sort_by(f64::total_cmp);
                (quantile_sorted(&sorted, lo), quantile_sorted(&sorted, hi))
            }
        };
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::input("no covariate values to bin"));
        }
        if lo == hi {
            let pad = 0.5 * lo.abs().max(1.0);
            return Ok((lo - pad, hi + pad));
        }
        Ok((lo, hi))
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = q * (sorted.len() - 1) as f64;
    let (i, frac) = (h.floor() as usize, h - h.floor());
    if i + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

/// Running per-bin means of state probabilities; mergeable so independent
/// streams can be combined by count weighting. Running means keep a constant
/// input exactly constant.
#[derive(Debug, Clone)]
pub struct BinAccumulator {
    lo: f64,
    hi: f64,
    n_states: usize,
    means: Vec<f64>,
    counts: Vec<u64>,
    dropped: u64,
}

impl BinAccumulator {
    pub fn new(lo: f64, hi: f64, n_bins: usize, n_states: usize) -> Self {
        Self {
            lo,
            hi,
            n_states,
            means: vec![0.0; n_bins * n_states],
            counts: vec![0; n_bins],
            dropped: 0,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    /// Bin index of `z`; the top edge belongs to the last bin.
    pub fn bin_of(&self, z: f64) -> Option<usize> {
        if !(z >= self.lo && z <= self.hi) {
            return None;
        }
        let k = ((z - self.lo) / (self.hi - self.lo) * self.n_bins() as f64) as usize;
        Some(k.min(self.n_bins() - 1))
    }

    #[inline]
    pub fn add(&mut self, z: f64, delta: &[f64]) {
        match self.bin_of(z) {
            Some(k) => {
                self.counts[k] += 1;
                let inv = 1.0 / self.counts[k] as f64;
                let n = self.n_states;
                for (m, d) in self.means[k * n..(k + 1) * n].iter_mut().zip(delta) {
                    *m += (d - *m) * inv;
                }
            }
            None => self.dropped += 1,
        }
    }

    pub fn merge(&mut self, other: &BinAccumulator) {
        debug_assert_eq!(self.counts.len(), other.counts.len());
        let n = self.n_states;
        for k in 0..self.counts.len() {
            let (c1, c2) = (self.counts[k], other.counts[k]);
            if c2 == 0 {
                continue;
            }
            let w = c2 as f64 / (c1 + c2) as f64;
            let theirs = &other.means[k * n..(k + 1) * n];
            for (m, o) in self.means[k * n..(k + 1) * n].iter_mut().zip(theirs) {
                *m += (o - *m) * w;
            }
            self.counts[k] = c1 + c2;
        }
        self.dropped += other.dropped;
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn centers(&self) -> Vec<f64> {
        let w = (self.hi - self.lo) / self.n_bins() as f64;
        (0..self.n_bins()).map(|k| self.lo + (k as f64 + 0.5) * w).collect()
    }

    pub fn finish(&self, min_count: u64, method: Method) -> Result<OccupancyCurve> {
        if self.counts.iter().all(|&c| c == 0) {
            return Err(Error::input("every bin is empty"));
        }
        if self.dropped > 0 {
            log::debug!("{} covariate values fell outside the binning range", self.dropped);
        }
        let n = self.n_states;
        let probs = self
            .counts
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                (c >= min_count.max(1)).then(|| self.means[k * n..(k + 1) * n].to_vec())
            })
            .collect();
        Ok(OccupancyCurve {
            grid: self.centers(),
            probs,
            counts: self.counts.clone(),
            method,
        })
    }
}

/// Indices kept after dropping `burn_in` leading rows of every segment.
fn post_burn_in(segments: &[std::ops::Range<usize>], burn_in: usize) -> impl Iterator<Item = usize> + '_ {
    segments
        .iter()
        .flat_map(move |s| (s.start + burn_in).min(s.end)..s.end)
}

/// Averages `delta^(t)` within equidistant covariate bins.
pub fn bin_occupancy(
    probs: &StateProbSeries,
    cov: &[f64],
    config: &BinningConfig,
    burn_in: usize,
) -> Result<OccupancyCurve> {
    if probs.len() != cov.len() {
        return Err(Error::Dimension {
            what: "covariate column",
            expected: probs.len(),
            actual: cov.len(),
        });
    }
    let segments = probs.segments();
    let kept: Vec<usize> = post_burn_in(&segments, burn_in).collect();
    if kept.is_empty() {
        return Err(Error::input("burn-in removes every time step"));
    }
    let zs: Vec<f64> = kept.iter().map(|&t| cov[t]).collect();
    let (lo, hi) = config.resolve_range(&zs)?;
    let mut acc = BinAccumulator::new(lo, hi, config.n_bins, probs.n_states());
    for &t in &kept {
        acc.add(cov[t], probs.row(t));
    }
    acc.finish(config.min_count, Method::Binned)
}

/// Propagates `model` along a single-covariate path and accumulates the
/// post-burn-in state probabilities into `acc` without storing them.
pub(crate) fn accumulate_path(
    model: &HmmModel,
    path: &[f64],
    burn_in: usize,
    acc: &mut BinAccumulator,
) -> Result<()> {
    if model.n_covariates() != 1 {
        return Err(Error::input(format!(
            "path-based occupancy needs a single-covariate model, got {} covariates",
            model.n_covariates()
        )));
    }
    let Some(&z0) = path.first() else {
        return Ok(());
    };
    let mut prop = Propagator::new(model);
    let first = prop.start(&[z0])?;
    if burn_in == 0 {
        acc.add(z0, first);
    }
    for (t, &z) in path.iter().enumerate().skip(1) {
        let d = prop.step(&[z])?;
        if t >= burn_in {
            acc.add(z, d);
        }
    }
    Ok(())
}

/// Binned occupancy of a long single-covariate path treated as one segment.
pub fn occupancy_of_path(
    model: &HmmModel,
    path: &[f64],
    config: &BinningConfig,
    burn_in: usize,
    method: Method,
) -> Result<OccupancyCurve> {
    let kept = &path[burn_in.min(path.len())..];
    let (lo, hi) = config.resolve_range(kept)?;
    let mut acc = BinAccumulator::new(lo, hi, config.n_bins, model.n_states());
    accumulate_path(model, path, burn_in, &mut acc)?;
    acc.finish(config.min_count, method)
}

/// Stationary distribution of `Gamma(z)` at each grid value of covariate
/// `column`, with the other covariates fixed at `fixed` (entry `column` ignored).
pub fn hypothetical_stationary_curve(
    model: &HmmModel,
    grid: &[f64],
    column: usize,
    fixed: &[f64],
) -> Result<OccupancyCurve> {
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::input("grid must be strictly increasing"));
    }
    let p = model.n_covariates();
    let rows = if p == 0 {
        CovariateSeries::empty(grid.len())
    } else {
        if fixed.len() != p {
            return Err(Error::Dimension {
                what: "fixed covariate values",
                expected: p,
                actual: fixed.len(),
            });
        }
        CovariateSeries::with_fixed_others(grid, column, fixed)?
    };
    let probs = (0..grid.len())
        .map(|k| stationary_distribution(&tpm_from_covariates(model.transition(), rows.row(k))?).map(Some))
        .collect::<Result<_>>()?;
    Ok(OccupancyCurve {
        grid: grid.to_vec(),
        probs,
        counts: vec![0; grid.len()],
        method: Method::Stationary,
    })
}

/// Source of stationary covariate paths for the Monte Carlo reference.
pub trait CovariateGenerator: Sync {
    fn generate(&self, len: usize, seed: u64) -> Result<Vec<f64>>;
}

impl<F> CovariateGenerator for F
where
    F: Fn(usize, u64) -> Result<Vec<f64>> + Sync,
{
    fn generate(&self, len: usize, seed: u64) -> Result<Vec<f64>> {
        self(len, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonteCarloConfig {
    pub length: usize,
    pub burn_in: usize,
    /// The path is produced as independently seeded sub-paths of this length,
    /// each with its own burn-in.
    pub sub_path_length: usize,
    pub binning: BinningConfig,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            length: 10_000_000,
            burn_in: 1000,
            sub_path_length: 1_000_000,
            binning: BinningConfig::default(),
        }
    }
}

fn sub_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64)
}

/// Reference occupancy curve from a very long simulated covariate path.
/// Deterministic given `seed`, independent of thread count.
pub fn monte_carlo_truth(
    model: &HmmModel,
    generator: &dyn CovariateGenerator,
    config: &MonteCarloConfig,
    seed: u64,
) -> Result<OccupancyCurve> {
    if config.length == 0 || config.sub_path_length == 0 {
        return Err(Error::input("Monte Carlo length must be positive"));
    }
    let n_sub = config.length.div_ceil(config.sub_path_length);
    let paths: Vec<Vec<f64>> = (0..n_sub)
        .into_par_iter()
        .map(|k| {
            let len = config
                .sub_path_length
                .min(config.length - k * config.sub_path_length);
            generator.generate(len, sub_seed(seed, k))
        })
        .collect::<Result<_>>()?;
    let (lo, hi) = match config.binning.range {
        BinRange::Fixed { lo, hi } => {
            config.binning.validate()?;
            (lo, hi)
        }
        _ => {
            let kept: Vec<f64> = paths
                .iter()
                .flat_map(|p| p[config.burn_in.min(p.len())..].iter().copied())
                .collect();
            config.binning.resolve_range(&kept)?
        }
    };
    let n_bins = config.binning.n_bins;
    let accs: Vec<BinAccumulator> = paths
        .par_iter()
        .map(|p| {
            let mut acc = BinAccumulator::new(lo, hi, n_bins, model.n_states());
            accumulate_path(model, p, config.burn_in, &mut acc).map(|_| acc)
        })
        .collect::<Result<_>>()?;
    let mut total = BinAccumulator::new(lo, hi, n_bins, model.n_states());
    for a in &accs {
        total.merge(a);
    }
    total.finish(config.binning.min_count, Method::MonteCarlo)
}

/// Pointwise average of curves sharing one grid. With `count_weighted` each
/// curve's row is weighted by its bin count; otherwise all present rows count
/// equally. Rows missing from every curve stay missing.
pub fn average_curves(curves: &[OccupancyCurve], count_weighted: bool) -> Result<OccupancyCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::input("no curves to average"))?;
    let n = curves.iter().map(OccupancyCurve::n_states).max().unwrap_or(0);
    let mut sums = vec![vec![0.0; n]; first.len()];
    let mut weights = vec![0.0; first.len()];
    let mut counts = vec![0u64; first.len()];
    for c in curves {
        if c.grid != first.grid {
            return Err(Error::input("curves are defined on different grids"));
        }
        for k in 0..c.len() {
            counts[k] += c.counts[k];
            if let Some(p) = &c.probs[k] {
                let w = if count_weighted { c.counts[k] as f64 } else { 1.0 };
                weights[k] += w;
                sums[k].iter_mut().zip(p).for_each(|(s, v)| *s += w * v);
            }
        }
    }
    let probs = sums
        .into_iter()
        .zip(&weights)
        .map(|(s, &w)| (w > 0.0).then(|| s.into_iter().map(|v| v / w).collect()))
        .collect();
    Ok(OccupancyCurve {
        grid: first.grid.clone(),
        probs,
        counts,
        method: first.method,
    })
}
