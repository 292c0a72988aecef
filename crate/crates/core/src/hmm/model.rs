use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::emission::EmissionSpec;
use super::stationary::stationary_distribution;
use super::transition::{tpm_from_covariates, TransitionCoefficients};
use crate::error::{Error, Result};

/// How the state distribution is set at the first index of each segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialDistribution {
    /// Stationary distribution of `Gamma` at the segment's first covariate row.
    #[default]
    Stationary,
    Uniform,
    Fixed(Vec<f64>),
}

/// A covariate-driven hidden Markov model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct HmmModel {
    transition: TransitionCoefficients,
    emissions: EmissionSpec,
    initial: InitialDistribution,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    transition: TransitionCoefficients,
    emissions: EmissionSpec,
    #[serde(default)]
    initial: InitialDistribution,
}

impl From<HmmModel> for ModelRepr {
    fn from(m: HmmModel) -> Self {
        ModelRepr {
            transition: m.transition,
            emissions: m.emissions,
            initial: m.initial,
        }
    }
}

impl TryFrom<ModelRepr> for HmmModel {
    type Error = Error;
    fn try_from(r: ModelRepr) -> Result<Self> {
        HmmModel::new(r.transition, r.emissions, r.initial)
    }
}

impl HmmModel {
    pub fn new(
        transition: TransitionCoefficients,
        emissions: EmissionSpec,
        initial: InitialDistribution,
    ) -> Result<Self> {
        if transition.n_states() != emissions.n_states() {
            return Err(Error::Dimension {
                what: "emission states",
                expected: transition.n_states(),
                actual: emissions.n_states(),
            });
        }
        if let InitialDistribution::Fixed(d) = &initial {
            if d.len() != transition.n_states() {
                return Err(Error::Dimension {
                    what: "initial distribution",
                    expected: transition.n_states(),
                    actual: d.len(),
                });
            }
            let sum: f64 = d.iter().sum();
            if d.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::input(
                    "initial distribution must lie on the probability simplex",
                ));
            }
        }
        Ok(Self {
            transition,
            emissions,
            initial,
        })
    }

    pub fn n_states(&self) -> usize {
        self.transition.n_states()
    }

    pub fn n_covariates(&self) -> usize {
        self.transition.n_covariates()
    }

    pub fn n_channels(&self) -> usize {
        self.emissions.n_channels()
    }

    pub fn transition(&self) -> &TransitionCoefficients {
        &self.transition
    }

    pub fn emissions(&self) -> &EmissionSpec {
        &self.emissions
    }

    pub fn initial(&self) -> &InitialDistribution {
        &self.initial
    }

    pub fn with_initial(mut self, initial: InitialDistribution) -> Result<Self> {
        self.initial = initial;
        Self::new(self.transition, self.emissions, self.initial)
    }

    /// State distribution at the start of a segment whose first covariate row is `z`.
    pub fn initial_distribution(&self, z: &[f64]) -> Result<Vec<f64>> {
        match &self.initial {
            InitialDistribution::Stationary => {
                stationary_distribution(&tpm_from_covariates(&self.transition, z)?)
            }
            InitialDistribution::Uniform => Ok(vec![1.0 / self.n_states() as f64; self.n_states()]),
            InitialDistribution::Fixed(d) => Ok(d.clone()),
        }
    }

    /// Relabels states so that new state `k` is old state `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let initial = match &self.initial {
            InitialDistribution::Fixed(d) => {
                InitialDistribution::Fixed(perm.iter().map(|&k| d[k]).collect())
            }
            other => other.clone(),
        };
        Self {
            transition: self.transition.permuted(perm),
            emissions: self.emissions.permuted(perm),
            initial,
        }
    }

    /// Orders states by ascending location of the first channel.
    pub fn sorted_by_first_channel(&self) -> Self {
        let mut perm: Vec<usize> = (0..self.n_states()).collect();
        perm.sort_by(|&a, &b| {
            self.emissions
                .get(a, 0)
                .location()
                .total_cmp(&self.emissions.get(b, 0).location())
        });
        self.permuted(&perm)
    }
}

fn check_segments(ids: &[u32]) -> Result<()> {
    if let Some(t) = ids.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::input(format!(
            "segment ids must be non-decreasing (index {})",
            t + 1
        )));
    }
    Ok(())
}

fn segment_ranges(ids: &[u32]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for t in 1..=ids.len() {
        if t == ids.len() || ids[t] != ids[start] {
            if t > start {
                out.push(start..t);
            }
            start = t;
        }
    }
    out
}

/// Observed channels over time, with per-cell missing markers.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    n_channels: usize,
    values: Vec<Option<f64>>,
    segment_ids: Vec<u32>,
}

impl ObservationSeries {
    /// `values` is row-major (`len * n_channels`).
    pub fn new(n_channels: usize, values: Vec<Option<f64>>, segment_ids: Vec<u32>) -> Result<Self> {
        if n_channels == 0 {
            return Err(Error::input("observation series needs at least one channel"));
        }
        if values.len() != n_channels * segment_ids.len() {
            return Err(Error::Dimension {
                what: "observation cells",
                expected: n_channels * segment_ids.len(),
                actual: values.len(),
            });
        }
        check_segments(&segment_ids)?;
        Ok(Self {
            n_channels,
            values,
            segment_ids,
        })
    }

    pub fn from_rows(rows: Vec<Vec<Option<f64>>>, segment_ids: Vec<u32>) -> Result<Self> {
        let n_channels = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != n_channels) {
            return Err(Error::Dimension {
                what: "observation row",
                expected: n_channels,
                actual: r.len(),
            });
        }
        Self::new(n_channels, rows.into_iter().flatten().collect(), segment_ids)
    }

    /// Single-segment, single-channel series without missing values.
    pub fn from_column(values: &[f64]) -> Self {
        Self {
            n_channels: 1,
            values: values.iter().map(|&v| Some(v)).collect(),
            segment_ids: vec![0; values.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.segment_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segment_ids.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn row(&self, t: usize) -> &[Option<f64>] {
        &self.values[t * self.n_channels..(t + 1) * self.n_channels]
    }

    pub fn channel(&self, c: usize) -> impl Iterator<Item = Option<f64>> + '_ {
        self.values.iter().skip(c).step_by(self.n_channels).copied()
    }

    pub fn segment_ids(&self) -> &[u32] {
        &self.segment_ids
    }

    pub fn segments(&self) -> Vec<Range<usize>> {
        segment_ranges(&self.segment_ids)
    }
}

/// Covariate values aligned with an observation series.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSeries {
    len: usize,
    n_covariates: usize,
    values: Vec<f64>,
    segment_ids: Vec<u32>,
    time_index: Option<Vec<f64>>,
}

impl CovariateSeries {
    /// `values` is row-major (`len * n_covariates`); no missing values allowed.
    pub fn new(n_covariates: usize, values: Vec<f64>, segment_ids: Vec<u32>) -> Result<Self> {
        let len = segment_ids.len();
        if values.len() != n_covariates * len {
            return Err(Error::Dimension {
                what: "covariate cells",
                expected: n_covariates * len,
                actual: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "covariate value at row {} is missing or non-finite",
                pos / n_covariates.max(1)
            )));
        }
        check_segments(&segment_ids)?;
        Ok(Self {
            len,
            n_covariates,
            values,
            segment_ids,
            time_index: None,
        })
    }

    /// One covariate column forming a single segment.
    pub fn from_column(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(1, values, vec![0; n])
    }

    /// Covariate-free series of length `len`.
    pub fn empty(len: usize) -> Self {
        Self {
            len,
            n_covariates: 0,
            values: Vec::new(),
            segment_ids: vec![0; len],
            time_index: None,
        }
    }

    /// Builds a multi-column series where column `column` varies with `values`
    /// and every other column is held at the matching entry of `fixed`.
    pub fn with_fixed_others(values: &[f64], column: usize, fixed: &[f64]) -> Result<Self> {
        let p = fixed.len();
        if column >= p {
            return Err(Error::input(format!(
                "covariate column {column} out of range for {p} columns"
            )));
        }
        let mut cells = Vec::with_capacity(values.len() * p);
        for &v in values {
            for (k, &f) in fixed.iter().enumerate() {
                cells.push(if k == column { v } else { f });
            }
        }
        Self::new(p, cells, vec![0; values.len()])
    }

    pub fn with_segments(mut self, segment_ids: Vec<u32>) -> Result<Self> {
        if segment_ids.len() != self.len {
            return Err(Error::Dimension {
                what: "segment ids",
                expected: self.len,
                actual: segment_ids.len(),
            });
        }
        check_segments(&segment_ids)?;
        self.segment_ids = segment_ids;
        Ok(self)
    }

    /// Attaches a time index (e.g. day of year) used for seasonal modelling.
    pub fn with_time_index(mut self, time_index: Vec<f64>) -> Result<Self> {
        if time_index.len() != self.len {
            return Err(Error::Dimension {
                what: "time index",
                expected: self.len,
                actual: time_index.len(),
            });
        }
        self.time_index = Some(time_index);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_covariates..(t + 1) * self.n_covariates]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(c)
            .step_by(self.n_covariates)
            .copied()
            .collect()
    }

    pub fn column_means(&self) -> Vec<f64> {
        (0..self.n_covariates)
            .map(|c| self.column(c).iter().sum::<f64>() / self.len.max(1) as f64)
            .collect()
    }

    pub fn segment_ids(&self) -> &[u32] {
        &self.segment_ids
    }

    pub fn segments(&self) -> Vec<Range<usize>> {
        segment_ranges(&self.segment_ids)
    }

    pub fn time_index(&self) -> Option<&[f64]> {
        self.time_index.as_deref()
    }
}

/// Marginal state distributions `delta^(t)` over time.
#[derive(Debug, Clone, PartialEq)]
pub struct StateProbSeries {
    n_states: usize,
    values: Vec<f64>,
    segment_ids: Vec<u32>,
}

impl StateProbSeries {
    pub(crate) fn from_parts(n_states: usize, values: Vec<f64>, segment_ids: Vec<u32>) -> Self {
        debug_assert_eq!(values.len(), n_states * segment_ids.len());
        Self {
            n_states,
            values,
            segment_ids,
        }
    }

    /// Builds a series from explicit simplex rows (single segment).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * n);
        for (t, r) in rows.iter().enumerate() {
            let s: f64 = r.iter().sum();
            if r.len() != n || r.iter().any(|v| !(0.0..=1.0).contains(v)) || (s - 1.0).abs() > 1e-10
            {
                return Err(Error::input(format!("row {t} is not on the simplex")));
            }
            values.extend_from_slice(r);
        }
        Ok(Self::from_parts(n, values, vec![0; rows.len()]))
    }

    pub fn len(&self) -> usize {
        self.segment_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segment_ids.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_states..(t + 1) * self.n_states]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_states)
    }

    pub fn segment_ids(&self) -> &[u32] {
        &self.segment_ids
    }

    pub fn segments(&self) -> Vec<Range<usize>> {
        segment_ranges(&self.segment_ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::emission::Emission;

    fn toy() -> HmmModel {
        let t = TransitionCoefficients::from_fn(3, 0, |i, j| vec![(i + 2 * j) as f64 * 0.1]).unwrap();
        let e = EmissionSpec::new(vec![
            vec![Emission::Gaussian { mean: 5.0, sd: 1.0 }],
            vec![Emission::Gaussian { mean: -1.0, sd: 1.0 }],
            vec![Emission::Gaussian { mean: 2.0, sd: 1.0 }],
        ])
        .unwrap();
        HmmModel::new(t, e, InitialDistribution::Fixed(vec![0.2, 0.3, 0.5])).unwrap()
    }

    #[test]
    fn sorting_orders_by_first_channel() {
        let m = toy().sorted_by_first_channel();
        let means: Vec<f64> = (0..3).map(|i| m.emissions().get(i, 0).location()).collect();
        assert_eq!(means, vec![-1.0, 2.0, 5.0]);
        assert_eq!(m.initial(), &InitialDistribution::Fixed(vec![0.3, 0.5, 0.2]));
    }

    #[test]
    fn segments_are_contiguous_runs() {
        assert_eq!(segment_ranges(&[0, 0, 1, 1, 1, 4]), vec![0..2, 2..5, 5..6]);
        assert!(check_segments(&[0, 1, 0]).is_err());
    }

    #[test]
    fn fixed_initial_must_be_simplex() {
        let m = toy();
        assert!(m
            .clone()
            .with_initial(InitialDistribution::Fixed(vec![0.5, 0.5, 0.5]))
            .is_err());
        assert!(m.with_initial(InitialDistribution::Uniform).is_ok());
    }

    #[test]
    fn model_json_round_trip() {
        let m = toy();
        let s = serde_json::to_string_pretty(&m).unwrap();
        let back: HmmModel = serde_json::from_str(&s).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn covariate_series_rejects_missing() {
        assert!(CovariateSeries::new(1, vec![1.0, f64::NAN], vec![0, 0]).is_err());
        let c = CovariateSeries::with_fixed_others(&[1.0, 2.0], 1, &[9.0, 0.0]).unwrap();
        assert_eq!(c.row(1), &[9.0, 2.0]);
    }
}
