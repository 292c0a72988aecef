//! Forward likelihood, Viterbi decoding and covariate-only propagation.
//!
//! Timing: the covariate row at index `t` drives the transition from `t-1`
//! into `t`; the row at a segment's first index only enters through the
//! initial-distribution policy.

use super::model::{CovariateSeries, HmmModel, ObservationSeries, StateProbSeries};
use crate::error::{Error, Result};

fn check_alignment(model: &HmmModel, obs: &ObservationSeries, cov: &CovariateSeries) -> Result<()> {
    if obs.is_empty() {
        return Err(Error::input("observation series is empty"));
    }
    if obs.len() != cov.len() {
        return Err(Error::Dimension {
            what: "covariate rows",
            expected: obs.len(),
            actual: cov.len(),
        });
    }
    if obs.segment_ids() != cov.segment_ids() {
        return Err(Error::input(
            "observation and covariate segmentations differ",
        ));
    }
    check_model_covariates(model, cov)?;
    if obs.n_channels() != model.n_channels() {
        return Err(Error::Dimension {
            what: "observation channels",
            expected: model.n_channels(),
            actual: obs.n_channels(),
        });
    }
    Ok(())
}

fn check_model_covariates(model: &HmmModel, cov: &CovariateSeries) -> Result<()> {
    if cov.n_covariates() != model.n_covariates() {
        return Err(Error::Dimension {
            what: "covariate columns",
            expected: model.n_covariates(),
            actual: cov.n_covariates(),
        });
    }
    Ok(())
}

/// Fills `out` with per-state emission log densities; returns their maximum.
#[inline]
fn log_emissions(model: &HmmModel, x: &[Option<f64>], out: &mut [f64]) -> f64 {
    let spec = model.emissions();
    let mut max = f64::NEG_INFINITY;
    for (i, o) in out.iter_mut().enumerate() {
        *o = spec.log_density_row(i, x);
        max = max.max(*o);
    }
    max
}

/// Neumaier-compensated running sum; long log-likelihood sums otherwise lose
/// enough precision to swamp finite-difference gradients.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Log-likelihood via the scaled forward recursion, summed over segments.
pub fn forward_loglik(model: &HmmModel, obs: &ObservationSeries, cov: &CovariateSeries) -> Result<f64> {
    check_alignment(model, obs, cov)?;
    let n = model.n_states();
    let mut phi = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut logf = vec![0.0; n];
    let mut tpm = vec![0.0; n * n];
    let mut ll = 0.0;

    for seg in obs.segments() {
        let mut seg_ll = CompensatedSum::default();
        let start = seg.start;
        let delta = model.initial_distribution(cov.row(start))?;
        for t in seg {
            if t == start {
                next.copy_from_slice(&delta);
            } else {
                model.transition().fill_tpm(cov.row(t), &mut tpm)?;
                next.iter_mut().for_each(|v| *v = 0.0);
                for (i, &p) in phi.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let row = &tpm[i * n..(i + 1) * n];
                    for (nj, g) in next.iter_mut().zip(row) {
                        *nj += p * g;
                    }
                }
            }
            let m = log_emissions(model, obs.row(t), &mut logf);
            if m == f64::NEG_INFINITY {
                return Err(Error::ZeroLikelihood { t });
            }
            let mut c = 0.0;
            for (nj, lf) in next.iter_mut().zip(&logf) {
                *nj *= (lf - m).exp();
                c += *nj;
            }
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::ZeroLikelihood { t });
            }
            for (p, nj) in phi.iter_mut().zip(&next) {
                *p = nj / c;
            }
            seg_ll.add(c.ln());
            seg_ll.add(m);
        }
        ll += seg_ll.value();
    }
    Ok(ll)
}

/// Most probable state sequence (0-based labels), decoded per segment.
///
/// Ties are resolved toward the lower state index, both in the back-pointers
/// and in the final argmax.
pub fn viterbi(model: &HmmModel, obs: &ObservationSeries, cov: &CovariateSeries) -> Result<Vec<usize>> {
    check_alignment(model, obs, cov)?;
    let n = model.n_states();
    let mut path = vec![0usize; obs.len()];
    let mut logf = vec![0.0; n];
    let mut log_tpm = vec![0.0; n * n];
    let mut score = vec![0.0; n];
    let mut next = vec![0.0; n];

    for seg in obs.segments() {
        let start = seg.start;
        let mut back = vec![0usize; seg.len() * n];
        let delta = model.initial_distribution(cov.row(start))?;
        for t in seg.clone() {
            let m = log_emissions(model, obs.row(t), &mut logf);
            if m == f64::NEG_INFINITY {
                return Err(Error::ZeroLikelihood { t });
            }
            if t == start {
                for i in 0..n {
                    score[i] = delta[i].ln() + logf[i];
                }
            } else {
                model.transition().fill_log_tpm(cov.row(t), &mut log_tpm)?;
                let bp = &mut back[(t - start) * n..(t - start + 1) * n];
                for j in 0..n {
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = 0;
                    for i in 0..n {
                        let s = score[i] + log_tpm[i * n + j];
                        if s > best {
                            best = s;
                            arg = i;
                        }
                    }
                    next[j] = best + logf[j];
                    bp[j] = arg;
                }
                score.copy_from_slice(&next);
            }
            if score.iter().all(|s| *s == f64::NEG_INFINITY) {
                return Err(Error::ZeroLikelihood { t });
            }
        }
        let mut state = 0;
        for i in 1..n {
            if score[i] > score[state] {
                state = i;
            }
        }
        for t in seg.clone().rev() {
            path[t] = state;
            if t > start {
                state = back[(t - start) * n + state];
            }
        }
    }
    Ok(path)
}

/// Streaming evaluation of `delta^(t) = delta^(start) Gamma(z_{start+1}) .. Gamma(z_t)`.
pub(crate) struct Propagator<'a> {
    model: &'a HmmModel,
    tpm: Vec<f64>,
    delta: Vec<f64>,
    next: Vec<f64>,
}

impl<'a> Propagator<'a> {
    pub(crate) fn new(model: &'a HmmModel) -> Self {
        let n = model.n_states();
        Self {
            model,
            tpm: vec![0.0; n * n],
            delta: vec![0.0; n],
            next: vec![0.0; n],
        }
    }

    /// Restarts at a segment whose first covariate row is `z`.
    pub(crate) fn start(&mut self, z: &[f64]) -> Result<&[f64]> {
        let d = self.model.initial_distribution(z)?;
        self.delta.copy_from_slice(&d);
        Ok(&self.delta)
    }

    #[inline]
    pub(crate) fn step(&mut self, z: &[f64]) -> Result<&[f64]> {
        let n = self.delta.len();
        self.model.transition().fill_tpm(z, &mut self.tpm)?;
        self.next.iter_mut().for_each(|v| *v = 0.0);
        for (i, &p) in self.delta.iter().enumerate() {
            let row = &self.tpm[i * n..(i + 1) * n];
            for (nj, g) in self.next.iter_mut().zip(row) {
                *nj += p * g;
            }
        }
        // Renormalise away round-off so long paths stay on the simplex.
        let s: f64 = self.next.iter().sum();
        for (d, nj) in self.delta.iter_mut().zip(&self.next) {
            *d = nj / s;
        }
        Ok(&self.delta)
    }
}

/// Marginal state probabilities implied by the covariates alone (no
/// conditioning on observations), restarting at every segment.
pub fn propagate_state_probs(model: &HmmModel, cov: &CovariateSeries) -> Result<StateProbSeries> {
    check_model_covariates(model, cov)?;
    let n = model.n_states();
    let mut values = Vec::with_capacity(cov.len() * n);
    let mut prop = Propagator::new(model);
    for seg in cov.segments() {
        values.extend_from_slice(prop.start(cov.row(seg.start))?);
        for t in seg.start + 1..seg.end {
            values.extend_from_slice(prop.step(cov.row(t))?);
        }
    }
    Ok(StateProbSeries::from_parts(
        n,
        values,
        cov.segment_ids().to_vec(),
    ))
}
