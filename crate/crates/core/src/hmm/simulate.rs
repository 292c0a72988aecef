use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};

use super::emission::{wrap_angle, Emission};
use super::model::{CovariateSeries, HmmModel, ObservationSeries};
use super::transition::tpm_from_covariates;
use crate::error::{Error, Result};

impl Emission {
    /// Draws one value; von Mises draws use the Best-Fisher rejection sampler.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Emission::Gaussian { mean, sd } => Normal::new(mean, sd).expect("validated").sample(rng),
            Emission::Gamma { mean, sd } => {
                let shape = mean * mean / (sd * sd);
                Gamma::new(shape, sd * sd / mean).expect("validated").sample(rng)
            }
            Emission::VonMises { mean, kappa } => {
                if kappa < 1e-8 {
                    return wrap_angle(rng.random_range(-PI..PI));
                }
                let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
                let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
                let r = (1.0 + rho * rho) / (2.0 * rho);
                loop {
                    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
                    let z = (PI * u1).cos();
                    let f = (1.0 + r * z) / (r + z);
                    let c = kappa * (r - f);
                    if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
                        let theta = f.clamp(-1.0, 1.0).acos();
                        let theta = if u3 > 0.5 { theta } else { -theta };
                        return wrap_angle(mean + theta);
                    }
                }
            }
        }
    }
}

fn draw_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Simulates the latent chain along `cov` (restarting at every segment from
/// the initial-distribution policy) and draws one observation row per step.
/// Returns 0-based states and the observations, segmented like `cov`.
pub fn simulate_hmm<R: Rng + ?Sized>(
    model: &HmmModel,
    cov: &CovariateSeries,
    rng: &mut R,
) -> Result<(Vec<usize>, ObservationSeries)> {
    if cov.n_covariates() != model.n_covariates() {
        return Err(Error::Dimension {
            what: "covariate columns",
            expected: model.n_covariates(),
            actual: cov.n_covariates(),
        });
    }
    let n_ch = model.n_channels();
    let mut states = Vec::with_capacity(cov.len());
    let mut values = Vec::with_capacity(cov.len() * n_ch);
    for seg in cov.segments() {
        let mut s = draw_index(&model.initial_distribution(cov.row(seg.start))?, rng);
        for t in seg.clone() {
            if t > seg.start {
                let tpm = tpm_from_covariates(model.transition(), cov.row(t))?;
                let row: Vec<f64> = tpm.row(s).iter().copied().collect();
                s = draw_index(&row, rng);
            }
            states.push(s);
            values.extend(model.emissions().state(s).iter().map(|e| Some(e.sample(rng))));
        }
    }
    let obs = ObservationSeries::new(n_ch, values, cov.segment_ids().to_vec())?;
    Ok((states, obs))
}
