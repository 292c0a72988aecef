//! Covariate-driven hidden Markov models: representation, emission densities,
//! transition matrices and the likelihood/decoding/propagation recursions.

mod emission;
mod model;
mod recursions;
mod simulate;
mod stationary;
mod transition;

pub use emission::{emission_density, ln_bessel_i0, wrap_angle, Emission, EmissionSpec, Family};
pub use model::{
    CovariateSeries, HmmModel, InitialDistribution, ObservationSeries, StateProbSeries,
};
pub(crate) use recursions::Propagator;
pub use recursions::{forward_loglik, propagate_state_probs, viterbi};
pub use simulate::simulate_hmm;
pub use stationary::stationary_distribution;
pub use transition::{tpm_from_covariates, TransitionCoefficients};
