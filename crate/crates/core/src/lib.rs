//! Covariate-driven hidden Markov models and estimators of the
//! covariate-dependent state occupancy distribution `Pr(state i | z)`.

pub mod dirichlet;
pub mod error;
pub mod estimation;
pub mod hmm;
pub mod movement;
pub mod occupancy;
pub mod optim;
pub mod resampling;
pub mod sim;

pub use error::{Error, Result};
pub use hmm::{
    CovariateSeries, Emission, EmissionSpec, HmmModel, InitialDistribution, ObservationSeries,
    StateProbSeries, TransitionCoefficients,
};
