//! Maximum-likelihood fitting over unconstrained working parameters.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{
    forward_loglik, wrap_angle, CovariateSeries, Emission, EmissionSpec, Family, HmmModel,
    InitialDistribution, ObservationSeries, TransitionCoefficients,
};
use crate::optim::{fd_gradient, fd_hessian, minimize_bfgs, BfgsConfig};

/// Describes how a model is packed into a flat working vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    n_states: usize,
    n_covariates: usize,
    families: Vec<Family>,
    /// `Some` when the initial distribution is held fixed (not estimated).
    fixed_initial: Option<InitialDistribution>,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        let n = self.n_states;
        let trans = n * (n - 1) * (self.n_covariates + 1);
        let emis = n * self.families.len() * 2;
        let init = if self.fixed_initial.is_some() { 0 } else { n - 1 };
        trans + emis + init
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_transition(&self) -> usize {
        self.n_states * (self.n_states - 1) * (self.n_covariates + 1)
    }

    /// Index of the location (mean) working entry for `(state, channel)`.
    pub fn location_index(&self, state: usize, channel: usize) -> usize {
        self.n_transition() + 2 * (state * self.families.len() + channel)
    }

    pub fn families(&self) -> &[Family] {
        &self.families
    }
}

/// A model expressed on the unconstrained working scale.
///
/// Packing order: transition coefficients (as stored), then per state and
/// channel a (location, log-scale) pair, then `N-1` multinomial-logit
/// coordinates for the initial distribution when it is estimated.
/// Locations are raw for Gaussian and von Mises means and logged for gamma
/// means; scales are `log(sd)` or `log(kappa)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingParams {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

/// Packs `model`, holding its initial-distribution policy fixed.
pub fn transform(model: &HmmModel) -> WorkingParams {
    pack(model, false).expect("packing without initial estimation cannot fail")
}

/// Packs `model`; with `estimate_initial` the fixed initial distribution is
/// included as logit coordinates (it must be `Fixed` with positive entries).
pub fn pack(model: &HmmModel, estimate_initial: bool) -> Result<WorkingParams> {
    let n = model.n_states();
    let families = model.emissions().families();
    let mut values: Vec<f64> = model.transition().as_slice().to_vec();
    for i in 0..n {
        for e in model.emissions().state(i) {
            match *e {
                Emission::Gaussian { mean, sd } => values.extend([mean, sd.ln()]),
                Emission::Gamma { mean, sd } => values.extend([mean.ln(), sd.ln()]),
                Emission::VonMises { mean, kappa } => values.extend([mean, kappa.ln()]),
            }
        }
    }
    let fixed_initial = if estimate_initial {
        let InitialDistribution::Fixed(d) = model.initial() else {
            return Err(Error::input(
                "only a fixed initial distribution can be estimated",
            ));
        };
        if d.iter().any(|v| *v <= 0.0) {
            return Err(Error::input(
                "estimated initial distribution needs strictly positive entries",
            ));
        }
        values.extend(d[1..].iter().map(|v| (v / d[0]).ln()));
        None
    } else {
        Some(model.initial().clone())
    };
    Ok(WorkingParams {
        layout: ParamLayout {
            n_states: n,
            n_covariates: model.n_covariates(),
            families,
            fixed_initial,
        },
        values,
    })
}

/// Inverse of [`transform`]/[`pack`].
pub fn untransform(w: &WorkingParams) -> Result<HmmModel> {
    let l = &w.layout;
    if w.values.len() != l.len() {
        return Err(Error::Dimension {
            what: "working parameters",
            expected: l.len(),
            actual: w.values.len(),
        });
    }
    let n = l.n_states;
    let nt = l.n_transition();
    let transition = TransitionCoefficients::new(n, l.n_covariates, w.values[..nt].to_vec())?;
    let mut k = nt;
    let mut states = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = Vec::with_capacity(l.families.len());
        for fam in &l.families {
            let (a, b) = (w.values[k], w.values[k + 1]);
            k += 2;
            row.push(match fam {
                Family::Gaussian => Emission::Gaussian { mean: a, sd: b.exp() },
                Family::Gamma => Emission::Gamma {
                    mean: a.exp(),
                    sd: b.exp(),
                },
                Family::VonMises => Emission::VonMises {
                    mean: wrap_angle(a),
                    kappa: b.exp(),
                },
            });
        }
        states.push(row);
    }
    let initial = match &l.fixed_initial {
        Some(init) => init.clone(),
        None => {
            let logits = &w.values[k..k + n - 1];
            let max = logits.iter().copied().fold(0.0f64, f64::max);
            let mut d: Vec<f64> = std::iter::once(-max)
                .chain(logits.iter().map(|v| v - max))
                .map(f64::exp)
                .collect();
            let s: f64 = d.iter().sum();
            d.iter_mut().for_each(|v| *v /= s);
            InitialDistribution::Fixed(d)
        }
    };
    HmmModel::new(transition, EmissionSpec::new(states)?, initial)
}

/// Optimiser and multi-start settings for [`fit_mle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub grad_tol: f64,
    /// Additional randomly perturbed starts; the best log-likelihood wins.
    pub restarts: usize,
    /// Standard deviation of the working-scale perturbation of each restart.
    pub perturbation: f64,
    pub seed: u64,
    pub estimate_initial: bool,
    pub compute_hessian: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            rel_tol: 1e-9,
            grad_tol: 1e-5,
            restarts: 5,
            perturbation: 0.3,
            seed: 1,
            estimate_initial: false,
            compute_hessian: true,
        }
    }
}

/// Outcome of [`fit_mle`]. States are ordered by ascending first-channel location.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: HmmModel,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n_evaluations: usize,
    pub n_params: usize,
    pub aic: f64,
    pub working: WorkingParams,
    /// Finite-difference Hessian of the negative log-likelihood (working scale).
    pub observed_information: Option<DMatrix<f64>>,
    /// Inverse of the observed information, when it is positive definite.
    pub working_covariance: Option<DMatrix<f64>>,
}

pub fn aic(loglik: f64, n_params: usize) -> f64 {
    -2.0 * loglik + 2.0 * n_params as f64
}

fn neg_loglik<'a>(
    layout: &'a ParamLayout,
    obs: &'a ObservationSeries,
    cov: &'a CovariateSeries,
) -> impl Fn(&[f64]) -> f64 + 'a {
    move |x: &[f64]| {
        let w = WorkingParams {
            layout: layout.clone(),
            values: x.to_vec(),
        };
        match untransform(&w).and_then(|m| forward_loglik(&m, obs, cov)) {
            Ok(ll) if ll.is_finite() => -ll,
            _ => f64::INFINITY,
        }
    }
}

struct StartOutcome {
    x: Vec<f64>,
    value: f64,
    converged: bool,
    iterations: usize,
    evaluations: usize,
}

/// Maximises the forward log-likelihood over working parameters with BFGS
/// and central finite-difference gradients.
pub fn fit_mle(
    obs: &ObservationSeries,
    cov: &CovariateSeries,
    init: &HmmModel,
    config: &FitConfig,
) -> Result<FitResult> {
    let ll0 = forward_loglik(init, obs, cov)?;
    if !ll0.is_finite() {
        return Err(Error::input("log-likelihood at the initial model is not finite"));
    }
    let w0 = pack(init, config.estimate_initial)?;
    if w0.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::input(
            "initial model has parameters on the boundary (e.g. kappa = 0)",
        ));
    }
    let layout = w0.layout.clone();
    let bfgs = BfgsConfig {
        max_iter: config.max_iter,
        rel_tol: config.rel_tol,
        grad_tol: config.grad_tol,
    };

    let starts: Vec<Vec<f64>> = (0..=config.restarts)
        .map(|k| {
            if k == 0 {
                return w0.values.clone();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(k as u64));
            let noise = Normal::new(0.0, config.perturbation).expect("valid sd");
            w0.values.iter().map(|v| v + noise.sample(&mut rng)).collect()
        })
        .collect();

    let outcomes: Vec<StartOutcome> = starts
        .par_iter()
        .map(|x0| {
            let nll = neg_loglik(&layout, obs, cov);
            let mut f = |x: &[f64]| nll(x);
            let objective = |x: &[f64], g: &mut [f64]| {
                let v = nll(x);
                if v.is_finite() {
                    fd_gradient(&mut f, x, g);
                }
                v
            };
            let m = minimize_bfgs(objective, x0, &bfgs);
            StartOutcome {
                x: m.x,
                value: m.value,
                converged: m.converged,
                iterations: m.iterations,
                evaluations: m.evaluations * (1 + 2 * x0.len()),
            }
        })
        .collect();

    let total_evals: usize = outcomes.iter().map(|o| o.evaluations).sum();
    let best = outcomes
        .iter()
        .filter(|o| o.value.is_finite())
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .ok_or_else(|| Error::Numerical("every optimiser start diverged".into()))?;
    let (x, value) = if best.value <= -ll0 {
        (best.x.clone(), best.value)
    } else {
        (w0.values.clone(), -ll0)
    };

    let fitted = untransform(&WorkingParams {
        layout: layout.clone(),
        values: x,
    })?;
    let model = fitted.sorted_by_first_channel();
    let working = pack(&model, config.estimate_initial)?;
    let loglik = -value;
    let n_params = working.values.len();

    let (observed_information, working_covariance) = if config.compute_hessian {
        let nll = neg_loglik(&working.layout, obs, cov);
        let mut f = |x: &[f64]| nll(x);
        let info = fd_hessian(&mut f, &working.values);
        let cov = invert_information(&info).ok();
        (Some(info), cov)
    } else {
        (None, None)
    };

    Ok(FitResult {
        model,
        loglik,
        converged: best.converged,
        iterations: best.iterations,
        n_evaluations: total_evals,
        n_params,
        aic: aic(loglik, n_params),
        working,
        observed_information,
        working_covariance,
    })
}

/// Inverts an observed-information matrix, failing with an eigenvalue report
/// when it is not positive definite.
pub fn invert_information(info: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !info.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular("information matrix has non-finite entries".into()));
    }
    let sym = (info + info.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 1e-6 * max) {
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        let shown: Vec<String> = ev.iter().take(4).map(|v| format!("{v:.3e}")).collect();
        return Err(Error::Singular(format!(
            "observed information is not positive definite; smallest eigenvalues [{}], largest {max:.3e}",
            shown.join(", ")
        )));
    }
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose())
}

/// Square roots of the diagonal of an inverted information matrix.
pub fn hessian_standard_errors(info: &DMatrix<f64>) -> Result<Vec<f64>> {
    let cov = invert_information(info)?;
    Ok(cov.diagonal().iter().map(|v| v.sqrt()).collect())
}

/// Natural-scale standard errors of each emission's `[location, scale]`,
/// indexed by state then channel (delta method through the log links).
pub fn emission_standard_errors(fit: &FitResult) -> Result<Vec<Vec<[f64; 2]>>> {
    let se = standard_errors(fit)?;
    let layout = &fit.working.layout;
    Ok((0..fit.model.n_states())
        .map(|i| {
            fit.model
                .emissions()
                .state(i)
                .iter()
                .enumerate()
                .map(|(c, e)| {
                    let k = layout.location_index(i, c);
                    let (sl, ss) = (se[k], se[k + 1]);
                    match *e {
                        Emission::Gaussian { sd, .. } => [sl, sd * ss],
                        Emission::Gamma { mean, sd } => [mean * sl, sd * ss],
                        Emission::VonMises { kappa, .. } => [sl, kappa * ss],
                    }
                })
                .collect()
        })
        .collect())
}

/// Working-scale standard errors of a fit.
pub fn standard_errors(fit: &FitResult) -> Result<Vec<f64>> {
    match (&fit.working_covariance, &fit.observed_information) {
        (Some(cov), _) => Ok(cov.diagonal().iter().map(|v| v.sqrt()).collect()),
        (None, Some(info)) => hessian_standard_errors(info),
        (None, None) => Err(Error::input(
            "fit was run without computing the observed information",
        )),
    }
}

fn sd_of(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn kappa_from_resultant(r: f64) -> f64 {
    let k = if r < 0.53 {
        2.0 * r + r.powi(3) + 5.0 * r.powi(5) / 6.0
    } else if r < 0.85 {
        -0.4 + 1.39 * r + 0.43 / (1.0 - r)
    } else {
        1.0 / (r.powi(3) - 4.0 * r * r + 3.0 * r)
    };
    k.clamp(0.05, 500.0)
}

/// Data-driven starting model: rows are split into `n_states` quantile bands
/// of the first channel and each band seeds one state's emission parameters;
/// transition intercepts give 0.1 off-diagonal mass, slopes start at 0.
pub fn initial_model(
    obs: &ObservationSeries,
    n_states: usize,
    families: &[Family],
    n_covariates: usize,
) -> Result<HmmModel> {
    if n_states < 2 {
        return Err(Error::input(format!(
            "need at least 2 states to model transitions, got {n_states}"
        )));
    }
    if families.len() != obs.n_channels() {
        return Err(Error::Dimension {
            what: "emission families",
            expected: obs.n_channels(),
            actual: families.len(),
        });
    }
    let mut keyed: Vec<(f64, usize)> = obs
        .channel(0)
        .enumerate()
        .filter_map(|(t, v)| v.map(|v| (v, t)))
        .collect();
    if keyed.len() < 2 * n_states {
        return Err(Error::input(format!(
            "only {} non-missing values in the first channel",
            keyed.len()
        )));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let bands: Vec<Vec<usize>> = (0..n_states)
        .map(|i| {
            let lo = i * keyed.len() / n_states;
            let hi = (i + 1) * keyed.len() / n_states;
            keyed[lo..hi].iter().map(|(_, t)| *t).collect()
        })
        .collect();

    let mut states = Vec::with_capacity(n_states);
    for band in &bands {
        let mut row = Vec::with_capacity(families.len());
        for (c, fam) in families.iter().enumerate() {
            let vals: Vec<f64> = band.iter().filter_map(|&t| obs.row(t)[c]).collect();
            let all: Vec<f64> = obs.channel(c).flatten().collect();
            let vals = if vals.len() >= 2 { vals } else { all };
            row.push(match fam {
                Family::Gaussian => {
                    let m = vals.iter().sum::<f64>() / vals.len() as f64;
                    Emission::Gaussian {
                        mean: m,
                        sd: sd_of(&vals).max(1e-3),
                    }
                }
                Family::Gamma => {
                    let pos: Vec<f64> = vals.into_iter().filter(|v| *v > 0.0).collect();
                    if pos.len() < 2 {
                        return Err(Error::input("gamma channel has no positive values"));
                    }
                    let m = pos.iter().sum::<f64>() / pos.len() as f64;
                    Emission::Gamma {
                        mean: m,
                        sd: sd_of(&pos).max(1e-3 * m),
                    }
                }
                Family::VonMises => {
                    let (s, co) = vals
                        .iter()
                        .fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
                    let nv = vals.len() as f64;
                    let r = (s * s + co * co).sqrt() / nv;
                    Emission::VonMises {
                        mean: wrap_angle(s.atan2(co)),
                        kappa: kappa_from_resultant(r),
                    }
                }
            });
        }
        states.push(row);
    }
    let off = (0.1 / (n_states - 1) as f64 / 0.9).ln();
    let transition = TransitionCoefficients::from_fn(n_states, n_covariates, |_, _| {
        let mut b = vec![0.0; n_covariates + 1];
        b[0] = off;
        b
    })?;
    HmmModel::new(
        transition,
        EmissionSpec::new(states)?,
        InitialDistribution::Stationary,
    )
}
