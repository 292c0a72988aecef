//! Simulation experiments: three data-generating settings, replicate fitting
//! and comparison of occupancy estimators against a Monte Carlo reference.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dirichlet::{fit_dirichlet_smooth, predict_occupancy_within, DirichletConfig};
use crate::error::{Error, Result};
use crate::estimation::{fit_mle, initial_model, pack, untransform, FitConfig};
use crate::hmm::{
    propagate_state_probs, simulate_hmm, CovariateSeries, Emission, EmissionSpec, HmmModel,
    InitialDistribution, ObservationSeries, TransitionCoefficients,
};
use crate::occupancy::{
    average_curves, hypothetical_stationary_curve, monte_carlo_truth, quantile_sorted, BinRange,
    BinningConfig, Method, MonteCarloConfig, OccupancyCurve,
};
use crate::resampling::{
    block_bootstrap, fit_ar, occupancy_via_resampling, simulate_ar, BlockBootstrapConfig,
    ResampleOccupancyOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SettingId {
    I,
    II,
    III,
}

impl fmt::Display for SettingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SettingId::I => "I",
            SettingId::II => "II",
            SettingId::III => "III",
        })
    }
}

impl FromStr for SettingId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(SettingId::I),
            "II" | "2" => Ok(SettingId::II),
            "III" | "3" => Ok(SettingId::III),
            other => Err(Error::input(format!("unknown setting '{other}' (expected I, II or III)"))),
        }
    }
}

/// Stationary covariate generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateProcess {
    /// `z_t = mean + phi (z_{t-1} - mean) + eps_t`, started in its stationary law.
    Ar1 { phi: f64, noise_sd: f64, mean: f64 },
    /// `amplitude * sin(2 pi (t + u) / period) + eps_t` with a random phase `u`.
    Trig {
        amplitude: f64,
        period: f64,
        noise_sd: f64,
    },
}

impl CovariateProcess {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CovariateProcess::Ar1 { phi, noise_sd, mean } => {
                if !(phi.abs() < 1.0 && noise_sd > 0.0 && mean.is_finite()) {
                    return Err(Error::input("AR(1) generator needs |phi| < 1 and a positive noise sd"));
                }
            }
            CovariateProcess::Trig {
                amplitude,
                period,
                noise_sd,
            } => {
                if !(amplitude.is_finite() && period > 0.0 && noise_sd >= 0.0) {
                    return Err(Error::input("trigonometric generator needs a positive period"));
                }
            }
        }
        Ok(())
    }

    pub fn generate(&self, len: usize, seed: u64) -> Result<Vec<f64>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut out = Vec::with_capacity(len);
        match *self {
            CovariateProcess::Ar1 { phi, noise_sd, mean } => {
                let mut z = mean + noise_sd / (1.0 - phi * phi).sqrt() * std_normal.sample(&mut rng);
                for _ in 0..len {
                    out.push(z);
                    z = mean + phi * (z - mean) + noise_sd * std_normal.sample(&mut rng);
                }
            }
            CovariateProcess::Trig {
                amplitude,
                period,
                noise_sd,
            } => {
                let phase = rng.random::<f64>() * period;
                for t in 0..len {
                    let w = 2.0 * PI * (t as f64 + phase) / period;
                    out.push(amplitude * w.sin() + noise_sd * std_normal.sample(&mut rng));
                }
            }
        }
        Ok(out)
    }
}

/// A complete data-generating setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSpec {
    pub id: SettingId,
    pub covariate: CovariateProcess,
    pub model: HmmModel,
    pub length: usize,
    pub replicates: usize,
}

/// Shared 3-state transition model: `eta_ij = b0 + b1 z` for the ordered
/// off-diagonal pairs (0,1), (0,2), (1,0), (1,2), (2,0), (2,1).
const DEFAULT_BETA: [[f64; 2]; 6] = [
    [-2.1, 1.25],
    [-2.0, 1.0],
    [-2.2, -0.25],
    [-2.3, 0.4],
    [-3.4, -0.2],
    [-3.0, -0.05],
];

pub fn default_model() -> HmmModel {
    let beta = DEFAULT_BETA.iter().flatten().copied().collect();
    let transition = TransitionCoefficients::new(3, 1, beta).expect("valid default coefficients");
    let emissions = EmissionSpec::new(
        [1.0, 4.0, 7.0]
            .iter()
            .map(|&mean| vec![Emission::Gaussian { mean, sd: 1.0 }])
            .collect(),
    )
    .expect("valid default emissions");
    HmmModel::new(transition, emissions, InitialDistribution::Stationary).expect("valid default model")
}

impl SettingSpec {
    pub fn default_for(id: SettingId) -> Self {
        let ar1 = |phi: f64| CovariateProcess::Ar1 {
            phi,
            noise_sd: (1.0 - phi * phi).sqrt(),
            mean: 0.0,
        };
        let covariate = match id {
            SettingId::I => ar1(0.95),
            SettingId::II => ar1(0.7),
            SettingId::III => CovariateProcess::Trig {
                amplitude: 1.155,
                period: 100.0,
                noise_sd: 1.155 / 2.0,
            },
        };
        Self {
            id,
            covariate,
            model: default_model(),
            length: 2000,
            replicates: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.covariate.validate()?;
        if self.model.n_covariates() != 1 {
            return Err(Error::input("simulation settings use a single covariate"));
        }
        if self.length < 10 {
            return Err(Error::input("simulated series must have at least 10 steps"));
        }
        Ok(())
    }

    /// Default block length: one period for a periodic covariate, 50 otherwise.
    pub fn default_block_length(&self) -> usize {
        match self.covariate {
            CovariateProcess::Trig { period, .. } => period.round().max(1.0) as usize,
            CovariateProcess::Ar1 { .. } => 50,
        }
    }
}

/// Independent sub-seed for `stream`, derived from `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.random()
}

/// Seed of replicate `index` in an experiment with master `seed`.
pub fn replicate_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, 100 + index as u64)
}

/// Simulated observations, covariates and the latent states behind them.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub observations: ObservationSeries,
    pub covariates: CovariateSeries,
    pub states: Vec<usize>,
}

/// Simulates one dataset; fully determined by `seed`.
pub fn generate_setting(spec: &SettingSpec, seed: u64) -> Result<SimulatedData> {
    spec.validate()?;
    let z = spec.covariate.generate(spec.length, derive_seed(seed, 1))?;
    let cov = CovariateSeries::from_column(z)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let (states, observations) = simulate_hmm(&spec.model, &cov, &mut rng)?;
    Ok(SimulatedData {
        observations,
        covariates: cov,
        states,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Stationary,
    ArResample,
    BlockBootstrap,
    Dirichlet,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::Stationary,
        Estimator::ArResample,
        Estimator::BlockBootstrap,
        Estimator::Dirichlet,
    ];

    pub fn method(self) -> Method {
        match self {
            Estimator::Stationary => Method::Stationary,
            Estimator::ArResample => Method::ArResample,
            Estimator::BlockBootstrap => Method::BlockBootstrap,
            Estimator::Dirichlet => Method::Dirichlet,
        }
    }

    fn is_binned(self) -> bool {
        matches!(self, Estimator::ArResample | Estimator::BlockBootstrap)
    }
}

/// How replicate fits are started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitMode {
    /// True parameters plus Gaussian noise of this sd on the working scale.
    NearTruth { perturbation: f64 },
    /// Data-driven quantile initialisation (multi-start per the fit config).
    ColdStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub replicates: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    /// Length of each synthetic covariate path.
    pub resample_length: usize,
    /// `None` uses the setting's default block length.
    pub block_length: Option<usize>,
    pub burn_in: usize,
    pub ar_max_order: usize,
    pub mc: MonteCarloConfig,
    pub fit: FitConfig,
    pub init: InitMode,
    pub dirichlet: DirichletConfig,
    /// Whether to compute emission-mean standard errors per replicate.
    pub standard_errors: bool,
    pub max_failure_rate: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            replicates: 200,
            seed: 1,
            estimators: vec![Estimator::Stationary, Estimator::ArResample, Estimator::BlockBootstrap],
            resample_length: 1_000_000,
            block_length: None,
            burn_in: 1000,
            ar_max_order: 5,
            mc: MonteCarloConfig::default(),
            fit: FitConfig {
                restarts: 0,
                compute_hessian: false,
                ..FitConfig::default()
            },
            init: InitMode::NearTruth { perturbation: 0.1 },
            dirichlet: DirichletConfig::default(),
            standard_errors: false,
            max_failure_rate: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub index: usize,
    pub seed: u64,
    pub loglik: f64,
    pub converged: bool,
    pub aic: f64,
    /// First-channel location per (sorted) state.
    pub emission_means: Vec<f64>,
    pub emission_mean_se: Option<Vec<f64>>,
    pub ar_order: Option<usize>,
    pub curves: Vec<OccupancyCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub index: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    /// Replicate mean (count-weighted for binned estimators).
    pub mean_curve: OccupancyCurve,
    pub max_abs_bias: Option<f64>,
    pub max_abs_bias_central90: Option<f64>,
    pub mean_abs_bias_central50: Option<f64>,
    pub mean_abs_bias_central90: Option<f64>,
    /// Share of grid points where the pointwise 2.5%-97.5% replicate envelope
    /// contains the reference curve for every state.
    pub envelope_coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub setting: SettingId,
    pub seed: u64,
    pub mc_seed: u64,
    pub truth: OccupancyCurve,
    pub replicates: Vec<ReplicateResult>,
    pub failures: Vec<ReplicateFailure>,
    pub summaries: Vec<EstimatorSummary>,
}

/// Compact view of a report without the per-replicate curves.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary<'a> {
    pub setting: SettingId,
    pub seed: u64,
    pub mc_seed: u64,
    pub replicate_seeds: Vec<u64>,
    pub n_replicates: usize,
    pub n_failed: usize,
    pub failures: &'a [ReplicateFailure],
    pub non_converged: usize,
    pub estimators: Vec<EstimatorStats>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorStats {
    pub estimator: Estimator,
    pub max_abs_bias: Option<f64>,
    pub max_abs_bias_central90: Option<f64>,
    pub mean_abs_bias_central50: Option<f64>,
    pub mean_abs_bias_central90: Option<f64>,
    pub envelope_coverage: Option<f64>,
}

impl ExperimentReport {
    pub fn summary(&self) -> ExperimentSummary<'_> {
        ExperimentSummary {
            setting: self.setting,
            seed: self.seed,
            mc_seed: self.mc_seed,
            replicate_seeds: self
                .replicates
                .iter()
                .map(|r| r.seed)
                .chain(self.failures.iter().map(|f| f.seed))
                .collect(),
            n_replicates: self.replicates.len() + self.failures.len(),
            n_failed: self.failures.len(),
            failures: &self.failures,
            non_converged: self.replicates.iter().filter(|r| !r.converged).count(),
            estimators: self
                .summaries
                .iter()
                .map(|s| EstimatorStats {
                    estimator: s.estimator,
                    max_abs_bias: s.max_abs_bias,
                    max_abs_bias_central90: s.max_abs_bias_central90,
                    mean_abs_bias_central50: s.mean_abs_bias_central50,
                    mean_abs_bias_central90: s.mean_abs_bias_central90,
                    envelope_coverage: s.envelope_coverage,
                })
                .collect(),
        }
    }

    pub fn estimator(&self, e: Estimator) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == e)
    }

    /// Long-format CSV: `replicate,z,count,p_1..p_N,method`, truth rows use
    /// replicate `truth`, replicate-mean rows use `mean`.
    pub fn write_curves_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.truth.n_states();
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["replicate".to_string(), "z".into(), "count".into()];
        header.extend((1..=n).map(|i| format!("p_{i}")));
        header.push("method".into());
        wr.write_record(&header)?;
        let mut emit = |label: &str, c: &OccupancyCurve| -> Result<()> {
            for k in 0..c.len() {
                let mut rec = vec![label.to_string(), c.grid[k].to_string(), c.counts[k].to_string()];
                match &c.probs[k] {
                    Some(p) => rec.extend(p.iter().map(f64::to_string)),
                    None => rec.extend(std::iter::repeat_n(String::new(), n)),
                }
                rec.push(c.method.to_string());
                wr.write_record(&rec)?;
            }
            Ok(())
        };
        emit("truth", &self.truth)?;
        for r in &self.replicates {
            for c in &r.curves {
                emit(&r.index.to_string(), c)?;
            }
        }
        for s in &self.summaries {
            emit("mean", &s.mean_curve)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Binning configuration reproducing the bins of `truth` exactly.
pub fn binning_on_grid(truth: &OccupancyCurve, min_count: u64) -> Result<BinningConfig> {
    let n = truth.len();
    if n < 2 {
        return Err(Error::input("reference curve needs at least 2 grid points"));
    }
    let w = (truth.grid[n - 1] - truth.grid[0]) / (n - 1) as f64;
    Ok(BinningConfig {
        n_bins: n,
        range: BinRange::Fixed {
            lo: truth.grid[0] - w / 2.0,
            hi: truth.grid[n - 1] + w / 2.0,
        },
        min_count,
    })
}

/// Replaces bin centres that match `grid` up to rounding with `grid` itself.
fn snap_to_grid(mut curve: OccupancyCurve, grid: &[f64]) -> Result<OccupancyCurve> {
    let scale = grid.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let matches = curve.grid.len() == grid.len()
        && curve.grid.iter().zip(grid).all(|(a, b)| (a - b).abs() <= 1e-9 * scale);
    if !matches {
        return Err(Error::Numerical("binned curve does not match the reference grid".into()));
    }
    curve.grid = grid.to_vec();
    Ok(curve)
}

fn mc_generator(spec: &SettingSpec) -> impl Fn(usize, u64) -> Result<Vec<f64>> + Sync + '_ {
    move |len, seed| spec.covariate.generate(len, seed)
}

/// Reference curve of a setting under its true model.
pub fn setting_truth(spec: &SettingSpec, mc: &MonteCarloConfig, seed: u64) -> Result<OccupancyCurve> {
    monte_carlo_truth(&spec.model, &mc_generator(spec), mc, seed)
}

/// Data, starting model and optimiser settings of the replicate with `seed`.
pub fn prepare_replicate(
    spec: &SettingSpec,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(SimulatedData, HmmModel, FitConfig)> {
    let data = generate_setting(spec, seed)?;
    let init = match config.init {
        InitMode::NearTruth { perturbation } => {
            let mut w = pack(&spec.model, false)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
            let noise = Normal::new(0.0, perturbation.max(0.0))
                .map_err(|e| Error::input(e.to_string()))?;
            w.values.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
            untransform(&w)?
        }
        InitMode::ColdStart => initial_model(
            &data.observations,
            spec.model.n_states(),
            &spec.model.emissions().families(),
            spec.model.n_covariates(),
        )?,
    };
    let fit_cfg = FitConfig {
        seed: derive_seed(seed, 4),
        compute_hessian: config.fit.compute_hessian || config.standard_errors,
        ..config.fit.clone()
    };
    Ok((data, init, fit_cfg))
}

/// Fits one replicate and evaluates the requested estimators on `truth`'s grid.
pub fn run_replicate(
    spec: &SettingSpec,
    config: &ExperimentConfig,
    truth: &OccupancyCurve,
    index: usize,
    seed: u64,
) -> Result<ReplicateResult> {
    let (data, init, fit_cfg) = prepare_replicate(spec, config, seed)?;
    let (obs, cov) = (&data.observations, &data.covariates);
    let fit = fit_mle(obs, cov, &init, &fit_cfg)?;
    let n = fit.model.n_states();
    let emission_means: Vec<f64> = (0..n).map(|i| fit.model.emissions().get(i, 0).location()).collect();
    let emission_mean_se = fit.working_covariance.as_ref().map(|c| {
        (0..n)
            .map(|i| {
                let k = fit.working.layout.location_index(i, 0);
                c[(k, k)].sqrt()
            })
            .collect()
    });

    let z = cov.column(0);
    let binning = binning_on_grid(truth, config.mc.binning.min_count)?;
    let opts = ResampleOccupancyOptions {
        burn_in: config.burn_in,
        ..ResampleOccupancyOptions::default()
    };
    let mut curves = Vec::with_capacity(config.estimators.len());
    let mut ar_order = None;
    for (k, est) in config.estimators.iter().enumerate() {
        let stream_seed = derive_seed(seed, 10 + k as u64);
        let curve = match est {
            Estimator::Stationary => hypothetical_stationary_curve(&fit.model, &truth.grid, 0, &[0.0])?,
            Estimator::ArResample => {
                let ar = fit_ar(&z, config.ar_max_order)?;
                ar_order = Some(ar.model.order());
                let path = simulate_ar(&ar.model, config.resample_length, stream_seed);
                let c = occupancy_via_resampling(&fit.model, &path, &binning, &opts, Method::ArResample)?;
                snap_to_grid(c, &truth.grid)?
            }
            Estimator::BlockBootstrap => {
                let l = config.block_length.unwrap_or_else(|| spec.default_block_length());
                let bb = BlockBootstrapConfig {
                    block_length: l,
                    output_blocks: config.resample_length.div_ceil(l.max(1)),
                    detrend: None,
                };
                let path = block_bootstrap(&z, None, &bb, stream_seed)?;
                let c = occupancy_via_resampling(&fit.model, &path, &binning, &opts, Method::BlockBootstrap)?;
                snap_to_grid(c, &truth.grid)?
            }
            Estimator::Dirichlet => {
                let probs = propagate_state_probs(&fit.model, cov)?;
                let dfit = fit_dirichlet_smooth(&probs, &z, &config.dirichlet)?;
                predict_occupancy_within(&dfit, &truth.grid)
            }
        };
        curves.push(curve);
    }
    Ok(ReplicateResult {
        index,
        seed,
        loglik: fit.loglik,
        converged: fit.converged,
        aic: fit.aic,
        emission_means,
        emission_mean_se,
        ar_order,
        curves,
    })
}

fn envelope_coverage(truth: &OccupancyCurve, curves: &[&OccupancyCurve]) -> Option<f64> {
    let mut covered = 0usize;
    let mut total = 0usize;
    for (k, t) in truth.probs.iter().enumerate() {
        let Some(t) = t else { continue };
        let rows: Vec<&Vec<f64>> = curves.iter().filter_map(|c| c.probs[k].as_ref()).collect();
        if rows.is_empty() {
            continue;
        }
        total += 1;
        let inside = t.iter().enumerate().all(|(i, ti)| {
            let mut v: Vec<f64> = rows.iter().map(|r| r[i]).collect();
            v.sort_by(f64::total_cmp);
            let (lo, hi) = (quantile_sorted(&v, 0.025), quantile_sorted(&v, 0.975));
            *ti >= lo - 1e-12 && *ti <= hi + 1e-12
        });
        covered += usize::from(inside);
    }
    (total > 0).then(|| covered as f64 / total as f64)
}

/// Summarises one estimator's replicate curves against the reference.
pub fn summarize(
    estimator: Estimator,
    truth: &OccupancyCurve,
    curves: &[&OccupancyCurve],
) -> Result<EstimatorSummary> {
    let owned: Vec<OccupancyCurve> = curves.iter().map(|c| (*c).clone()).collect();
    let mean_curve = average_curves(&owned, estimator.is_binned())?;
    let c90 = truth.central_mask(0.9);
    let c50 = truth.central_mask(0.5);
    Ok(EstimatorSummary {
        estimator,
        max_abs_bias: mean_curve.max_abs_deviation(truth, None)?,
        max_abs_bias_central90: mean_curve.max_abs_deviation(truth, Some(&c90))?,
        mean_abs_bias_central50: mean_curve.mean_abs_deviation(truth, Some(&c50))?,
        mean_abs_bias_central90: mean_curve.mean_abs_deviation(truth, Some(&c90))?,
        envelope_coverage: envelope_coverage(truth, curves),
        mean_curve,
    })
}

/// Runs `config.replicates` replicates in parallel. Replicates that fail are
/// logged and excluded; the experiment fails when more than
/// `max_failure_rate` of them do.
pub fn run_experiment(spec: &SettingSpec, config: &ExperimentConfig) -> Result<ExperimentReport> {
    spec.validate()?;
    if config.replicates == 0 {
        return Err(Error::input("at least one replicate is required"));
    }
    let mc_seed = derive_seed(config.seed, 0);
    let truth = setting_truth(spec, &config.mc, mc_seed)?;
    let seeds: Vec<u64> = (0..config.replicates)
        .map(|r| replicate_seed(config.seed, r))
        .collect();
    let outcomes: Vec<std::result::Result<ReplicateResult, ReplicateFailure>> = seeds
        .par_iter()
        .enumerate()
        .map(|(index, &seed)| {
            run_replicate(spec, config, &truth, index, seed).map_err(|e| {
                log::warn!("replicate {index} (seed {seed}) failed: {e}");
                ReplicateFailure {
                    index,
                    seed,
                    message: e.to_string(),
                }
            })
        })
        .collect();
    let (mut replicates, mut failures) = (Vec::new(), Vec::new());
    for o in outcomes {
        match o {
            Ok(r) => replicates.push(r),
            Err(f) => failures.push(f),
        }
    }
    if failures.len() as f64 > config.max_failure_rate * config.replicates as f64 || replicates.is_empty() {
        return Err(Error::Numerical(format!(
            "{} of {} replicates failed",
            failures.len(),
            config.replicates
        )));
    }
    let summaries = config
        .estimators
        .iter()
        .enumerate()
        .map(|(k, &e)| {
            let curves: Vec<&OccupancyCurve> = replicates.iter().map(|r| &r.curves[k]).collect();
            summarize(e, &truth, &curves)
        })
        .collect::<Result<_>>()?;
    Ok(ExperimentReport {
        setting: spec.id,
        seed: config.seed,
        mc_seed,
        truth,
        replicates,
        failures,
        summaries,
    })
}
