//! Run configuration: one TOML file per run, optionally overridden by flags,
//! and persisted in resolved form next to the outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use occuhmm_core::dirichlet::DirichletConfig;
use occuhmm_core::estimation::FitConfig;
use occuhmm_core::hmm::Family;
use occuhmm_core::movement::{ColumnMapping, CoordinateMode, PreprocessConfig};
use occuhmm_core::occupancy::{BinningConfig, MonteCarloConfig};
use occuhmm_core::sim::{CovariateProcess, ExperimentConfig, SettingId, SettingSpec};

use crate::error::{CliError, CliResult};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; copied into every seeded component when resolving.
    pub seed: u64,
    pub out: PathBuf,
    /// Treat non-convergence as a failure (exit code 3).
    pub strict: bool,
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub fit: FitConfig,
    pub occupancy: OccupancyConfig,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("out"),
            strict: false,
            data: DataConfig::default(),
            preprocess: PreprocessConfig::default(),
            model: ModelConfig::default(),
            fit: FitConfig::default(),
            occupancy: OccupancyConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Raw tracking file read by `preprocess`.
    pub raw: Option<PathBuf>,
    pub mode: CoordinateMode,
    pub columns: ColumnMapping,
    /// Canonical aligned series; defaults to `<out>/data.csv`.
    pub canonical: Option<PathBuf>,
    /// Positions sidecar; defaults to `<out>/positions.csv`.
    pub positions: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_states: usize,
    /// Observation columns of the canonical file, one per channel.
    pub channels: Vec<String>,
    pub families: Vec<Family>,
    /// Covariate columns entering the transition model.
    pub covariates: Vec<String>,
    /// Starting model for `fit`; data-driven when absent.
    pub init: Option<PathBuf>,
    /// Fitted model; defaults to `<out>/model.json`.
    pub fitted: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_states: 3,
            channels: vec!["step".into(), "angle".into()],
            families: vec![Family::Gamma, Family::VonMises],
            covariates: Vec::new(),
            init: None,
            fitted: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OccupancyMethod {
    #[default]
    Stationary,
    Ar,
    Bb,
    Dirichlet,
    Mc,
}

impl OccupancyMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            OccupancyMethod::Stationary => "stationary",
            OccupancyMethod::Ar => "ar",
            OccupancyMethod::Bb => "bb",
            OccupancyMethod::Dirichlet => "dirichlet",
            OccupancyMethod::Mc => "mc",
        }
    }
}

/// Covariate generator for the Monte Carlo reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    pub process: CovariateProcess,
    #[serde(default)]
    pub config: MonteCarloConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OccupancyConfig {
    pub method: OccupancyMethod,
    /// Covariate on the curve's axis; defaults to the first model covariate.
    pub column: Option<String>,
    /// Values of the other covariates for the stationary curve; defaults to
    /// their sample means.
    pub fixed: Option<Vec<f64>>,
    pub binning: BinningConfig,
    pub burn_in: usize,
    pub restart_every: Option<usize>,
    pub resample_length: usize,
    pub ar_max_order: usize,
    pub block_length: usize,
    /// Period (days) of a seasonal trend removed before block resampling.
    pub detrend_period: Option<f64>,
    pub dirichlet: DirichletConfig,
    pub mc: Option<McSpec>,
    pub max_scatter_points: usize,
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        Self {
            method: OccupancyMethod::Stationary,
            column: None,
            fixed: None,
            binning: BinningConfig::default(),
            burn_in: 1000,
            restart_every: None,
            resample_length: 1_000_000,
            ar_max_order: 5,
            block_length: 24 * 7,
            detrend_period: None,
            dirichlet: DirichletConfig::default(),
            mc: None,
            max_scatter_points: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub setting: SettingId,
    /// Replaces the built-in setting definitions.
    pub settings_file: Option<PathBuf>,
    pub experiment: ExperimentConfig,
    /// Number of leading replicates whose data, start model and fit config
    /// are written out for standalone refitting.
    pub export_replicates: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            setting: SettingId::I,
            settings_file: None,
            experiment: ExperimentConfig::default(),
            export_replicates: 0,
        }
    }
}

/// Setting definitions keyed by id, as stored in a settings file.
pub type SettingsTable = BTreeMap<String, SettingSpec>;

pub fn builtin_settings() -> SettingsTable {
    [SettingId::I, SettingId::II, SettingId::III]
        .into_iter()
        .map(|id| (id.to_string(), SettingSpec::default_for(id)))
        .collect()
}

pub fn read_settings(path: &Path) -> CliResult<SettingsTable> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let table: SettingsTable =
        toml::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    for (key, spec) in &table {
        if spec.id.to_string() != *key {
            return Err(CliError::input(format!(
                "{}: table '{key}' holds setting {}",
                path.display(),
                spec.id
            )));
        }
        spec.validate()?;
    }
    Ok(table)
}

/// Flag overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub method: Option<OccupancyMethod>,
    pub setting: Option<SettingId>,
    pub replicates: Option<usize>,
    pub strict: bool,
}

fn absolutize(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::input(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    /// Applies overrides, makes paths absolute relative to `base` and copies
    /// the master seed into seeded components.
    pub fn resolve(mut self, base: &Path, ov: &Overrides) -> CliResult<Self> {
        if let Some(s) = ov.seed {
            self.seed = s;
        }
        if let Some(o) = &ov.out {
            self.out = o.clone();
        }
        if let Some(m) = ov.method {
            self.occupancy.method = m;
        }
        if let Some(s) = ov.setting {
            self.simulate.setting = s;
        }
        if let Some(r) = ov.replicates {
            self.simulate.experiment.replicates = r;
        }
        self.strict |= ov.strict;
        self.fit.seed = self.seed;
        self.simulate.experiment.seed = self.seed;

        let cwd = std::env::current_dir()?;
        let base = if base.is_absolute() { base.to_path_buf() } else { cwd.join(base) };
        if ov.out.is_some() {
            absolutize(&cwd, &mut self.out);
        } else {
            absolutize(&base, &mut self.out);
        }
        for p in [
            &mut self.data.raw,
            &mut self.data.canonical,
            &mut self.data.positions,
            &mut self.model.init,
            &mut self.model.fitted,
            &mut self.simulate.settings_file,
        ]
        .into_iter()
        .flatten()
        {
            absolutize(&base, p);
        }
        let out = self.out.clone();
        self.data.canonical.get_or_insert_with(|| out.join("data.csv"));
        self.data.positions.get_or_insert_with(|| out.join("positions.csv"));
        self.model.fitted.get_or_insert_with(|| out.join("model.json"));
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> CliResult<()> {
        let m = &self.model;
        if m.channels.is_empty() || m.channels.len() != m.families.len() {
            return Err(CliError::input(format!(
                "model lists {} channels but {} families",
                m.channels.len(),
                m.families.len()
            )));
        }
        if m.n_states < 2 {
            return Err(CliError::input("model.n_states must be at least 2"));
        }
        if self.occupancy.max_scatter_points == 0 {
            return Err(CliError::input("occupancy.max_scatter_points must be positive"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Numerical(format!("cannot serialise config: {e}")))
    }

    /// Creates the output directory and writes the resolved config into it.
    pub fn persist(&self) -> CliResult<()> {
        std::fs::create_dir_all(&self.out)?;
        std::fs::write(self.out.join(RESOLVED_CONFIG), self.to_toml()?)?;
        Ok(())
    }

    pub fn canonical_path(&self) -> &Path {
        self.data.canonical.as_deref().expect("resolved")
    }

    pub fn positions_path(&self) -> &Path {
        self.data.positions.as_deref().expect("resolved")
    }

    pub fn fitted_path(&self) -> &Path {
        self.model.fitted.as_deref().expect("resolved")
    }

    pub fn setting_spec(&self) -> CliResult<SettingSpec> {
        let table = match &self.simulate.settings_file {
            Some(p) => read_settings(p)?,
            None => builtin_settings(),
        };
        table
            .get(&self.simulate.setting.to_string())
            .cloned()
            .ok_or_else(|| CliError::input(format!("setting {} is not defined", self.simulate.setting)))
    }
}
