//! The five subcommands. Each reads a resolved [`RunConfig`], writes its
//! outputs under `config.out` and never prints results to stdout beyond a
//! short summary line.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use occuhmm_core::dirichlet::{fit_dirichlet_smooth, predict_occupancy_within};
use occuhmm_core::estimation::{emission_standard_errors, fit_mle, initial_model, standard_errors};
use occuhmm_core::hmm::{propagate_state_probs, viterbi, CovariateSeries, HmmModel, ObservationSeries};
use occuhmm_core::movement::{
    format_timestamp, impute_and_segment, regularize, remove_outliers, steps_and_turns, CanonicalTable, RawTrack,
};
use occuhmm_core::occupancy::{
    hypothetical_stationary_curve, monte_carlo_truth, BinAccumulator, BinRange, BinningConfig, Method,
    MonteCarloConfig, OccupancyCurve,
};
use occuhmm_core::resampling::{
    block_bootstrap, fit_ar, fit_seasonal_trend, occupancy_via_resampling, simulate_ar, BlockBootstrapConfig,
    ResampleOccupancyOptions,
};
use occuhmm_core::sim::{prepare_replicate, replicate_seed, run_experiment, ExperimentReport};

use crate::config::{DataConfig, ModelConfig, OccupancyMethod, RunConfig};
use crate::error::{CliError, CliResult};
use crate::svg::{colour, every_kth, Plot};

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", path.display())))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn with_context<T>(path: &Path, r: occuhmm_core::Result<T>) -> CliResult<T> {
    r.map_err(|e| {
        let c = CliError::from(e);
        match c {
            CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
            other => other,
        }
    })
}

pub fn load_model(path: &Path) -> CliResult<HmmModel> {
    serde_json::from_reader(open(path)?)
        .map_err(|e| CliError::input(format!("invalid model file {}: {e}", path.display())))
}

fn load_table(path: &Path) -> CliResult<CanonicalTable> {
    with_context(path, CanonicalTable::read_csv(open(path)?))
}

fn check_model(model: &HmmModel, m: &ModelConfig) -> CliResult<()> {
    if model.n_channels() != m.channels.len() {
        return Err(CliError::input(format!(
            "model has {} observation channels but the config lists {}",
            model.n_channels(),
            m.channels.len()
        )));
    }
    if model.emissions().families() != m.families {
        return Err(CliError::input(format!(
            "model emission families {:?} differ from the configured {:?}",
            model.emissions().families(),
            m.families
        )));
    }
    if model.n_covariates() != m.covariates.len() {
        return Err(CliError::input(format!(
            "model uses {} covariates but the config lists {}",
            model.n_covariates(),
            m.covariates.len()
        )));
    }
    Ok(())
}

fn inputs(cfg: &RunConfig, table: &CanonicalTable) -> CliResult<(ObservationSeries, CovariateSeries)> {
    let path = cfg.canonical_path();
    let obs = with_context(path, table.observations(&cfg.model.channels))?;
    let cov = with_context(path, table.covariates(&cfg.model.covariates))?;
    Ok((obs, cov))
}

#[derive(Debug, Serialize)]
struct PreprocessLog<'a> {
    input: &'a Path,
    regularize: occuhmm_core::movement::RegularizeStats,
    outliers_removed: usize,
    segmentation: occuhmm_core::movement::SegmentStats,
}

pub fn preprocess(cfg: &RunConfig) -> CliResult<String> {
    let DataConfig { raw, mode, columns, .. } = &cfg.data;
    let raw = raw
        .as_deref()
        .ok_or_else(|| CliError::input("data.raw must name the tracking file"))?;
    let track = with_context(raw, RawTrack::read_csv(open(raw)?, columns, *mode))?;
    let (grid, reg) = regularize(&track, &cfg.preprocess)?;
    let (clean, removed) = remove_outliers(&grid, &cfg.preprocess);
    let moves = steps_and_turns(&clean);
    let (data, seg) = impute_and_segment(&clean, &moves, &cfg.preprocess)?;
    let mut w = create(cfg.canonical_path())?;
    data.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(cfg.positions_path())?;
    data.write_positions_csv(&mut w)?;
    w.flush()?;
    let log = PreprocessLog {
        input: raw,
        regularize: reg,
        outliers_removed: removed,
        segmentation: seg,
    };
    write_json(&cfg.out.join("preprocess_log.json"), &log)?;
    Ok(format!(
        "{} rows in {} segments written to {}",
        log.segmentation.rows,
        log.segmentation.segments,
        cfg.canonical_path().display()
    ))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub loglik: f64,
    pub aic: f64,
    pub n_params: usize,
    pub converged: bool,
    pub iterations: usize,
    pub n_evaluations: usize,
    pub n_rows: usize,
    pub n_segments: usize,
    pub seed: u64,
    /// `[location, scale]` per state and channel, natural scale.
    pub emission_standard_errors: Option<Vec<Vec<[f64; 2]>>>,
    pub transition_standard_errors: Option<Vec<f64>>,
    pub standard_error_note: Option<String>,
}

pub fn fit(cfg: &RunConfig) -> CliResult<String> {
    let table = load_table(cfg.canonical_path())?;
    let (obs, cov) = inputs(cfg, &table)?;
    let init = match &cfg.model.init {
        Some(p) => {
            let m = load_model(p)?;
            check_model(&m, &cfg.model)?;
            m
        }
        None => initial_model(&obs, cfg.model.n_states, &cfg.model.families, cfg.model.covariates.len())?,
    };
    let result = fit_mle(&obs, &cov, &init, &cfg.fit)?;
    let (emission_se, transition_se, note) = if cfg.fit.compute_hessian {
        match (emission_standard_errors(&result), standard_errors(&result)) {
            (Ok(e), Ok(w)) => (Some(e), Some(w[..result.working.layout.n_transition()].to_vec()), None),
            (Err(e), _) | (_, Err(e)) => {
                log::warn!("standard errors unavailable: {e}");
                (None, None, Some(e.to_string()))
            }
        }
    } else {
        (None, None, Some("observed information not computed".into()))
    };
    write_json(cfg.fitted_path(), &result.model)?;
    let report = FitReport {
        loglik: result.loglik,
        aic: result.aic,
        n_params: result.n_params,
        converged: result.converged,
        iterations: result.iterations,
        n_evaluations: result.n_evaluations,
        n_rows: obs.len(),
        n_segments: obs.segments().len(),
        seed: cfg.fit.seed,
        emission_standard_errors: emission_se,
        transition_standard_errors: transition_se,
        standard_error_note: note,
    };
    write_json(&cfg.out.join("fit_report.json"), &report)?;
    if cfg.strict && !report.converged {
        return Err(CliError::Numerical(format!(
            "optimiser did not converge after {} iterations",
            report.iterations
        )));
    }
    Ok(format!(
        "loglik {:.6} aic {:.3} converged {}",
        report.loglik, report.aic, report.converged
    ))
}

/// Writes `t,segment,z,p_1..p_N` for every row.
fn write_state_probs(
    path: &Path,
    table: &CanonicalTable,
    z: &[Option<f64>],
    probs: &occuhmm_core::hmm::StateProbSeries,
) -> CliResult<()> {
    let mut wr = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["t".to_string(), "segment".into(), "z".into()];
    header.extend((1..=probs.n_states()).map(|i| format!("p_{i}")));
    wr.write_record(&header)?;
    for t in 0..probs.len() {
        let mut rec = vec![
            format_timestamp(&table.times[t]),
            table.segment[t].to_string(),
            z[t].map_or_else(String::new, |v| v.to_string()),
        ];
        rec.extend(probs.row(t).iter().map(f64::to_string));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

fn read_state_probs(path: &Path) -> CliResult<Vec<(f64, Vec<f64>)>> {
    let mut rd = csv::Reader::from_reader(open(path)?);
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let Ok(z) = rec[2].parse::<f64>() else { continue };
        let p = rec
            .iter()
            .skip(3)
            .map(|v| v.parse::<f64>().map_err(|e| CliError::input(format!("{}: {e}", path.display()))))
            .collect::<CliResult<_>>()?;
        rows.push((z, p));
    }
    Ok(rows)
}

/// Overlays the curve on the empirical state probabilities, both read back
/// from their CSV files.
fn occupancy_svg(curve_csv: &Path, probs_csv: &Path, max_points: usize, axis: &str) -> CliResult<String> {
    let curve = OccupancyCurve::read_csv(open(curve_csv)?)?;
    let rows = read_state_probs(probs_csv)?;
    let mut plot = Plot::new(
        &format!("State occupancy ({})", curve.method),
        axis,
        "probability",
    )
    .y_range(0.0, 1.0);
    for i in 0..curve.n_states() {
        let pts = every_kth(rows.len(), max_points).map(|k| (rows[k].0, rows[k].1[i])).collect();
        plot.points(pts, colour(i), 1.5, 0.25);
    }
    for i in 0..curve.n_states() {
        let line = curve
            .grid
            .iter()
            .zip(&curve.probs)
            .map(|(&z, p)| (z, p.as_ref().map_or(f64::NAN, |p| p[i])))
            .collect();
        plot.line(line, colour(i), 2.5, 1.0);
        plot.legend(&format!("state {}", i + 1), colour(i));
    }
    Ok(plot.render())
}

pub fn occupancy(cfg: &RunConfig) -> CliResult<String> {
    let oc = &cfg.occupancy;
    let model = load_model(cfg.fitted_path())?;
    check_model(&model, &cfg.model)?;
    let table = load_table(cfg.canonical_path())?;
    let (_, cov) = inputs(cfg, &table)?;
    let axis = oc
        .column
        .clone()
        .or_else(|| cfg.model.covariates.first().cloned())
        .ok_or_else(|| CliError::input("occupancy needs a covariate column (occupancy.column)"))?;
    let z_col = with_context(cfg.canonical_path(), table.column(&axis))?.to_vec();
    let z: Vec<f64> = z_col
        .iter()
        .enumerate()
        .map(|(t, v)| v.ok_or_else(|| CliError::input(format!("column '{axis}' is missing at data row {}", t + 1))))
        .collect::<CliResult<_>>()?;
    let column = cfg.model.covariates.iter().position(|c| *c == axis);
    let probs = propagate_state_probs(&model, &cov)?;

    oc.binning.validate()?;
    let (lo, hi) = oc.binning.resolve_range(&z)?;
    let binning = BinningConfig {
        range: BinRange::Fixed { lo, hi },
        ..oc.binning.clone()
    };
    let grid = BinAccumulator::new(lo, hi, binning.n_bins, model.n_states()).centers();
    let resample_opts = ResampleOccupancyOptions {
        burn_in: oc.burn_in,
        restart_every: oc.restart_every,
        ..ResampleOccupancyOptions::default()
    };
    let needs_axis_covariate = || {
        column.ok_or_else(|| CliError::input(format!("'{axis}' is not a covariate of the model")))
    };
    let curve = match oc.method {
        OccupancyMethod::Stationary => {
            let p = model.n_covariates();
            let fixed = match &oc.fixed {
                Some(f) => f.clone(),
                None => cov.column_means(),
            };
            let col = if p == 0 { 0 } else { needs_axis_covariate()? };
            hypothetical_stationary_curve(&model, &grid, col, if p == 0 { &[] } else { &fixed })?
        }
        OccupancyMethod::Ar => {
            needs_axis_covariate()?;
            let ar = fit_ar(&z, oc.ar_max_order)?;
            write_json(&cfg.out.join("ar_fit.json"), &ar)?;
            let path = simulate_ar(&ar.model, oc.resample_length, cfg.seed);
            occupancy_via_resampling(&model, &path, &binning, &resample_opts, Method::ArResample)?
        }
        OccupancyMethod::Bb => {
            needs_axis_covariate()?;
            let times = cov.time_index().map(<[f64]>::to_vec);
            let detrend = match oc.detrend_period {
                Some(period) => {
                    let t = times.as_deref().ok_or_else(|| CliError::input("detrending needs timestamps"))?;
                    let trend = fit_seasonal_trend(&z, t, period)?;
                    write_json(&cfg.out.join("seasonal_trend.json"), &trend)?;
                    Some(trend)
                }
                None => None,
            };
            let bb = BlockBootstrapConfig {
                block_length: oc.block_length,
                output_blocks: oc.resample_length.div_ceil(oc.block_length.max(1)),
                detrend,
            };
            let path = block_bootstrap(&z, times.as_deref(), &bb, cfg.seed)?;
            occupancy_via_resampling(&model, &path, &binning, &resample_opts, Method::BlockBootstrap)?
        }
        OccupancyMethod::Dirichlet => {
            let fit = fit_dirichlet_smooth(&probs, &z, &oc.dirichlet)?;
            write_json(&cfg.out.join("dirichlet_fit.json"), &fit)?;
            predict_occupancy_within(&fit, &grid)
        }
        OccupancyMethod::Mc => {
            needs_axis_covariate()?;
            let spec = oc
                .mc
                .as_ref()
                .ok_or_else(|| CliError::input("method mc needs an [occupancy.mc] generator"))?;
            let mc = MonteCarloConfig {
                binning: binning.clone(),
                ..spec.config.clone()
            };
            let generator = |len: usize, seed: u64| spec.process.generate(len, seed);
            monte_carlo_truth(&model, &generator, &mc, cfg.seed)?
        }
    };
    let name = oc.method.as_str();
    let curve_path = cfg.out.join(format!("occupancy_{name}.csv"));
    let probs_path = cfg.out.join("state_probs.csv");
    let mut w = create(&curve_path)?;
    curve.write_csv(&mut w)?;
    w.flush()?;
    write_state_probs(&probs_path, &table, &z_col, &probs)?;
    let svg = occupancy_svg(&curve_path, &probs_path, oc.max_scatter_points, &axis)?;
    write_text(&cfg.out.join(format!("occupancy_{name}.svg")), &svg)?;
    let defined = curve.probs.iter().filter(|p| p.is_some()).count();
    Ok(format!("{name} curve with {defined} of {} grid points defined", curve.len()))
}

fn decode_svg(states_csv: &Path, positions_csv: Option<&Path>, n_states: usize) -> CliResult<String> {
    let mut rd = csv::Reader::from_reader(open(states_csv)?);
    let mut rows: Vec<(u32, usize)> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let seg = rec[1].parse().map_err(|_| CliError::input("bad segment in states file"))?;
        let st: usize = rec[2].parse().map_err(|_| CliError::input("bad state in states file"))?;
        rows.push((seg, st));
    }
    let positions = match positions_csv {
        Some(p) => {
            let mut rd = csv::Reader::from_reader(open(p)?);
            let mut pos = Vec::new();
            for rec in rd.records() {
                let rec = rec?;
                pos.push(rec[2].parse::<f64>().ok().zip(rec[3].parse::<f64>().ok()));
            }
            (pos.len() == rows.len()).then_some(pos)
        }
        None => None,
    };
    let mut plot;
    match positions {
        Some(pos) => {
            plot = Plot::new("Decoded track", "x", "y");
            for k in 1..rows.len() {
                if rows[k].0 != rows[k - 1].0 {
                    continue;
                }
                if let (Some(a), Some(b)) = (pos[k - 1], pos[k]) {
                    plot.line(vec![a, b], colour(rows[k].1 - 1), 1.2, 0.9);
                }
            }
        }
        None => {
            plot = Plot::new("Decoded states", "row", "state");
            for i in 1..=n_states {
                let pts = rows
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.1 == i)
                    .map(|(k, _)| (k as f64, i as f64))
                    .collect();
                plot.points(pts, colour(i - 1), 1.5, 0.8);
            }
        }
    }
    for i in 0..n_states {
        plot.legend(&format!("state {}", i + 1), colour(i));
    }
    Ok(plot.render())
}

pub fn decode(cfg: &RunConfig) -> CliResult<String> {
    let model = load_model(cfg.fitted_path())?;
    check_model(&model, &cfg.model)?;
    let table = load_table(cfg.canonical_path())?;
    let (obs, cov) = inputs(cfg, &table)?;
    let states = viterbi(&model, &obs, &cov)?;
    let path = cfg.out.join("states.csv");
    let mut wr = csv::Writer::from_writer(create(&path)?);
    wr.write_record(["t", "segment", "state"])?;
    for (t, s) in states.iter().enumerate() {
        wr.write_record([
            format_timestamp(&table.times[t]),
            table.segment[t].to_string(),
            (s + 1).to_string(),
        ])?;
    }
    wr.flush()?;
    drop(wr);
    let pos = cfg.positions_path();
    let svg = decode_svg(&path, pos.exists().then_some(pos), model.n_states())?;
    write_text(&cfg.out.join("states.svg"), &svg)?;
    Ok(format!("decoded {} rows", states.len()))
}

#[derive(Debug, Serialize)]
struct ReplicateRecord<'a> {
    index: usize,
    seed: u64,
    loglik: f64,
    converged: bool,
    aic: f64,
    emission_means: &'a [f64],
    emission_mean_se: Option<&'a [f64]>,
    ar_order: Option<usize>,
}

/// Thin replicate curves under the thick reference, read from the long CSV.
fn simulate_panel(curves_csv: &Path, method: Method) -> CliResult<String> {
    let mut rd = csv::Reader::from_reader(open(curves_csv)?);
    let headers = rd.headers()?.clone();
    let n = headers.iter().filter(|h| h.starts_with("p_")).count();
    let mut groups: Vec<(String, String, Vec<(f64, Vec<f64>)>)> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let (label, m) = (rec[0].to_string(), rec[n + 3].to_string());
        let z: f64 = rec[1].parse().map_err(|_| CliError::input("bad grid value in curves file"))?;
        let p: Vec<f64> = (0..n).map(|i| rec[3 + i].parse().unwrap_or(f64::NAN)).collect();
        match groups.last_mut() {
            Some(g) if g.0 == label && g.1 == m => g.2.push((z, p)),
            _ => groups.push((label, m, vec![(z, p)])),
        }
    }
    let mut plot = Plot::new(&format!("Replicate curves ({method})"), "covariate", "probability").y_range(0.0, 1.0);
    let m = method.as_str();
    for (label, gm, pts) in &groups {
        if gm == m && label != "mean" {
            for i in 0..n {
                plot.line(pts.iter().map(|(z, p)| (*z, p[i])).collect(), colour(i), 0.6, 0.35);
            }
        }
    }
    for (_, _, pts) in groups.iter().filter(|g| g.0 == "truth") {
        for i in 0..n {
            plot.line(pts.iter().map(|(z, p)| (*z, p[i])).collect(), "black", 3.0, 1.0);
        }
    }
    for i in 0..n {
        plot.legend(&format!("state {}", i + 1), colour(i));
    }
    plot.legend("reference", "black");
    Ok(plot.render())
}

fn export_replicate(cfg: &RunConfig, spec: &occuhmm_core::sim::SettingSpec, index: usize) -> CliResult<()> {
    let exp = &cfg.simulate.experiment;
    let seed = replicate_seed(exp.seed, index);
    let (data, init, fit_cfg) = prepare_replicate(spec, exp, seed)?;
    let dir = cfg.out.join(format!("replicate_{index:03}"));
    let n_ch = data.observations.n_channels();
    let channels: Vec<String> = if n_ch == 1 {
        vec!["obs".into()]
    } else {
        (1..=n_ch).map(|c| format!("obs_{c}")).collect()
    };
    let start = Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).single().expect("valid date");
    let times: Vec<_> = (0..data.observations.len())
        .map(|t| start + Duration::hours(t as i64))
        .collect();
    let obs_cols: Vec<Vec<Option<f64>>> = (0..n_ch).map(|c| data.observations.channel(c).collect()).collect();
    let z: Vec<Option<f64>> = data.covariates.column(0).into_iter().map(Some).collect();
    let mut columns: Vec<(&str, &[Option<f64>])> =
        channels.iter().map(String::as_str).zip(obs_cols.iter().map(Vec::as_slice)).collect();
    columns.push(("z", &z));
    let mut w = create(&dir.join("data.csv"))?;
    CanonicalTable::write_csv(&mut w, &times, data.observations.segment_ids(), &columns)?;
    w.flush()?;
    write_json(&dir.join("init.json"), &init)?;
    let run = RunConfig {
        seed: fit_cfg.seed,
        out: ".".into(),
        data: DataConfig {
            canonical: Some("data.csv".into()),
            ..DataConfig::default()
        },
        model: ModelConfig {
            n_states: spec.model.n_states(),
            channels,
            families: spec.model.emissions().families(),
            covariates: vec!["z".into()],
            init: Some("init.json".into()),
            fitted: None,
        },
        fit: fit_cfg,
        ..RunConfig::default()
    };
    write_text(&dir.join("config.toml"), &run.to_toml()?)
}

pub fn simulate(cfg: &RunConfig) -> CliResult<String> {
    let spec = cfg.setting_spec()?;
    let exp = &cfg.simulate.experiment;
    let report: ExperimentReport = run_experiment(&spec, exp)?;
    let out = &cfg.out;
    let curves_path = out.join("curves.csv");
    let mut w = create(&curves_path)?;
    report.write_curves_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&out.join("truth.csv"))?;
    report.truth.write_csv(&mut w)?;
    w.flush()?;
    write_json(&out.join("summary.json"), &report.summary())?;
    let records: Vec<ReplicateRecord> = report
        .replicates
        .iter()
        .map(|r| ReplicateRecord {
            index: r.index,
            seed: r.seed,
            loglik: r.loglik,
            converged: r.converged,
            aic: r.aic,
            emission_means: &r.emission_means,
            emission_mean_se: r.emission_mean_se.as_deref(),
            ar_order: r.ar_order,
        })
        .collect();
    write_json(&out.join("replicates.json"), &records)?;
    for e in &exp.estimators {
        let svg = simulate_panel(&curves_path, e.method())?;
        write_text(&out.join(format!("panel_{}.svg", e.method())), &svg)?;
    }
    for index in 0..cfg.simulate.export_replicates.min(exp.replicates) {
        export_replicate(cfg, &spec, index)?;
    }
    let non_converged = report.replicates.iter().filter(|r| !r.converged).count();
    if cfg.strict && non_converged > 0 {
        return Err(CliError::Numerical(format!(
            "{non_converged} replicate fits did not converge"
        )));
    }
    let mut line = format!(
        "setting {}: {} replicates, {} failed",
        report.setting,
        report.replicates.len(),
        report.failures.len()
    );
    for s in &report.summaries {
        if let Some(b) = s.max_abs_bias {
            line.push_str(&format!("; {} max bias {b:.4}", s.estimator.method()));
        }
    }
    Ok(line)
}
