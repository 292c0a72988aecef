//! Tracking-data preprocessing: regular time grid, outlier removal, step
//! lengths and turning angles, covariate imputation and segmentation.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};

use chrono::{DateTime, Datelike, NaiveDateTime, TimeZone, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{wrap_angle, CovariateSeries, ObservationSeries};

/// Mean Earth radius in metres.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateMode {
    /// Projected coordinates in metres.
    #[default]
    Planar,
    /// `x` is longitude and `y` latitude, in degrees.
    Geographic,
}

/// Input column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub timestamp: String,
    pub x: String,
    pub y: String,
    pub covariates: Vec<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            x: "x".into(),
            y: "y".into(),
            covariates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fix {
    pub time: DateTime<Utc>,
    pub x: f64,
    pub y: f64,
    pub covariates: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTrack {
    pub mode: CoordinateMode,
    pub covariate_names: Vec<String>,
    /// Strictly increasing in time.
    pub fixes: Vec<Fix>,
}

/// Parses ISO-8601 timestamps; values without an offset are taken as UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|n| Utc.from_utc_datetime(&n))
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::input(format!("required column '{name}' not found in header")))
}

fn parse_cell(rec: &csv::StringRecord, idx: usize, line: u64, name: &str) -> Result<Option<f64>> {
    let cell = rec.get(idx).unwrap_or("").trim();
    if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Some)
        .ok_or_else(|| Error::input(format!("line {line}: column '{name}' has invalid value '{cell}'")))
}

impl RawTrack {
    /// Reads a delimited file with a header. Rows with a missing coordinate
    /// are skipped; records are sorted by time and duplicate timestamps keep
    /// the first occurrence.
    pub fn read_csv<R: Read>(reader: R, mapping: &ColumnMapping, mode: CoordinateMode) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let headers = rd.headers()?.clone();
        if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
            return Err(Error::input("input file is empty"));
        }
        let it = column_index(&headers, &mapping.timestamp)?;
        let ix = column_index(&headers, &mapping.x)?;
        let iy = column_index(&headers, &mapping.y)?;
        let icov = mapping
            .covariates
            .iter()
            .map(|c| column_index(&headers, c))
            .collect::<Result<Vec<_>>>()?;
        let mut fixes = Vec::new();
        let mut skipped = 0usize;
        for rec in rd.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let ts = rec.get(it).unwrap_or("");
            let time = parse_timestamp(ts)
                .ok_or_else(|| Error::input(format!("line {line}: cannot parse timestamp '{ts}'")))?;
            let (Some(x), Some(y)) = (
                parse_cell(&rec, ix, line, &mapping.x)?,
                parse_cell(&rec, iy, line, &mapping.y)?,
            ) else {
                skipped += 1;
                continue;
            };
            let covariates = icov
                .iter()
                .zip(&mapping.covariates)
                .map(|(&i, name)| parse_cell(&rec, i, line, name))
                .collect::<Result<_>>()?;
            fixes.push(Fix { time, x, y, covariates });
        }
        if fixes.is_empty() {
            return Err(Error::input("input contains no usable records"));
        }
        if skipped > 0 {
            log::info!("skipped {skipped} records without coordinates");
        }
        fixes.sort_by_key(|f| f.time);
        let before = fixes.len();
        fixes.dedup_by_key(|f| f.time);
        if fixes.len() < before {
            log::info!("dropped {} records with duplicate timestamps", before - fixes.len());
        }
        Ok(Self {
            mode,
            covariate_names: mapping.covariates.clone(),
            fixes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub interval_secs: i64,
    pub snap_tolerance_secs: i64,
    /// Longest covariate gap (in grid steps) filled by linear interpolation.
    pub max_gap: usize,
    pub min_segment_length: usize,
    /// Distance per grid interval above which a fix counts as an outlier
    /// (when both neighbours agree); infinite disables the filter.
    pub speed_threshold: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            interval_secs: 3600,
            snap_tolerance_secs: 300,
            max_gap: 6,
            min_segment_length: 24,
            speed_threshold: f64::INFINITY,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.interval_secs <= 0 || self.snap_tolerance_secs < 0 || !(self.speed_threshold > 0.0) {
            return Err(Error::input("preprocessing thresholds must be positive"));
        }
        if 2 * self.snap_tolerance_secs >= self.interval_secs {
            return Err(Error::input("snap tolerance must be below half the interval"));
        }
        Ok(())
    }
}

/// A track on a regular time grid; empty slots hold `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedTrack {
    pub mode: CoordinateMode,
    pub covariate_names: Vec<String>,
    pub times: Vec<DateTime<Utc>>,
    pub positions: Vec<Option<(f64, f64)>>,
    /// One column per covariate.
    pub covariates: Vec<Vec<Option<f64>>>,
}

impl GriddedTrack {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegularizeStats {
    pub records: usize,
    pub snapped: usize,
    pub outside_tolerance: usize,
    pub duplicate_snaps: usize,
    pub empty_slots: usize,
}

/// Snaps records to the nearest slot of an epoch-aligned grid. A slot
/// claimed by several records keeps the temporally closest one (the earlier
/// on a tie).
pub fn regularize(track: &RawTrack, config: &PreprocessConfig) -> Result<(GriddedTrack, RegularizeStats)> {
    config.validate()?;
    if track.fixes.len() < 2 {
        return Err(Error::input("need at least 2 records to regularise"));
    }
    let iv = config.interval_secs;
    let mut best: BTreeMap<i64, (i64, usize)> = BTreeMap::new();
    let mut stats = RegularizeStats {
        records: track.fixes.len(),
        ..Default::default()
    };
    for (r, f) in track.fixes.iter().enumerate() {
        let secs = f.time.timestamp();
        let slot = (secs as f64 / iv as f64).round() as i64;
        let off = (secs - slot * iv).abs();
        if off > config.snap_tolerance_secs {
            stats.outside_tolerance += 1;
            continue;
        }
        match best.get(&slot) {
            Some(&(o, _)) if o <= off => stats.duplicate_snaps += 1,
            Some(_) => {
                stats.duplicate_snaps += 1;
                best.insert(slot, (off, r));
            }
            None => {
                best.insert(slot, (off, r));
            }
        }
    }
    let (Some((&first, _)), Some((&last, _))) = (best.first_key_value(), best.last_key_value()) else {
        return Err(Error::input("no record lies within the snap tolerance of the grid"));
    };
    let len = (last - first + 1) as usize;
    let ncov = track.covariate_names.len();
    let mut g = GriddedTrack {
        mode: track.mode,
        covariate_names: track.covariate_names.clone(),
        times: (0..len)
            .map(|k| {
                Utc.timestamp_opt((first + k as i64) * iv, 0)
                    .single()
                    .expect("grid time in range")
            })
            .collect(),
        positions: vec![None; len],
        covariates: vec![vec![None; len]; ncov],
    };
    for (&slot, &(_, r)) in &best {
        let k = (slot - first) as usize;
        let f = &track.fixes[r];
        g.positions[k] = Some((f.x, f.y));
        for c in 0..ncov {
            g.covariates[c][k] = f.covariates[c];
        }
    }
    stats.snapped = best.len();
    stats.empty_slots = len - best.len();
    if stats.duplicate_snaps > 0 {
        log::info!("{} records lost a slot to a closer record", stats.duplicate_snaps);
    }
    Ok((g, stats))
}

/// Distance in metres between two positions.
pub fn distance(mode: CoordinateMode, a: (f64, f64), b: (f64, f64)) -> f64 {
    match mode {
        CoordinateMode::Planar => (b.0 - a.0).hypot(b.1 - a.1),
        CoordinateMode::Geographic => {
            let (l1, p1) = (a.0.to_radians(), a.1.to_radians());
            let (l2, p2) = (b.0.to_radians(), b.1.to_radians());
            let h = ((p2 - p1) / 2.0).sin().powi(2) + p1.cos() * p2.cos() * ((l2 - l1) / 2.0).sin().powi(2);
            2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
        }
    }
}

/// Initial bearing from `a` to `b`, radians clockwise from north.
pub fn initial_bearing(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (l1, p1) = (a.0.to_radians(), a.1.to_radians());
    let (l2, p2) = (b.0.to_radians(), b.1.to_radians());
    let dl = l2 - l1;
    f64::atan2(dl.sin() * p2.cos(), p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos())
}

/// Signed turn at `b` between `a -> b` and `b -> c`; counter-clockwise (left)
/// turns are positive. `None` if either step has zero length.
pub fn turning_angle(mode: CoordinateMode, a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> Option<f64> {
    if a == b || b == c {
        return None;
    }
    Some(match mode {
        CoordinateMode::Planar => {
            let (u, v) = ((b.0 - a.0, b.1 - a.1), (c.0 - b.0, c.1 - b.1));
            wrap_angle(f64::atan2(u.0 * v.1 - u.1 * v.0, u.0 * v.0 + u.1 * v.1))
        }
        CoordinateMode::Geographic => wrap_angle(initial_bearing(a, b) - initial_bearing(b, c)),
    })
}

/// Sets missing every fix whose speed to both nearest present neighbours
/// exceeds the threshold. Decisions use the input track only (single pass).
pub fn remove_outliers(track: &GriddedTrack, config: &PreprocessConfig) -> (GriddedTrack, usize) {
    let mut out = track.clone();
    if !config.speed_threshold.is_finite() {
        return (out, 0);
    }
    let present: Vec<usize> = (0..track.len()).filter(|&k| track.positions[k].is_some()).collect();
    let mut removed = 0;
    for w in present.windows(3) {
        let (a, b, c) = (w[0], w[1], w[2]);
        let pb = track.positions[b].expect("present");
        let speed = |o: usize| distance(track.mode, track.positions[o].expect("present"), pb) / b.abs_diff(o) as f64;
        if speed(a) > config.speed_threshold && speed(c) > config.speed_threshold {
            out.positions[b] = None;
            removed += 1;
        }
    }
    if removed > 0 {
        log::info!("removed {removed} outlying fixes");
    }
    (out, removed)
}

/// Row `t` holds the step into fix `t` and the turn at fix `t-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepsAndTurns {
    pub step: Vec<Option<f64>>,
    pub angle: Vec<Option<f64>>,
}

pub fn steps_and_turns(track: &GriddedTrack) -> StepsAndTurns {
    let p = &track.positions;
    let n = p.len();
    let mut step = vec![None; n];
    let mut angle = vec![None; n];
    for t in 1..n {
        if let (Some(a), Some(b)) = (p[t - 1], p[t]) {
            step[t] = Some(distance(track.mode, a, b));
            if t >= 2 {
                if let Some(o) = p[t - 2] {
                    angle[t] = turning_angle(track.mode, o, a, b);
                }
            }
        }
    }
    StepsAndTurns { step, angle }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub imputed_cells: usize,
    pub excluded_rows: usize,
    pub segments: usize,
    pub dropped_segments: usize,
    pub rows: usize,
}

/// Aligned, segmented rows ready for fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub times: Vec<DateTime<Utc>>,
    pub segment: Vec<u32>,
    pub step: Vec<Option<f64>>,
    pub angle: Vec<Option<f64>>,
    pub covariate_names: Vec<String>,
    /// One column per covariate, complete.
    pub covariates: Vec<Vec<f64>>,
    pub positions: Vec<Option<(f64, f64)>>,
}

/// Linear interpolation over interior runs of at most `max_gap` missing
/// values. Returns the filled column (unfillable cells stay `None`) and the
/// number of imputed cells.
pub fn interpolate_gaps(col: &[Option<f64>], max_gap: usize) -> (Vec<Option<f64>>, usize) {
    let mut out = col.to_vec();
    let mut imputed = 0;
    let mut k = 0;
    while k < col.len() {
        if col[k].is_some() {
            k += 1;
            continue;
        }
        let start = k;
        while k < col.len() && col[k].is_none() {
            k += 1;
        }
        let len = k - start;
        if start == 0 || k == col.len() || len > max_gap {
            continue;
        }
        let (a, b) = (col[start - 1].expect("present"), col[k].expect("present"));
        for (j, cell) in out[start..k].iter_mut().enumerate() {
            *cell = Some(a + (b - a) * (j + 1) as f64 / (len + 1) as f64);
        }
        imputed += len;
    }
    (out, imputed)
}

/// Fills short covariate gaps, breaks segments at longer ones and drops
/// segments shorter than the minimum length.
pub fn impute_and_segment(
    track: &GriddedTrack,
    moves: &StepsAndTurns,
    config: &PreprocessConfig,
) -> Result<(PreparedData, SegmentStats)> {
    let n = track.len();
    let mut stats = SegmentStats::default();
    let filled: Vec<Vec<Option<f64>>> = track
        .covariates
        .iter()
        .map(|c| {
            let (f, k) = interpolate_gaps(c, config.max_gap);
            stats.imputed_cells += k;
            f
        })
        .collect();
    let usable: Vec<bool> = (0..n).map(|t| filled.iter().all(|c| c[t].is_some())).collect();
    let mut runs = Vec::new();
    let mut t = 0;
    while t < n {
        if !usable[t] {
            t += 1;
            continue;
        }
        let s = t;
        while t < n && usable[t] {
            t += 1;
        }
        runs.push(s..t);
    }
    let mut data = PreparedData {
        times: Vec::new(),
        segment: Vec::new(),
        step: Vec::new(),
        angle: Vec::new(),
        covariate_names: track.covariate_names.clone(),
        covariates: vec![Vec::new(); filled.len()],
        positions: Vec::new(),
    };
    let mut seg_id = 0u32;
    for r in runs {
        if r.len() < config.min_segment_length.max(1) {
            stats.dropped_segments += 1;
            log::info!("dropped a segment of {} rows", r.len());
            continue;
        }
        for t in r {
            data.times.push(track.times[t]);
            data.segment.push(seg_id);
            data.step.push(moves.step[t]);
            data.angle.push(moves.angle[t]);
            data.positions.push(track.positions[t]);
            for (c, col) in filled.iter().enumerate() {
                data.covariates[c].push(col[t].expect("usable row"));
            }
        }
        seg_id += 1;
    }
    stats.segments = seg_id as usize;
    stats.rows = data.times.len();
    stats.excluded_rows = n - stats.rows;
    if data.step.iter().chain(&data.angle).all(Option::is_none) {
        return Err(Error::input("no segment with observed movement survives preprocessing"));
    }
    Ok((data, stats))
}

/// Fractional day of year (1-based) in UTC.
pub fn day_of_year(t: &DateTime<Utc>) -> f64 {
    t.ordinal() as f64 + (t.num_seconds_from_midnight() as f64) / 86_400.0
}

impl PreparedData {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Writes `t,segment,step,angle,<covariates>`; missing values are empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "segment".into(), "step".into(), "angle".into()];
        header.extend(self.covariate_names.iter().cloned());
        wr.write_record(&header)?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
        for k in 0..self.len() {
            let mut rec = vec![
                format_timestamp(&self.times[k]),
                self.segment[k].to_string(),
                opt(self.step[k]),
                opt(self.angle[k]),
            ];
            rec.extend(self.covariates.iter().map(|c| c[k].to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Writes `t,segment,x,y` for plotting decoded tracks.
    pub fn write_positions_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "segment", "x", "y"])?;
        for k in 0..self.len() {
            let (x, y) = self.positions[k].map_or((String::new(), String::new()), |(x, y)| (x.to_string(), y.to_string()));
            wr.write_record([format_timestamp(&self.times[k]), self.segment[k].to_string(), x, y])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// A parsed canonical aligned-series file: `t`, `segment` and named numeric
/// columns with empty cells as missing.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalTable {
    pub times: Vec<DateTime<Utc>>,
    pub segment: Vec<u32>,
    pub columns: BTreeMap<String, Vec<Option<f64>>>,
}

impl CanonicalTable {
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(reader);
        let headers = rd.headers()?.clone();
        if headers.iter().all(|h| h.trim().is_empty()) {
            return Err(Error::input("input file is empty"));
        }
        let it = column_index(&headers, "t")?;
        let is = column_index(&headers, "segment")?;
        let names: Vec<(usize, String)> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != it && *i != is)
            .map(|(i, h)| (i, h.trim().to_string()))
            .collect();
        let mut table = CanonicalTable {
            times: Vec::new(),
            segment: Vec::new(),
            columns: names.iter().map(|(_, n)| (n.clone(), Vec::new())).collect(),
        };
        for rec in rd.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let ts = rec.get(it).unwrap_or("");
            table.times.push(
                parse_timestamp(ts).ok_or_else(|| Error::input(format!("line {line}: cannot parse timestamp '{ts}'")))?,
            );
            let seg = rec.get(is).unwrap_or("").trim();
            table.segment.push(
                seg.parse()
                    .map_err(|_| Error::input(format!("line {line}: invalid segment '{seg}'")))?,
            );
            for (i, name) in &names {
                let v = parse_cell(&rec, *i, line, name)?;
                table.columns.get_mut(name).expect("known column").push(v);
            }
        }
        if table.times.is_empty() {
            return Err(Error::input("input file has no data rows"));
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, name: &str) -> Result<&[Option<f64>]> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::input(format!("required column '{name}' not found in header")))
    }

    pub fn observations(&self, channels: &[String]) -> Result<ObservationSeries> {
        let cols = channels.iter().map(|c| self.column(c)).collect::<Result<Vec<_>>>()?;
        let values = (0..self.len()).flat_map(|t| cols.iter().map(move |c| c[t])).collect();
        ObservationSeries::new(channels.len(), values, self.segment.clone())
    }

    pub fn covariates(&self, names: &[String]) -> Result<CovariateSeries> {
        let cols = names.iter().map(|c| self.column(c)).collect::<Result<Vec<_>>>()?;
        let mut values = Vec::with_capacity(self.len() * names.len());
        for t in 0..self.len() {
            for (c, name) in cols.iter().zip(names) {
                values.push(c[t].ok_or_else(|| {
                    Error::input(format!("covariate '{name}' is missing at data row {}", t + 1))
                })?);
            }
        }
        let doy = self.times.iter().map(day_of_year).collect();
        CovariateSeries::new(names.len(), values, self.segment.clone())?.with_time_index(doy)
    }

    /// Writes rows in the canonical layout for the given columns.
    pub fn write_csv<W: Write>(
        w: W,
        times: &[DateTime<Utc>],
        segment: &[u32],
        columns: &[(&str, &[Option<f64>])],
    ) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t", "segment"];
        header.extend(columns.iter().map(|(n, _)| *n));
        wr.write_record(&header)?;
        for k in 0..times.len() {
            let mut rec = vec![format_timestamp(&times[k]), segment[k].to_string()];
            rec.extend(columns.iter().map(|(_, c)| c[k].map_or_else(String::new, |v| v.to_string())));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Angle helper for tests and plotting: `(-pi, pi]` check.
pub fn is_wrapped(a: f64) -> bool {
    a > -PI && a <= PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn at(h: u32, m: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, 1, h, m, 0).unwrap()
    }

    fn raw(times: &[DateTime<Utc>]) -> RawTrack {
        RawTrack {
            mode: CoordinateMode::Planar,
            covariate_names: vec![],
            fixes: times
                .iter()
                .enumerate()
                .map(|(i, &time)| Fix {
                    time,
                    x: i as f64,
                    y: 0.0,
                    covariates: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn aligned_records_map_to_themselves() {
        let (g, s) = regularize(&raw(&[at(9, 0), at(10, 0), at(11, 0)]), &PreprocessConfig::default()).unwrap();
        assert_eq!(g.times, vec![at(9, 0), at(10, 0), at(11, 0)]);
        assert_eq!(g.positions, vec![Some((0.0, 0.0)), Some((1.0, 0.0)), Some((2.0, 0.0))]);
        assert_eq!(s.snapped, 3);
    }

    #[test]
    fn nearest_record_wins_the_slot() {
        let (g, s) = regularize(&raw(&[at(9, 58), at(10, 3), at(11, 2)]), &PreprocessConfig::default()).unwrap();
        assert_eq!(g.times, vec![at(10, 0), at(11, 0)]);
        assert_eq!(g.positions[0], Some((0.0, 0.0)));
        assert_eq!(s.duplicate_snaps, 1);
    }

    #[test]
    fn planar_geometry() {
        let a = CoordinateMode::Planar;
        assert_abs_diff_eq!(turning_angle(a, (0.0, 0.0), (1.0, 0.0), (1.0, 1.0)).unwrap(), PI / 2.0, epsilon = 1e-15);
        assert_eq!(turning_angle(a, (0.0, 0.0), (1.0, 0.0), (2.0, 0.0)), Some(0.0));
        assert_eq!(turning_angle(a, (0.0, 0.0), (1.0, 0.0), (0.0, 0.0)), Some(PI));
    }

    #[test]
    fn geographic_turn_sign_matches_planar() {
        // heading east then north near the equator is a left turn
        let g = CoordinateMode::Geographic;
        let t = turning_angle(g, (0.0, 0.0), (0.001, 0.0), (0.001, 0.001)).unwrap();
        assert_abs_diff_eq!(t, PI / 2.0, epsilon = 1e-6);
        // one degree of latitude
        assert_abs_diff_eq!(distance(g, (0.0, 0.0), (0.0, 1.0)), EARTH_RADIUS_M * PI / 180.0, epsilon = 1e-6);
    }

    #[test]
    fn row_alignment() {
        let g = GriddedTrack {
            mode: CoordinateMode::Planar,
            covariate_names: vec![],
            times: vec![at(0, 0), at(1, 0), at(2, 0)],
            positions: vec![Some((0.0, 0.0)), Some((1.0, 0.0)), Some((1.0, 1.0))],
            covariates: vec![],
        };
        let m = steps_and_turns(&g);
        assert_eq!(m.step, vec![None, Some(1.0), Some(1.0)]);
        assert_eq!(m.angle[..2], [None, None]);
        assert_abs_diff_eq!(m.angle[2].unwrap(), PI / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn spike_is_removed_neighbours_kept() {
        let mut pos: Vec<Option<(f64, f64)>> = (0..7).map(|k| Some((50.0 * k as f64, 0.0))).collect();
        pos[3] = Some((150.0, 10_000.0));
        let g = GriddedTrack {
            mode: CoordinateMode::Planar,
            covariate_names: vec![],
            times: (0..7).map(|h| at(h, 0)).collect(),
            positions: pos.clone(),
            covariates: vec![],
        };
        let cfg = PreprocessConfig {
            speed_threshold: 1000.0,
            ..PreprocessConfig::default()
        };
        let (out, n) = remove_outliers(&g, &cfg);
        assert_eq!(n, 1);
        assert_eq!(out.positions[3], None);
        assert_eq!(out.positions[2], pos[2]);
        assert_eq!(out.positions[4], pos[4]);
        assert_eq!(remove_outliers(&g, &PreprocessConfig::default()).1, 0);
    }

    #[test]
    fn gap_rules() {
        let col = [Some(10.0), None, None, Some(16.0)];
        let (f, k) = interpolate_gaps(&col, 2);
        assert_eq!(f, vec![Some(10.0), Some(12.0), Some(14.0), Some(16.0)]);
        assert_eq!(k, 2);
        let (f, _) = interpolate_gaps(&col, 1);
        assert_eq!(f[1], None);
    }

    #[test]
    fn long_gap_splits_segments() {
        let n = 10;
        let mut cov: Vec<Option<f64>> = (0..n).map(|k| Some(k as f64)).collect();
        cov[4] = None;
        cov[5] = None;
        let g = GriddedTrack {
            mode: CoordinateMode::Planar,
            covariate_names: vec!["temp".into()],
            times: (0..n as u32).map(|h| at(h, 0)).collect(),
            positions: (0..n).map(|k| Some((k as f64, 0.0))).collect(),
            covariates: vec![cov],
        };
        let cfg = PreprocessConfig {
            max_gap: 1,
            min_segment_length: 2,
            ..PreprocessConfig::default()
        };
        let (d, s) = impute_and_segment(&g, &steps_and_turns(&g), &cfg).unwrap();
        assert_eq!(d.segment, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(s.excluded_rows, 2);
        assert_eq!(d.covariates[0], vec![0.0, 1.0, 2.0, 3.0, 6.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "timestamp,lon,lat\n2024-01-01T00:00:00Z,1,2\n";
        let m = ColumnMapping {
            x: "x".into(),
            ..ColumnMapping::default()
        };
        let e = RawTrack::read_csv(csv.as_bytes(), &m, CoordinateMode::Planar).unwrap_err();
        assert!(e.to_string().contains("'x'"), "{e}");
        assert!(RawTrack::read_csv("".as_bytes(), &m, CoordinateMode::Planar).is_err());
    }

    #[test]
    fn bad_cell_reports_line() {
        let csv = "timestamp,x,y\n2024-01-01T00:00:00Z,1,2\n2024-01-01T01:00:00Z,abc,2\n";
        let e = RawTrack::read_csv(csv.as_bytes(), &ColumnMapping::default(), CoordinateMode::Planar).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
    }
}
