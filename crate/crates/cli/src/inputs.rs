//! Reading input files into segment tables and speed series.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use chrono_tz::Tz;
use probelag_core::ingest::{
    detections_by_sensor, filter_outliers, match_detections, parse_detections, parse_probe_rows,
    parse_segments, parse_sensor_map, parse_travel_times, series_from_probe_rows, to_speed_sample,
};
use probelag_core::timeseries::build_series;
use probelag_core::{Error, Instant, SegmentTable, SpeedSample, SpeedSeries, TravelTimeSample};

use crate::config::RunConfig;
use crate::diagnostics::Diagnostic;
use crate::error::{CliError, CliResult};

pub const REFERENCE_SOURCE: &str = "reference";

pub fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(CliError::io(path))
}

fn required<'a>(p: &'a Option<std::path::PathBuf>, key: &str) -> CliResult<&'a Path> {
    p.as_deref()
        .ok_or_else(|| CliError::Config(format!("`{key}` is not set")))
}

pub fn load_segments(cfg: &RunConfig) -> CliResult<SegmentTable> {
    let path = required(&cfg.segments, "segments")?;
    let table = parse_segments(&read(path)?).map_err(CliError::data(path))?;
    for seg in table.values() {
        timezone(&seg.timezone).map_err(CliError::data(path))?;
    }
    Ok(table)
}

pub fn timezone(name: &str) -> probelag_core::Result<Tz> {
    name.parse()
        .map_err(|_| Error::InvalidParameter(format!("unknown timezone `{name}`")))
}

fn segment_tz(segments: &SegmentTable, id: &str) -> probelag_core::Result<Tz> {
    let seg = segments
        .get(id)
        .ok_or_else(|| Error::UnknownSegment(id.to_string()))?;
    timezone(&seg.timezone)
}

/// Re-expresses an instant in the local time of a zone.
pub fn relocalize(ts: &Instant, tz: Tz) -> Instant {
    ts.with_timezone(&tz).fixed_offset()
}

/// Probe-schema file grouped into series per (segment, vendor, local date).
pub fn load_speed_feed(path: &Path, segments: &SegmentTable) -> CliResult<Vec<SpeedSeries>> {
    let mut rows = parse_probe_rows(&read(path)?).map_err(CliError::data(path))?;
    for row in &mut rows {
        let tz = segment_tz(segments, &row.segment_id)
            .map_err(|e| Error::Parse {
                line: row.line,
                message: e.to_string(),
            })
            .map_err(CliError::data(path))?;
        row.timestamp = relocalize(&row.timestamp, tz);
    }
    series_from_probe_rows(&rows).map_err(CliError::data(path))
}

/// Probe feeds from every configured file, restricted to the configured
/// vendors, sorted by (segment, vendor, date).
pub fn load_probes(cfg: &RunConfig, segments: &SegmentTable) -> CliResult<Vec<SpeedSeries>> {
    if cfg.probes.is_empty() {
        return Err(CliError::Config("`probes` is not set".into()));
    }
    let mut all = Vec::new();
    for path in &cfg.probes {
        all.extend(load_speed_feed(path, segments)?);
    }
    if !cfg.vendors.is_empty() {
        all.retain(|s| cfg.vendors.iter().any(|v| v == s.source_id()));
    }
    all.sort_by(|a, b| {
        (a.segment_id(), a.source_id(), a.date()).cmp(&(b.segment_id(), b.source_id(), b.date()))
    });
    if let Some(w) = all.windows(2).find(|w| {
        (w[0].segment_id(), w[0].source_id(), w[0].date())
            == (w[1].segment_id(), w[1].source_id(), w[1].date())
    }) {
        return Err(CliError::Data {
            path: cfg.probes[0].clone(),
            source: Error::DuplicateRow {
                line: 0,
                key: format!(
                    "{}/{}/{} spread over several files",
                    w[0].segment_id(),
                    w[0].source_id(),
                    w[0].date()
                ),
            },
        });
    }
    Ok(all)
}

/// Reference series plus per-segment notes about dropped samples.
pub struct Reference {
    pub series: Vec<SpeedSeries>,
    pub diagnostics: Vec<Diagnostic>,
    /// File the reference came from, for error messages.
    pub source: std::path::PathBuf,
}

/// Loads the reference from whichever input is configured, in order of
/// preference: reference speeds, travel times, raw detections.
pub fn load_reference(cfg: &RunConfig, segments: &SegmentTable) -> CliResult<Reference> {
    if let Some(path) = &cfg.reference_speeds {
        let series = load_speed_feed(path, segments)?
            .into_iter()
            .map(|s| s.with_source_id(REFERENCE_SOURCE))
            .collect();
        return Ok(Reference {
            series,
            diagnostics: Vec::new(),
            source: path.clone(),
        });
    }
    if let Some(path) = &cfg.reference_travel_times {
        let samples = parse_travel_times(&read(path)?).map_err(CliError::data(path))?;
        let mut diagnostics = Vec::new();
        let series = travel_times_to_series(cfg, segments, samples, &mut diagnostics)
            .map_err(CliError::data(path))?;
        return Ok(Reference {
            series,
            diagnostics,
            source: path.clone(),
        });
    }
    if let Some(path) = &cfg.detections {
        let map_path = required(&cfg.sensor_map, "sensor_map")?;
        let pairs = parse_sensor_map(&read(map_path)?).map_err(CliError::data(map_path))?;
        let detections = parse_detections(&read(path)?).map_err(CliError::data(path))?;
        let by_sensor = detections_by_sensor(&detections);
        let mut diagnostics = Vec::new();
        let mut samples = Vec::new();
        for pair in &pairs {
            let seg = segments
                .get(&pair.segment_id)
                .ok_or_else(|| Error::UnknownSegment(pair.segment_id.clone()))
                .map_err(CliError::data(map_path))?;
            let max_tt = cfg.max_tt_factor * seg.length_mi / cfg.free_flow_speed_mph * 3600.0;
            let none = Vec::new();
            let up = by_sensor.get(pair.upstream.as_str()).unwrap_or(&none);
            let down = by_sensor.get(pair.downstream.as_str()).unwrap_or(&none);
            let outcome = match_detections(up, down, max_tt, &seg.segment_id)
                .map_err(CliError::data(path))?;
            let unmatched = outcome.unmatched_upstream + outcome.unmatched_downstream;
            if unmatched > 0 {
                diagnostics.push(Diagnostic::segment(
                    &seg.segment_id,
                    "UNMATCHED_DETECTIONS",
                    format!(
                        "{} upstream and {} downstream detections unmatched",
                        outcome.unmatched_upstream, outcome.unmatched_downstream
                    ),
                ));
            }
            samples.extend(outcome.samples);
        }
        let series = travel_times_to_series(cfg, segments, samples, &mut diagnostics)
            .map_err(CliError::data(path))?;
        return Ok(Reference {
            series,
            diagnostics,
            source: path.clone(),
        });
    }
    Err(CliError::Config(
        "no reference input: set `reference_speeds`, `reference_travel_times`, or `detections`"
            .into(),
    ))
}

fn travel_times_to_series(
    cfg: &RunConfig,
    segments: &SegmentTable,
    samples: Vec<TravelTimeSample>,
    diagnostics: &mut Vec<Diagnostic>,
) -> probelag_core::Result<Vec<SpeedSeries>> {
    let mut by_segment: BTreeMap<String, Vec<TravelTimeSample>> = BTreeMap::new();
    for s in samples {
        by_segment.entry(s.segment_id.clone()).or_default().push(s);
    }
    let mut out = Vec::new();
    for (id, samples) in by_segment {
        let seg = segments
            .get(&id)
            .ok_or_else(|| Error::UnknownSegment(id.clone()))?;
        let tz = timezone(&seg.timezone)?;
        let kept = if cfg.outlier_filter {
            filter_outliers(&samples, cfg.outlier_window, cfg.outlier_k)?
        } else {
            samples.clone()
        };
        if kept.len() < samples.len() {
            diagnostics.push(Diagnostic::segment(
                &id,
                "OUTLIER_REMOVED",
                format!(
                    "{} of {} travel times removed",
                    samples.len() - kept.len(),
                    samples.len()
                ),
            ));
        }
        let mut by_date: BTreeMap<NaiveDate, Vec<SpeedSample>> = BTreeMap::new();
        let mut rejected: Option<(usize, Error)> = None;
        for tt in &kept {
            match to_speed_sample(tt, seg) {
                Ok(mut s) => {
                    s.timestamp = relocalize(&s.timestamp, tz);
                    by_date.entry(s.timestamp.date_naive()).or_default().push(s);
                }
                Err(e) => {
                    let slot = rejected.get_or_insert((0, e));
                    slot.0 += 1;
                }
            }
        }
        if let Some((n, e)) = rejected {
            diagnostics.push(Diagnostic::segment(
                &id,
                e.code(),
                format!("{n} travel times rejected, first: {e}"),
            ));
        }
        for (date, day) in by_date {
            out.push(build_series(&day, &id, REFERENCE_SOURCE, date)?);
        }
    }
    Ok(out)
}
