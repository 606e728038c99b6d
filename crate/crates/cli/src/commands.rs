use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, Offset, TimeZone, Timelike};
use probelag_core::episodes::{parse_episodes_csv, write_episodes_csv};
use probelag_core::ingest::{
    write_detections, write_probe_feed, write_segments, write_sensor_map, write_travel_times,
};
use probelag_core::latency::write_latency_csv;
use probelag_core::synth::{
    generate_corpus, reference_travel_times, sensor_ids, travel_times_to_detections,
    write_planted_csv, Corpus, CorpusConfig,
};
use probelag_core::timeseries::{epoch_minute, percentile, smooth};
use probelag_core::{
    detect_episodes, measure_latency, Episode, Error, LatencyResult, Period, SegmentTable,
    SensorPair, SpeedSeries,
};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::diagnostics::{self, Diagnostic};
use crate::error::{CliError, CliResult};
use crate::inputs::{self, load_probes, load_reference, load_segments};
use crate::table::Table;

pub(crate) fn write(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    std::fs::write(&path, contents).map_err(CliError::io(&path))
}

fn prepare(
    series: &SpeedSeries,
    enabled: bool,
    window: usize,
) -> probelag_core::Result<SpeedSeries> {
    if enabled && window > 1 {
        smooth(series, window)
    } else {
        Ok(series.clone())
    }
}

fn file_stem(segment_id: &str, date: NaiveDate) -> String {
    let safe: String = segment_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}_{date}")
}

/// Reference day as used downstream: the series episodes are detected on,
/// and the one latency is fitted against.
pub struct ReferenceDay {
    pub raw: SpeedSeries,
    pub detect: SpeedSeries,
    pub fit: SpeedSeries,
}

pub struct DetectOutput {
    pub days: Vec<ReferenceDay>,
    pub episodes: Vec<Episode>,
    pub diagnostics: Vec<Diagnostic>,
}

fn reference_days(
    cfg: &RunConfig,
    segments: &SegmentTable,
) -> CliResult<(Vec<ReferenceDay>, Vec<Diagnostic>, PathBuf)> {
    let reference = load_reference(cfg, segments)?;
    if reference.series.is_empty() {
        return Err(CliError::Data {
            path: reference.source,
            source: Error::EmptyInput("no reference speeds".into()),
        });
    }
    let days = reference
        .series
        .into_par_iter()
        .map(|raw| {
            let smoothed = prepare(&raw, true, cfg.smooth_window)?;
            let detect = if cfg.detect_on_smoothed {
                smoothed.clone()
            } else {
                raw.clone()
            };
            let fit = if cfg.smooth_reference {
                smoothed
            } else {
                raw.clone()
            };
            Ok(ReferenceDay { raw, detect, fit })
        })
        .collect::<probelag_core::Result<Vec<_>>>()?;
    Ok((days, reference.diagnostics, reference.source))
}

/// Per-minute curve with thresholds and episode markers, for plotting.
fn plot_csv(day: &ReferenceDay, episodes: &[Episode], cfg: &RunConfig) -> Option<String> {
    let ffs = percentile(&day.detect, cfg.episode.ffs_percentile).ok()?;
    let mst = ffs * cfg.episode.mst_fraction;
    let mut markers: HashMap<i64, Vec<&str>> = HashMap::new();
    for e in episodes {
        for (ts, name) in [
            (e.sp_start, "sp_start"),
            (e.transition, "transition"),
            (e.rp_end, "rp_end"),
        ] {
            markers.entry(epoch_minute(&ts)).or_default().push(name);
        }
    }
    let mut t = Table::new(&[
        "minute",
        "timestamp",
        "speed",
        "smoothed",
        "ffs",
        "mst",
        "marker",
    ]);
    for i in 0..day.raw.len() {
        let ts = day.raw.timestamp(i);
        let m = epoch_minute(&ts);
        t.row([
            (ts.hour() * 60 + ts.minute()).to_string(),
            ts.to_rfc3339(),
            crate::table::opt(day.raw.values()[i]),
            crate::table::opt(day.detect.at_minute(m)),
            ffs.to_string(),
            mst.to_string(),
            markers.get(&m).map(|v| v.join(";")).unwrap_or_default(),
        ]);
    }
    Some(t.finish())
}

fn detect_with(cfg: &RunConfig, segments: &SegmentTable) -> CliResult<DetectOutput> {
    let (days, mut diagnostics, _) = reference_days(cfg, segments)?;
    let per_day: Vec<(Vec<Episode>, Option<Diagnostic>, Option<String>)> = days
        .par_iter()
        .map(|day| match detect_episodes(&day.detect, &cfg.episode) {
            Ok(eps) => {
                let plot = plot_csv(day, &eps, cfg);
                (eps, None, plot)
            }
            Err(e) => (
                Vec::new(),
                Some(Diagnostic::day(day.raw.segment_id(), day.raw.date(), &e)),
                plot_csv(day, &[], cfg),
            ),
        })
        .collect();

    let mut episodes = Vec::new();
    for (day, (eps, diag, plot)) in days.iter().zip(per_day) {
        episodes.extend(eps);
        diagnostics.extend(diag);
        if let Some(plot) = plot {
            let name = format!(
                "plot/{}.csv",
                file_stem(day.raw.segment_id(), day.raw.date())
            );
            write(&cfg.out_dir, &name, &plot)?;
        }
    }
    write(&cfg.out_dir, "episodes.csv", &write_episodes_csv(&episodes))?;
    write(
        &cfg.out_dir,
        "diagnostics_detect.csv",
        &diagnostics::to_csv(&diagnostics),
    )?;
    Ok(DetectOutput {
        days,
        episodes,
        diagnostics,
    })
}

/// Detects episodes on every reference day.
pub fn detect(cfg: &RunConfig) -> CliResult<DetectOutput> {
    cfg.validate()?;
    let segments = load_segments(cfg)?;
    detect_with(cfg, &segments)
}

pub struct MeasureOutput {
    pub results: Vec<LatencyResult>,
    pub diagnostics: Vec<Diagnostic>,
}

fn skip(e: &Episode, vendor: &str, period: Period, code: &str, message: String) -> Diagnostic {
    Diagnostic {
        segment_id: e.segment_id.clone(),
        vendor_id: vendor.to_string(),
        date: Some(e.date),
        episode_start: Some(e.sp_start),
        period: Some(period),
        code: code.to_string(),
        message,
    }
}

fn measure_with(
    cfg: &RunConfig,
    segments: &SegmentTable,
    days: &[ReferenceDay],
    episodes: &[Episode],
) -> CliResult<MeasureOutput> {
    let probes = load_probes(cfg, segments)?
        .into_par_iter()
        .map(|p| prepare(&p, cfg.smooth_probe, cfg.smooth_window))
        .collect::<probelag_core::Result<Vec<_>>>()?;
    let vendors: BTreeSet<&str> = probes.iter().map(|p| p.source_id()).collect();
    let probe_by: HashMap<(&str, &str, NaiveDate), &SpeedSeries> = probes
        .iter()
        .map(|p| ((p.segment_id(), p.source_id(), p.date()), p))
        .collect();
    let ref_by: HashMap<(&str, NaiveDate), &SpeedSeries> = days
        .iter()
        .map(|d| ((d.fit.segment_id(), d.fit.date()), &d.fit))
        .collect();

    let mut ordered: Vec<&Episode> = episodes.iter().collect();
    ordered.sort_by(|a, b| {
        (&a.segment_id, a.date, a.sp_start).cmp(&(&b.segment_id, b.date, b.sp_start))
    });

    let per_episode: Vec<(Vec<LatencyResult>, Vec<Diagnostic>)> = ordered
        .par_iter()
        .map(|e| {
            let mut results = Vec::new();
            let mut diags = Vec::new();
            let reference = ref_by.get(&(e.segment_id.as_str(), e.date));
            for vendor in &vendors {
                let probe = probe_by.get(&(e.segment_id.as_str(), *vendor, e.date));
                for period in Period::ALL {
                    let (Some(reference), Some(probe)) = (reference, probe) else {
                        let (code, what) = if reference.is_none() {
                            ("NO_REFERENCE_DATA", "reference")
                        } else {
                            ("NO_PROBE_DATA", "probe feed")
                        };
                        diags.push(skip(
                            e,
                            vendor,
                            period,
                            code,
                            format!("no {what} for {} on {}", e.segment_id, e.date),
                        ));
                        continue;
                    };
                    match measure_latency(
                        reference,
                        probe,
                        e,
                        period,
                        &cfg.bounds,
                        cfg.min_overlap_frac,
                    ) {
                        Ok(r) => results.push(r),
                        Err(err) => {
                            diags.push(skip(e, vendor, period, err.code(), err.to_string()))
                        }
                    }
                }
            }
            (results, diags)
        })
        .collect();

    let mut results = Vec::new();
    let mut diagnostics = Vec::new();
    for (r, d) in per_episode {
        results.extend(r);
        diagnostics.extend(d);
    }
    write(&cfg.out_dir, "latency.csv", &write_latency_csv(&results))?;
    write(
        &cfg.out_dir,
        "diagnostics_measure.csv",
        &diagnostics::to_csv(&diagnostics),
    )?;
    Ok(MeasureOutput {
        results,
        diagnostics,
    })
}

/// Measures every (episode, vendor, period) against episodes read from the
/// episodes file.
pub fn measure(cfg: &RunConfig) -> CliResult<MeasureOutput> {
    cfg.validate()?;
    let segments = load_segments(cfg)?;
    let path = cfg.episodes_path();
    let episodes = parse_episodes_csv(&inputs::read(&path)?).map_err(CliError::data(&path))?;
    let (days, _, _) = reference_days(cfg, &segments)?;
    measure_with(cfg, &segments, &days, &episodes)
}

pub struct PipelineOutput {
    pub detect: DetectOutput,
    pub measure: MeasureOutput,
    pub report: crate::report::Report,
}

/// Detect, measure and report in one pass, plus a manifest of every
/// parameter used.
pub fn pipeline(cfg: &RunConfig) -> CliResult<PipelineOutput> {
    cfg.validate()?;
    let segments = load_segments(cfg)?;
    let detect = detect_with(cfg, &segments)?;
    let measure = measure_with(cfg, &segments, &detect.days, &detect.episodes)?;
    let report = crate::report::report_with(
        cfg,
        &segments,
        &measure.results,
        &cfg.out_dir.join("latency.csv"),
    )?;
    write(&cfg.out_dir, "manifest.conf", &absolute(cfg).manifest())?;
    Ok(PipelineOutput {
        detect,
        measure,
        report,
    })
}

/// Same configuration with every input path made absolute.
fn absolute(cfg: &RunConfig) -> RunConfig {
    let abs = |p: &PathBuf| std::path::absolute(p).unwrap_or_else(|_| p.clone());
    let opt = |p: &Option<PathBuf>| p.as_ref().map(abs);
    RunConfig {
        segments: opt(&cfg.segments),
        reference_speeds: opt(&cfg.reference_speeds),
        reference_travel_times: opt(&cfg.reference_travel_times),
        detections: opt(&cfg.detections),
        sensor_map: opt(&cfg.sensor_map),
        probes: cfg.probes.iter().map(abs).collect(),
        episodes_csv: opt(&cfg.episodes_csv),
        latency_csv: opt(&cfg.latency_csv),
        ..cfg.clone()
    }
}

pub fn corpus_config(cfg: &RunConfig) -> CliResult<CorpusConfig> {
    let s = &cfg.synth;
    let tz = inputs::timezone(&s.timezone).map_err(|e| CliError::Config(e.to_string()))?;
    let noon = s.start_date.and_hms_opt(12, 0, 0).expect("valid time");
    let utc_offset = tz.offset_from_utc_datetime(&noon).fix();
    let defaults = CorpusConfig::default();
    Ok(CorpusConfig {
        seed: cfg.seed,
        start_date: s.start_date,
        days: s.days,
        utc_offset,
        segments: defaults
            .segments
            .into_iter()
            .map(|mut seg| {
                seg.timezone = s.timezone.clone();
                seg
            })
            .collect(),
        episode_starts: s.episode_starts.clone(),
        baseline_speed: s.baseline_speed,
        min_speed: s.min_speed,
        descent: s.descent,
        trough: s.trough,
        recovery: s.recovery,
        ref_noise_sigma: s.ref_noise,
        probe_noise_sigma: s.probe_noise,
        drop_prob: s.drop_prob,
        max_shift: s.max_shift,
        vendors: s.vendors.clone(),
    })
}

/// Writes a synthetic corpus in the ingest schemas, with its ground truth
/// and a config that runs the pipeline on it.
pub fn synth(cfg: &RunConfig) -> CliResult<Corpus> {
    let corpus = generate_corpus(&corpus_config(cfg)?).map_err(|e| match e {
        Error::InvalidParameter(m) | Error::Overlap(m) => CliError::Config(m),
        other => CliError::Core(other),
    })?;
    let out = &cfg.out_dir;
    write(out, "segments.csv", &write_segments(&corpus.segments))?;
    write(
        out,
        "reference_speeds.csv",
        &write_probe_feed(&corpus.reference),
    )?;
    let tts = reference_travel_times(&corpus.reference, &corpus.segments)?;
    write(out, "reference_travel_times.csv", &write_travel_times(&tts))?;
    write(
        out,
        "reference_detections.csv",
        &write_detections(&travel_times_to_detections(&tts)),
    )?;
    let pairs: Vec<SensorPair> = corpus
        .segments
        .keys()
        .map(|id| {
            let (upstream, downstream) = sensor_ids(id);
            SensorPair {
                segment_id: id.clone(),
                upstream,
                downstream,
            }
        })
        .collect();
    write(out, "sensor_map.csv", &write_sensor_map(&pairs))?;

    let mut probe_files = Vec::new();
    for v in &cfg.synth.vendors {
        let feeds: Vec<SpeedSeries> = corpus
            .probes
            .iter()
            .filter(|p| p.source_id() == v.id)
            .cloned()
            .collect();
        let name = format!("probes_{}.csv", v.id);
        write(out, &name, &write_probe_feed(&feeds))?;
        probe_files.push(PathBuf::from(name));
    }
    write(out, "planted.csv", &write_planted_csv(&corpus.planted))?;

    let run = RunConfig {
        segments: Some("segments.csv".into()),
        reference_speeds: Some("reference_speeds.csv".into()),
        reference_travel_times: None,
        detections: None,
        sensor_map: None,
        probes: probe_files,
        episodes_csv: None,
        latency_csv: None,
        ..cfg.clone()
    };
    let mut conf = run.manifest();
    conf.push_str("out_dir = results\n");
    write(out, "pipeline.conf", &conf)?;
    Ok(corpus)
}
