//! Input schemas and the travel-time side of the reference data.
//!
//! Re-identification detections at two sensors are paired per device into
//! travel-time samples, filtered against a rolling median, and converted to
//! timestamped speeds. Probe feeds arrive already gridded per minute.
//!
//! CSV schemas (header row required, timestamps RFC 3339 with offset):
//!
//! | file         | columns                                           |
//! |--------------|---------------------------------------------------|
//! | probe feed   | `segment_id,vendor_id,timestamp,speed_mph`        |
//! | detections   | `sensor_id,device_id,timestamp`                   |
//! | travel times | `segment_id,start_timestamp,duration_s`           |
//! | segments     | `segment_id,state,road,length_mi,timezone`        |

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Duration, NaiveDate, SecondsFormat};

use crate::error::{Error, Result};
use crate::timeseries::{
    check_speed, epoch_minute, instant_at_minute, is_minute_aligned, median_in_place, SpeedSample,
    SpeedSeries,
};
use crate::Instant;

pub const PROBE_HEADER: [&str; 4] = ["segment_id", "vendor_id", "timestamp", "speed_mph"];
pub const DETECTION_HEADER: [&str; 3] = ["sensor_id", "device_id", "timestamp"];
pub const TRAVEL_TIME_HEADER: [&str; 3] = ["segment_id", "start_timestamp", "duration_s"];
pub const SEGMENT_HEADER: [&str; 5] = ["segment_id", "state", "road", "length_mi", "timezone"];
pub const SENSOR_MAP_HEADER: [&str; 3] = ["segment_id", "upstream_sensor", "downstream_sensor"];

/// One sighting of a (hashed) device at a roadside sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub sensor_id: String,
    pub device_id: String,
    pub timestamp: Instant,
}

/// A matched traversal: upstream detection time and seconds to downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct TravelTimeSample {
    pub segment_id: String,
    pub start_time: Instant,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub segment_id: String,
    pub state: String,
    pub road: String,
    pub length_mi: f64,
    /// IANA zone name, e.g. `America/New_York`.
    pub timezone: String,
}

pub type SegmentTable = BTreeMap<String, Segment>;

/// One row of a probe feed, before grouping into series.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub segment_id: String,
    pub vendor_id: String,
    pub timestamp: Instant,
    pub speed: f64,
    pub line: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchOutcome {
    pub samples: Vec<TravelTimeSample>,
    pub unmatched_upstream: usize,
    pub unmatched_downstream: usize,
}

/// Pairs each upstream detection with the earliest later, still unused
/// downstream detection of the same device within `max_tt_s` seconds.
///
/// Upstream detections are visited in time order per device. Output is
/// sorted by start time, then duration.
pub fn match_detections(
    upstream: &[Detection],
    downstream: &[Detection],
    max_tt_s: f64,
    segment_id: &str,
) -> Result<MatchOutcome> {
    if !(max_tt_s > 0.0) {
        return Err(Error::InvalidParameter(format!("max_tt {max_tt_s}")));
    }
    let mut by_device: BTreeMap<&str, (Vec<Instant>, Vec<Instant>)> = BTreeMap::new();
    for d in upstream {
        by_device
            .entry(&d.device_id)
            .or_default()
            .0
            .push(d.timestamp);
    }
    for d in downstream {
        by_device
            .entry(&d.device_id)
            .or_default()
            .1
            .push(d.timestamp);
    }

    let mut out = MatchOutcome::default();
    for (_, (mut ups, mut downs)) in by_device {
        ups.sort();
        downs.sort();
        let mut next = 0;
        let mut used = 0;
        for up in &ups {
            // Downstream sightings at or before this upstream one can never
            // pair with any later upstream sighting either.
            while next < downs.len() && downs[next] <= *up {
                next += 1;
            }
            let Some(down) = downs.get(next) else {
                out.unmatched_upstream += 1;
                continue;
            };
            let tt = seconds_between(up, down);
            if tt <= max_tt_s {
                out.samples.push(TravelTimeSample {
                    segment_id: segment_id.to_string(),
                    start_time: *up,
                    duration_s: tt,
                });
                next += 1;
                used += 1;
            } else {
                out.unmatched_upstream += 1;
            }
        }
        out.unmatched_downstream += downs.len() - used;
    }
    out.samples.sort_by(|a, b| {
        a.start_time
            .cmp(&b.start_time)
            .then(a.duration_s.total_cmp(&b.duration_s))
    });
    Ok(out)
}

fn seconds_between(a: &Instant, b: &Instant) -> f64 {
    let d = *b - *a;
    d.num_seconds() as f64 + d.subsec_nanos() as f64 * 1e-9
}

/// Keeps samples whose duration is within `k` median absolute deviations of
/// the median duration among samples starting within ±`window_min`/2 minutes.
///
/// When the local MAD is zero only samples equal to the local median survive.
/// Input order is preserved.
pub fn filter_outliers(
    samples: &[TravelTimeSample],
    window_min: u32,
    k: f64,
) -> Result<Vec<TravelTimeSample>> {
    if window_min < 5 {
        return Err(Error::InvalidParameter(format!(
            "outlier window {window_min} < 5 minutes"
        )));
    }
    if !(k > 0.0) {
        return Err(Error::InvalidParameter(format!("outlier multiplier {k}")));
    }
    let half = Duration::seconds(i64::from(window_min) * 30);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by_key(|&i| samples[i].start_time);

    let mut keep = vec![false; samples.len()];
    let (mut lo, mut hi) = (0, 0);
    let mut local = Vec::new();
    for &i in &order {
        let t = samples[i].start_time;
        while samples[order[lo]].start_time < t - half {
            lo += 1;
        }
        while hi < order.len() && samples[order[hi]].start_time <= t + half {
            hi += 1;
        }
        local.clear();
        local.extend(order[lo..hi].iter().map(|&j| samples[j].duration_s));
        let median = median_in_place(&mut local);
        for v in local.iter_mut() {
            *v = (*v - median).abs();
        }
        let mad = median_in_place(&mut local);
        let dev = (samples[i].duration_s - median).abs();
        keep[i] = if mad == 0.0 {
            dev == 0.0
        } else {
            dev <= k * mad
        };
    }
    Ok(samples
        .iter()
        .zip(keep)
        .filter(|&(_s, k)| k)
        .map(|(s, _k)| s.clone())
        .collect())
}

/// Converts one travel time to a speed attributed to the traversal midpoint.
pub fn to_speed_sample(sample: &TravelTimeSample, segment: &Segment) -> Result<SpeedSample> {
    if !(segment.length_mi > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "segment {} length {}",
            segment.segment_id, segment.length_mi
        )));
    }
    if !(sample.duration_s > 0.0) {
        return Err(Error::OutOfRange(format!(
            "duration {} s at {}",
            sample.duration_s, sample.start_time
        )));
    }
    let speed = segment.length_mi / (sample.duration_s / 3600.0);
    check_speed(speed).map_err(|_| {
        Error::OutOfRange(format!(
            "travel time {} s on {} implies {speed} mi/h",
            sample.duration_s, segment.segment_id
        ))
    })?;
    let half = Duration::microseconds((sample.duration_s * 0.5e6).round() as i64);
    Ok(SpeedSample {
        timestamp: sample.start_time + half,
        speed,
    })
}

pub fn to_speed_samples(
    samples: &[TravelTimeSample],
    segment: &Segment,
) -> Result<Vec<SpeedSample>> {
    samples
        .iter()
        .map(|s| to_speed_sample(s, segment))
        .collect()
}

// ---- CSV ----------------------------------------------------------------

fn reader<'b>(bytes: &'b [u8], expected: &[&str]) -> Result<csv::Reader<&'b [u8]>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let header = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected header `{}`, found `{}`",
                expected.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    Ok(rdr)
}

/// Iterates records, yielding `(line, record)`.
fn records<R: std::io::Read>(
    rdr: &mut csv::Reader<R>,
) -> impl Iterator<Item = Result<(u64, csv::StringRecord)>> + '_ {
    rdr.records().map(|r| {
        r.map(|rec| (rec.position().map_or(0, |p| p.line()), rec))
            .map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })
    })
}

pub(crate) fn field(rec: &csv::StringRecord, i: usize, line: u64) -> Result<&str> {
    rec.get(i).ok_or_else(|| Error::Parse {
        line,
        message: format!("missing column {}", i + 1),
    })
}

pub(crate) fn parse_instant(s: &str, line: u64) -> Result<Instant> {
    DateTime::parse_from_rfc3339(s).map_err(|e| Error::Parse {
        line,
        message: format!("bad timestamp `{s}`: {e}"),
    })
}

pub(crate) fn parse_f64(s: &str, what: &str, line: u64) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("bad {what} `{s}`"),
    })
}

pub(crate) fn format_instant(ts: &Instant) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, false)
}

pub(crate) fn to_csv<const N: usize>(
    header: [&str; N],
    rows: impl IntoIterator<Item = [String; N]>,
) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn parse_probe_rows(bytes: &[u8]) -> Result<Vec<ProbeRow>> {
    let mut rdr = reader(bytes, &PROBE_HEADER)?;
    let mut rows = Vec::new();
    for rec in records(&mut rdr) {
        let (line, rec) = rec?;
        let timestamp = parse_instant(field(&rec, 2, line)?, line)?;
        if !is_minute_aligned(&timestamp) {
            return Err(Error::Parse {
                line,
                message: format!("timestamp {timestamp} is not minute-aligned"),
            });
        }
        let speed = parse_f64(field(&rec, 3, line)?, "speed", line)?;
        check_speed(speed).map_err(|e| Error::OutOfRange(format!("line {line}: {e}")))?;
        rows.push(ProbeRow {
            segment_id: field(&rec, 0, line)?.to_string(),
            vendor_id: field(&rec, 1, line)?.to_string(),
            timestamp,
            speed,
            line,
        });
    }
    Ok(rows)
}

/// Groups probe rows into one series per (segment, vendor, local date).
///
/// The local date and series offset come from each row's own timestamp
/// offset; relocalize rows first to group in another zone. Output is sorted
/// by (segment, vendor, date).
pub fn series_from_probe_rows(rows: &[ProbeRow]) -> Result<Vec<SpeedSeries>> {
    type Key<'a> = (&'a str, &'a str, NaiveDate);
    let mut groups: BTreeMap<Key<'_>, BTreeMap<i64, &ProbeRow>> = BTreeMap::new();
    for row in rows {
        let key = (
            row.segment_id.as_str(),
            row.vendor_id.as_str(),
            row.timestamp.date_naive(),
        );
        let minute = epoch_minute(&row.timestamp);
        if groups.entry(key).or_default().insert(minute, row).is_some() {
            return Err(Error::DuplicateRow {
                line: row.line,
                key: format!("{}/{}/{}", row.segment_id, row.vendor_id, row.timestamp),
            });
        }
    }
    groups
        .into_iter()
        .map(|((segment, vendor, date), minutes)| {
            let (&start, first) = minutes.iter().next().expect("nonempty group");
            let end = *minutes.keys().next_back().expect("nonempty group");
            let mut values = vec![None; (end - start + 1) as usize];
            for (m, row) in &minutes {
                values[(m - start) as usize] = Some(row.speed);
            }
            let origin = instant_at_minute(start, *first.timestamp.offset());
            SpeedSeries::new(segment, vendor, date, origin, values)
        })
        .collect()
}

pub fn parse_probe_feed(bytes: &[u8]) -> Result<Vec<SpeedSeries>> {
    series_from_probe_rows(&parse_probe_rows(bytes)?)
}

/// Writes present slots of each series in the probe feed schema. The
/// series' source id goes in the vendor column.
pub fn write_probe_feed(series: &[SpeedSeries]) -> String {
    to_csv(
        PROBE_HEADER,
        series.iter().flat_map(|s| {
            s.values().iter().enumerate().filter_map(move |(i, v)| {
                v.map(|speed| {
                    [
                        s.segment_id().to_string(),
                        s.source_id().to_string(),
                        format_instant(&s.timestamp(i)),
                        speed.to_string(),
                    ]
                })
            })
        }),
    )
}

pub fn parse_detections(bytes: &[u8]) -> Result<Vec<Detection>> {
    let mut rdr = reader(bytes, &DETECTION_HEADER)?;
    records(&mut rdr)
        .map(|rec| {
            let (line, rec) = rec?;
            Ok(Detection {
                sensor_id: field(&rec, 0, line)?.to_string(),
                device_id: field(&rec, 1, line)?.to_string(),
                timestamp: parse_instant(field(&rec, 2, line)?, line)?,
            })
        })
        .collect()
}

pub fn write_detections(detections: &[Detection]) -> String {
    to_csv(
        DETECTION_HEADER,
        detections.iter().map(|d| {
            [
                d.sensor_id.clone(),
                d.device_id.clone(),
                format_instant(&d.timestamp),
            ]
        }),
    )
}

pub fn parse_travel_times(bytes: &[u8]) -> Result<Vec<TravelTimeSample>> {
    let mut rdr = reader(bytes, &TRAVEL_TIME_HEADER)?;
    records(&mut rdr)
        .map(|rec| {
            let (line, rec) = rec?;
            let duration_s = parse_f64(field(&rec, 2, line)?, "duration", line)?;
            if !(duration_s > 0.0 && duration_s.is_finite()) {
                return Err(Error::OutOfRange(format!(
                    "line {line}: duration {duration_s} s"
                )));
            }
            Ok(TravelTimeSample {
                segment_id: field(&rec, 0, line)?.to_string(),
                start_time: parse_instant(field(&rec, 1, line)?, line)?,
                duration_s,
            })
        })
        .collect()
}

pub fn write_travel_times(samples: &[TravelTimeSample]) -> String {
    to_csv(
        TRAVEL_TIME_HEADER,
        samples.iter().map(|s| {
            [
                s.segment_id.clone(),
                format_instant(&s.start_time),
                s.duration_s.to_string(),
            ]
        }),
    )
}

pub fn parse_segments(bytes: &[u8]) -> Result<SegmentTable> {
    let mut rdr = reader(bytes, &SEGMENT_HEADER)?;
    let mut table = SegmentTable::new();
    for rec in records(&mut rdr) {
        let (line, rec) = rec?;
        let length_mi = parse_f64(field(&rec, 3, line)?, "length", line)?;
        if !(length_mi > 0.0 && length_mi.is_finite()) {
            return Err(Error::OutOfRange(format!(
                "line {line}: segment length {length_mi}"
            )));
        }
        let seg = Segment {
            segment_id: field(&rec, 0, line)?.to_string(),
            state: field(&rec, 1, line)?.to_string(),
            road: field(&rec, 2, line)?.to_string(),
            length_mi,
            timezone: field(&rec, 4, line)?.to_string(),
        };
        if table.contains_key(&seg.segment_id) {
            return Err(Error::DuplicateRow {
                line,
                key: seg.segment_id,
            });
        }
        table.insert(seg.segment_id.clone(), seg);
    }
    Ok(table)
}

pub fn write_segments(table: &SegmentTable) -> String {
    to_csv(
        SEGMENT_HEADER,
        table.values().map(|s| {
            [
                s.segment_id.clone(),
                s.state.clone(),
                s.road.clone(),
                s.length_mi.to_string(),
                s.timezone.clone(),
            ]
        }),
    )
}

/// Sensor pair bounding one directional segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorPair {
    pub segment_id: String,
    pub upstream: String,
    pub downstream: String,
}

pub fn parse_sensor_map(bytes: &[u8]) -> Result<Vec<SensorPair>> {
    let mut rdr = reader(bytes, &SENSOR_MAP_HEADER)?;
    records(&mut rdr)
        .map(|rec| {
            let (line, rec) = rec?;
            Ok(SensorPair {
                segment_id: field(&rec, 0, line)?.to_string(),
                upstream: field(&rec, 1, line)?.to_string(),
                downstream: field(&rec, 2, line)?.to_string(),
            })
        })
        .collect()
}

pub fn write_sensor_map(pairs: &[SensorPair]) -> String {
    to_csv(
        SENSOR_MAP_HEADER,
        pairs.iter().map(|p| {
            [
                p.segment_id.clone(),
                p.upstream.clone(),
                p.downstream.clone(),
            ]
        }),
    )
}

/// Splits detections by sensor id.
pub fn detections_by_sensor(detections: &[Detection]) -> HashMap<&str, Vec<Detection>> {
    let mut map: HashMap<&str, Vec<Detection>> = HashMap::new();
    for d in detections {
        map.entry(d.sensor_id.as_str()).or_default().push(d.clone());
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{FixedOffset, TimeZone};

    fn at(h: u32, m: u32, s: u32) -> Instant {
        FixedOffset::west_opt(5 * 3600)
            .unwrap()
            .with_ymd_and_hms(2015, 12, 10, h, m, s)
            .unwrap()
    }

    fn det(sensor: &str, device: &str, ts: Instant) -> Detection {
        Detection {
            sensor_id: sensor.into(),
            device_id: device.into(),
            timestamp: ts,
        }
    }

    fn tt(start: Instant, duration_s: f64) -> TravelTimeSample {
        TravelTimeSample {
            segment_id: "s".into(),
            start_time: start,
            duration_s,
        }
    }

    fn segment(length_mi: f64) -> Segment {
        Segment {
            segment_id: "s".into(),
            state: "SC".into(),
            road: "I-85".into(),
            length_mi,
            timezone: "America/New_York".into(),
        }
    }

    #[test]
    fn matches_single_device() {
        let out = match_detections(
            &[det("A", "x", at(8, 0, 0))],
            &[det("B", "x", at(8, 5, 0))],
            1800.0,
            "s",
        )
        .unwrap();
        assert_eq!(out.samples, vec![tt(at(8, 0, 0), 300.0)]);

        let out = match_detections(&[det("A", "x", at(8, 0, 0))], &[], 1800.0, "s").unwrap();
        assert!(out.samples.is_empty());
        assert_eq!(out.unmatched_upstream, 1);
    }

    #[test]
    fn matches_repeat_trips_in_order() {
        let up = [det("A", "x", at(8, 20, 0)), det("A", "x", at(8, 0, 0))];
        let down = [det("B", "x", at(8, 27, 0)), det("B", "x", at(8, 6, 0))];
        let out = match_detections(&up, &down, 1800.0, "s").unwrap();
        assert_eq!(
            out.samples,
            vec![tt(at(8, 0, 0), 360.0), tt(at(8, 20, 0), 420.0)]
        );
    }

    #[test]
    fn match_respects_cap_and_strict_order() {
        let up = [det("A", "x", at(8, 0, 0))];
        let down = [det("B", "x", at(8, 0, 0)), det("B", "x", at(9, 0, 1))];
        let out = match_detections(&up, &down, 3600.0, "s").unwrap();
        assert!(out.samples.is_empty());
        assert_eq!(out.unmatched_downstream, 2);
        assert!(match_detections(&up, &down, 0.0, "s").is_err());
    }

    #[test]
    fn outlier_filter_examples() {
        let same: Vec<_> = (0..6).map(|i| tt(at(8, i, 0), 300.0)).collect();
        assert_eq!(filter_outliers(&same, 15, 3.0).unwrap(), same);

        let mut mixed: Vec<_> = (0..10).map(|i| tt(at(8, i, 0), 300.0)).collect();
        mixed.insert(4, tt(at(8, 4, 30), 3000.0));
        let kept = filter_outliers(&mixed, 15, 3.0).unwrap();
        assert_eq!(kept.len(), 10);
        assert!(kept.iter().all(|s| s.duration_s == 300.0));

        assert!(filter_outliers(&[], 15, 3.0).unwrap().is_empty());
        assert!(filter_outliers(&same, 4, 3.0).is_err());
        assert!(filter_outliers(&same, 15, 0.0).is_err());
    }

    #[test]
    fn outlier_filter_uses_mad_scale() {
        // durations 290..=310 plus one at 400: MAD of the window is 5.5
        let mut v: Vec<_> = (0..21)
            .map(|i| {
                tt(
                    at(8, 0, 0) + chrono::Duration::seconds(i * 10),
                    290.0 + i as f64,
                )
            })
            .collect();
        v.push(tt(at(8, 1, 45), 400.0));
        let kept = filter_outliers(&v, 15, 3.0).unwrap();
        assert_eq!(kept.len(), 21);
        assert!(kept.iter().all(|s| s.duration_s < 400.0));
    }

    #[test]
    fn travel_time_to_speed() {
        let s = to_speed_sample(&tt(at(8, 0, 0), 120.0), &segment(2.0)).unwrap();
        assert_eq!(s.speed, 60.0);
        assert_eq!(s.timestamp, at(8, 1, 0));

        // 7.15 mi in 429 s: 7.15 / (429 / 3600) = 60
        let s = to_speed_sample(&tt(at(8, 0, 0), 429.0), &segment(7.15)).unwrap();
        assert!((s.speed - 60.0).abs() < 1e-9);

        let slow = to_speed_sample(&tt(at(8, 0, 0), 36000.0), &segment(1.0)).unwrap();
        assert!((slow.speed - 0.1).abs() < 1e-12);

        // 150 mi/h
        assert!(matches!(
            to_speed_sample(&tt(at(8, 0, 0), 24.0), &segment(1.0)),
            Err(Error::OutOfRange(_))
        ));
        assert!(to_speed_samples(
            &[tt(at(8, 0, 0), 120.0), tt(at(8, 0, 0), 24.0)],
            &segment(1.0)
        )
        .is_err());
    }

    #[test]
    fn probe_feed_parsing() {
        let mut csv = String::from("segment_id,vendor_id,timestamp,speed_mph\n");
        for m in 0..3 {
            csv.push_str(&format!("s,v1,2015-12-10T08:0{m}:00-05:00,6{m}\n"));
        }
        csv.push_str("s,v1,2015-12-10T08:05:00-05:00,50.5\n");
        let series = parse_probe_feed(csv.as_bytes()).unwrap();
        assert_eq!(series.len(), 1);
        assert_eq!(
            series[0].values(),
            &[Some(60.0), Some(61.0), Some(62.0), None, None, Some(50.5)]
        );
        assert_eq!(series[0].source_id(), "v1");

        csv.push_str("s,v1,2015-12-10T08:01:00-05:00,40\n");
        assert!(matches!(
            parse_probe_feed(csv.as_bytes()),
            Err(Error::DuplicateRow { line: 6, .. })
        ));
    }

    #[test]
    fn probe_feed_errors() {
        let bad_header = "segment,vendor,timestamp,speed\n";
        assert!(matches!(
            parse_probe_feed(bad_header.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        let bad_speed =
            "segment_id,vendor_id,timestamp,speed_mph\ns,v,2015-12-10T08:00:00-05:00,130\n";
        assert!(matches!(
            parse_probe_feed(bad_speed.as_bytes()),
            Err(Error::OutOfRange(_))
        ));
        let unaligned =
            "segment_id,vendor_id,timestamp,speed_mph\ns,v,2015-12-10T08:00:30-05:00,60\n";
        assert!(matches!(
            parse_probe_feed(unaligned.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn full_day_feed_is_one_series() {
        let offset = FixedOffset::west_opt(5 * 3600).unwrap();
        let midnight = offset.with_ymd_and_hms(2015, 12, 10, 0, 0, 0).unwrap();
        let rows: Vec<ProbeRow> = (0..1440)
            .map(|m| ProbeRow {
                segment_id: "s".into(),
                vendor_id: "v".into(),
                timestamp: midnight + Duration::minutes(m),
                speed: 60.0,
                line: m as u64 + 2,
            })
            .collect();
        let series = series_from_probe_rows(&rows).unwrap();
        assert_eq!(series.len(), 1);
        assert_eq!(series[0].len(), 1440);
        assert_eq!(series[0].present_count(), 1440);
    }

    #[test]
    fn detection_and_travel_time_parsing() {
        let csv = "sensor_id,device_id,timestamp\nA,d1,2015-12-10T08:00:00-05:00\nB,d1,2015-12-10T08:05:00-05:00\nA,d2,2015-12-10T08:01:00.5-05:00\n";
        let d = parse_detections(csv.as_bytes()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(
            parse_detections(write_detections(&d).as_bytes()).unwrap(),
            d
        );

        let bad = "sensor_id,device_id,timestamp\nA,d1,2015-12-10T08:00:00-05:00\nA,d1,yesterday\n";
        match parse_detections(bad.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("yesterday"));
            }
            other => panic!("unexpected {other:?}"),
        }

        assert!(
            parse_travel_times(b"segment_id,start_timestamp,duration_s\n")
                .unwrap()
                .is_empty()
        );
        let t = parse_travel_times(
            b"segment_id,start_timestamp,duration_s\ns,2015-12-10T08:00:00-05:00,301.25\n",
        )
        .unwrap();
        assert_eq!(t, vec![tt(at(8, 0, 0), 301.25)]);
    }

    #[test]
    fn segment_table_round_trip() {
        let csv = "segment_id,state,road,length_mi,timezone\nsc1,SC,I-85,7.15,America/New_York\nnh1,NH,I-93,3.63,America/New_York\n";
        let table = parse_segments(csv.as_bytes()).unwrap();
        assert_eq!(table["sc1"].length_mi, 7.15);
        assert_eq!(
            parse_segments(write_segments(&table).as_bytes()).unwrap(),
            table
        );
        let bad = "segment_id,state,road,length_mi,timezone\nsc1,SC,I-85,0,America/New_York\n";
        assert!(parse_segments(bad.as_bytes()).is_err());
    }

    #[test]
    fn sensor_map_round_trip() {
        let csv = "segment_id,upstream_sensor,downstream_sensor\nsc1,a,b\n";
        let pairs = parse_sensor_map(csv.as_bytes()).unwrap();
        assert_eq!(pairs[0].downstream, "b");
        assert_eq!(write_sensor_map(&pairs), csv);
    }
}
