//! Minute-gridded speed series and the primitives built on them.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate};

use crate::error::{Error, Result};
use crate::Instant;

/// Speeds above this are treated as matcher artifacts and rejected.
pub const MAX_SPEED_MPH: f64 = 120.0;

/// A single speed observation before gridding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedSample {
    pub timestamp: Instant,
    pub speed: f64,
}

/// Per-minute speeds for one (segment, source, date).
///
/// Slot `i` holds the speed at `origin + i minutes`, or `None` when no data
/// was observed for that minute.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedSeries {
    segment_id: String,
    source_id: String,
    date: NaiveDate,
    origin: Instant,
    values: Vec<Option<f64>>,
}

pub(crate) fn check_speed(speed: f64) -> Result<f64> {
    if speed.is_finite() && speed > 0.0 && speed <= MAX_SPEED_MPH {
        Ok(speed)
    } else {
        Err(Error::OutOfRange(format!(
            "speed {speed} mi/h outside (0, {MAX_SPEED_MPH}]"
        )))
    }
}

/// Minutes since the Unix epoch, floored.
pub fn epoch_minute(ts: &Instant) -> i64 {
    ts.timestamp().div_euclid(60)
}

pub(crate) fn is_minute_aligned(ts: &Instant) -> bool {
    ts.timestamp().rem_euclid(60) == 0 && ts.timestamp_subsec_nanos() == 0
}

pub(crate) fn instant_at_minute(minute: i64, offset: FixedOffset) -> Instant {
    DateTime::from_timestamp(minute * 60, 0)
        .expect("minute within chrono range")
        .with_timezone(&offset)
}

impl SpeedSeries {
    pub fn new(
        segment_id: impl Into<String>,
        source_id: impl Into<String>,
        date: NaiveDate,
        origin: Instant,
        values: Vec<Option<f64>>,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("series has no slots".into()));
        }
        if !is_minute_aligned(&origin) {
            return Err(Error::InvalidParameter(format!(
                "origin {origin} is not minute-aligned"
            )));
        }
        for v in values.iter().flatten() {
            check_speed(*v)?;
        }
        Ok(Self {
            segment_id: segment_id.into(),
            source_id: source_id.into(),
            date,
            origin,
            values,
        })
    }

    pub fn segment_id(&self) -> &str {
        &self.segment_id
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn date(&self) -> NaiveDate {
        self.date
    }

    pub fn origin(&self) -> Instant {
        self.origin
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Epoch minute of slot 0.
    pub fn start_minute(&self) -> i64 {
        epoch_minute(&self.origin)
    }

    /// Epoch minute one past the last slot.
    pub fn end_minute(&self) -> i64 {
        self.start_minute() + self.values.len() as i64
    }

    /// Timestamp of slot `i`, in the series' offset.
    pub fn timestamp(&self, i: usize) -> Instant {
        self.origin + Duration::minutes(i as i64)
    }

    /// Exclusive end instant.
    pub fn end(&self) -> Instant {
        self.timestamp(self.values.len())
    }

    /// Slot index of a minute-aligned instant, if it falls inside the series.
    pub fn index_of(&self, ts: &Instant) -> Option<usize> {
        if !is_minute_aligned(ts) {
            return None;
        }
        self.index_of_minute(epoch_minute(ts))
    }

    pub fn index_of_minute(&self, minute: i64) -> Option<usize> {
        let i = minute - self.start_minute();
        (0..self.values.len() as i64)
            .contains(&i)
            .then_some(i as usize)
    }

    /// Speed at an epoch minute; `None` when missing or outside the series.
    pub fn at_minute(&self, minute: i64) -> Option<f64> {
        self.index_of_minute(minute).and_then(|i| self.values[i])
    }

    pub fn present_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn present_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flatten().copied()
    }

    pub fn with_source_id(mut self, source_id: impl Into<String>) -> Self {
        self.source_id = source_id.into();
        self
    }

    /// Re-expresses the origin in another UTC offset; slots are unchanged.
    pub fn with_offset(mut self, offset: FixedOffset) -> Self {
        self.origin = self.origin.with_timezone(&offset);
        self
    }

    /// Same metadata and origin, new slots. Callers guarantee valid speeds.
    pub(crate) fn with_values(&self, values: Vec<Option<f64>>) -> Self {
        debug_assert!(!values.is_empty());
        Self {
            values,
            ..self.clone_meta()
        }
    }

    pub(crate) fn with_origin(&self, origin: Instant, values: Vec<Option<f64>>) -> Self {
        Self {
            origin,
            values,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            segment_id: self.segment_id.clone(),
            source_id: self.source_id.clone(),
            date: self.date,
            origin: self.origin,
            values: Vec::new(),
        }
    }
}

pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    debug_assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Grids raw samples onto whole minutes, taking the per-minute median.
///
/// The series runs from the first to the last observed minute; minutes with
/// no samples are missing. The origin uses the UTC offset of the earliest
/// sample.
pub fn build_series(
    samples: &[SpeedSample],
    segment_id: &str,
    source_id: &str,
    date: NaiveDate,
) -> Result<SpeedSeries> {
    let first = samples
        .iter()
        .min_by_key(|s| s.timestamp)
        .ok_or_else(|| Error::EmptyInput("no speed samples".into()))?;
    let offset = *first.timestamp.offset();

    let mut by_minute: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for s in samples {
        check_speed(s.speed)?;
        if s.timestamp.date_naive() != date {
            return Err(Error::OutOfRange(format!(
                "sample at {} outside date {date}",
                s.timestamp
            )));
        }
        by_minute
            .entry(epoch_minute(&s.timestamp))
            .or_default()
            .push(s.speed);
    }

    let start = *by_minute.keys().next().expect("nonempty");
    let end = *by_minute.keys().next_back().expect("nonempty");
    let mut values = vec![None; (end - start + 1) as usize];
    for (minute, mut speeds) in by_minute {
        values[(minute - start) as usize] = Some(median_in_place(&mut speeds));
    }
    SpeedSeries::new(
        segment_id,
        source_id,
        date,
        instant_at_minute(start, offset),
        values,
    )
}

/// Inclusive linear-interpolation percentile of raw values.
///
/// Rank `r = p·(n−1)/100` on the sorted values; the result interpolates
/// between the two neighbouring order statistics.
pub fn percentile_of(values: &[f64], p: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("percentile {p}")));
    }
    if values.is_empty() {
        return Err(Error::EmptyInput("no values for percentile".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, p))
}

pub(crate) fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    // p·(n−1) is exact for integer p, so integral ranks stay integral.
    let rank = p * (n - 1) as f64 / 100.0;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Percentile over the present slots of a series.
pub fn percentile(series: &SpeedSeries, p: f64) -> Result<f64> {
    let present: Vec<f64> = series.present_values().collect();
    if present.is_empty() {
        return Err(Error::EmptyInput(format!(
            "series {}/{} has no present slots",
            series.segment_id, series.source_id
        )));
    }
    percentile_of(&present, p)
}

/// Fills interior missing runs shorter than `max_gap` minutes by linear
/// interpolation between the bounding present slots.
pub fn interpolate_gaps(series: &SpeedSeries, max_gap: usize) -> SpeedSeries {
    let mut values = series.values.clone();
    fill_gaps(&mut values, max_gap);
    series.with_values(values)
}

pub(crate) fn fill_gaps(values: &mut [Option<f64>], max_gap: usize) {
    let n = values.len();
    let mut i = 0;
    while i < n {
        if values[i].is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && values[i].is_none() {
            i += 1;
        }
        let run = i - start;
        if start == 0 || i == n || run >= max_gap {
            continue;
        }
        let left = values[start - 1].expect("bounded run");
        let right = values[i].expect("bounded run");
        let steps = (run + 1) as f64;
        for j in 0..run {
            values[start + j] = Some(left + (right - left) * (j + 1) as f64 / steps);
        }
    }
}

/// Centered moving average of width `window` (odd).
///
/// The window shrinks symmetrically at the series edges. Missing slots stay
/// missing and do not contribute to their neighbours.
pub fn smooth(series: &SpeedSeries, window: usize) -> Result<SpeedSeries> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "smoothing window must be odd and >= 1, got {window}"
        )));
    }
    let half = window / 2;
    let n = series.values.len();
    let values = (0..n)
        .map(|i| {
            series.values[i]?;
            let h = half.min(i).min(n - 1 - i);
            let (sum, count) = series.values[i - h..=i + h]
                .iter()
                .flatten()
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            Some(sum / count as f64)
        })
        .collect();
    Ok(series.with_values(values))
}

/// Slots with `t0 <= t < t1`, truncated to the series extent.
pub fn window(series: &SpeedSeries, t0: &Instant, t1: &Instant) -> Result<SpeedSeries> {
    if !is_minute_aligned(t0) || !is_minute_aligned(t1) {
        return Err(Error::InvalidParameter(
            "window bounds must be minute-aligned".into(),
        ));
    }
    if t0 >= t1 {
        return Err(Error::InvalidParameter(format!(
            "empty window [{t0}, {t1})"
        )));
    }
    let start = series.start_minute();
    let n = series.values.len() as i64;
    let a = (epoch_minute(t0) - start).clamp(0, n);
    let b = (epoch_minute(t1) - start).clamp(0, n);
    if a >= b {
        return Err(Error::OutOfRange(format!(
            "window [{t0}, {t1}) is disjoint from series {}..{}",
            series.origin,
            series.end()
        )));
    }
    let (a, b) = (a as usize, b as usize);
    Ok(series.with_origin(series.timestamp(a), series.values[a..b].to_vec()))
}
