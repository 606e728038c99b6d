//! Shift-search latency estimation.
//!
//! The probe curve is shifted minute by minute across [`ShiftBounds`] and
//! compared with the reference over a fixed episode window. Each fitness
//! function picks its own optimal shift; the reported latency is their mean.

use std::fmt;
use std::str::FromStr;

use bitflags::bitflags;
use chrono::{Duration, NaiveDate};

use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::ingest::{field, format_instant, parse_f64, parse_instant, to_csv};
use crate::timeseries::{epoch_minute, window, SpeedSeries};
use crate::Instant;

/// Windows shorter than this are not measured.
pub const MIN_WINDOW_MINUTES: i64 = 10;

pub const DEFAULT_MIN_OVERLAP_FRAC: f64 = 0.8;

/// Correlations closer than this count as tied. A straight-line window
/// correlates perfectly at two neighbouring shifts, and rounding alone
/// should not decide between them.
pub const COR_TIE_TOLERANCE: f64 = 1e-12;

/// Inclusive range of candidate shifts, in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftBounds {
    pub k_min: i32,
    pub k_max: i32,
}

impl Default for ShiftBounds {
    fn default() -> Self {
        Self {
            k_min: -5,
            k_max: 20,
        }
    }
}

impl ShiftBounds {
    pub fn new(k_min: i32, k_max: i32) -> Result<Self> {
        let b = Self { k_min, k_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_min < self.k_max && self.k_min <= 0 && self.k_max >= 0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "shift bounds {}:{} must satisfy k_min < k_max and include 0",
                self.k_min, self.k_max
            )))
        }
    }

    pub fn contains(&self, k: i32) -> bool {
        (self.k_min..=self.k_max).contains(&k)
    }

    /// Candidate shifts in tie-break order: smallest |k| first, then the
    /// smaller k.
    fn search_order(&self) -> Vec<i32> {
        let mut ks: Vec<i32> = (self.k_min..=self.k_max).collect();
        ks.sort_by_key(|k| (k.abs(), *k));
        ks
    }
}

impl fmt::Display for ShiftBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.k_min, self.k_max)
    }
}

impl FromStr for ShiftBounds {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("bounds `{s}`, expected K_MIN:K_MAX"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let k_min = a.trim().parse().map_err(|_| bad())?;
        let k_max = b.trim().parse().map_err(|_| bad())?;
        Self::new(k_min, k_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub enum Period {
    #[serde(rename = "SRE")]
    Sre,
    #[serde(rename = "SP")]
    Sp,
    #[serde(rename = "RP")]
    Rp,
}

impl Period {
    pub const ALL: [Period; 3] = [Period::Sre, Period::Sp, Period::Rp];

    pub fn as_str(&self) -> &'static str {
        match self {
            Period::Sre => "SRE",
            Period::Sp => "SP",
            Period::Rp => "RP",
        }
    }

    /// `[start, end)` of this period within an episode.
    pub fn bounds(&self, e: &Episode) -> (Instant, Instant) {
        match self {
            Period::Sre => (e.sp_start, e.rp_end),
            Period::Sp => (e.sp_start, e.transition),
            Period::Rp => (e.transition, e.rp_end),
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Period {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SRE" => Ok(Period::Sre),
            "SP" => Ok(Period::Sp),
            "RP" => Ok(Period::Rp),
            _ => Err(Error::InvalidParameter(format!("unknown period `{s}`"))),
        }
    }
}

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct LatencyFlags: u8 {
        /// Correlation was undefined at every shift (a flat window).
        const COR_UNDEFINED = 0b01;
        /// Some optimum sits on a search bound, so the true lag may lie outside.
        const BOUNDARY_OPTIMUM = 0b10;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyResult {
    pub segment_id: String,
    pub vendor_id: String,
    pub date: NaiveDate,
    /// `sp_start` of the measured episode; identifies it within the day.
    pub episode_start: Instant,
    pub period: Period,
    pub shift_avd: i32,
    pub shift_svd: i32,
    pub shift_cor: Option<i32>,
    pub mean_latency: f64,
    /// Co-present minutes at the AVD-optimal shift.
    pub overlap_count: usize,
    pub flags: LatencyFlags,
}

impl LatencyResult {
    pub fn defined_shifts(&self) -> impl Iterator<Item = i32> {
        [Some(self.shift_avd), Some(self.shift_svd), self.shift_cor]
            .into_iter()
            .flatten()
    }
}

/// Speed pairs at minutes where both series have data, over `reference`'s
/// extent.
fn co_present(reference: &SpeedSeries, probe: &SpeedSeries) -> Vec<(f64, f64)> {
    let start = reference.start_minute();
    reference
        .values()
        .iter()
        .enumerate()
        .filter_map(|(i, r)| Some((r.as_ref().copied()?, probe.at_minute(start + i as i64)?)))
        .collect()
}

fn require(pairs: &[(f64, f64)], need: usize) -> Result<()> {
    if pairs.len() < need {
        Err(Error::InsufficientOverlap {
            have: pairs.len(),
            need,
        })
    } else {
        Ok(())
    }
}

/// Sum of absolute speed differences over co-present minutes.
pub fn fitness_avd(reference: &SpeedSeries, probe: &SpeedSeries) -> Result<f64> {
    let pairs = co_present(reference, probe);
    require(&pairs, 1)?;
    Ok(pairs.iter().map(|(r, p)| (r - p).abs()).sum())
}

/// Sum of squared speed differences over co-present minutes.
pub fn fitness_svd(reference: &SpeedSeries, probe: &SpeedSeries) -> Result<f64> {
    let pairs = co_present(reference, probe);
    require(&pairs, 1)?;
    Ok(pairs.iter().map(|(r, p)| (r - p) * (r - p)).sum())
}

/// Pearson correlation over co-present minutes; `None` when either side is
/// constant.
pub fn fitness_cor(reference: &SpeedSeries, probe: &SpeedSeries) -> Result<Option<f64>> {
    let pairs = co_present(reference, probe);
    require(&pairs, 3)?;
    Ok(pearson(&pairs))
}

pub(crate) fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    let n = pairs.len() as f64;
    let (sx, sy) = pairs
        .iter()
        .fold((0.0, 0.0), |(sx, sy), (x, y)| (sx + x, sy + y));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `shifted(t) = probe(t + k)`: a positive `k` pulls later probe data back
/// onto the reference clock, testing "probe lags by k minutes".
pub fn shift_probe(probe: &SpeedSeries, k: i32) -> SpeedSeries {
    probe.with_origin(
        probe.origin() - Duration::minutes(i64::from(k)),
        probe.values().to_vec(),
    )
}

struct Best<T> {
    shift: Option<i32>,
    value: T,
}

impl Best<f64> {
    fn offer_min(&mut self, k: i32, v: f64) {
        if self.shift.is_none() || v < self.value {
            self.shift = Some(k);
            self.value = v;
        }
    }

    fn offer_max(&mut self, k: i32, v: f64) {
        if self.shift.is_none() || v > self.value + COR_TIE_TOLERANCE {
            self.shift = Some(k);
            self.value = v;
        }
    }
}

/// Finds the best-aligning shift of `probe` against `reference` over one
/// period of `episode`, under each fitness function.
///
/// Ties go to the smallest |k|, then the smaller k. Fails with
/// `InsufficientOverlap` if any candidate shift leaves fewer than
/// `min_overlap_frac` of the window's minutes co-present.
pub fn measure_latency(
    reference: &SpeedSeries,
    probe: &SpeedSeries,
    episode: &Episode,
    period: Period,
    bounds: &ShiftBounds,
    min_overlap_frac: f64,
) -> Result<LatencyResult> {
    bounds.validate()?;
    if !(min_overlap_frac > 0.0 && min_overlap_frac <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "min_overlap_frac {min_overlap_frac}"
        )));
    }
    let (t0, t1) = period.bounds(episode);
    let minutes = epoch_minute(&t1) - epoch_minute(&t0);
    if minutes < MIN_WINDOW_MINUTES {
        return Err(Error::WindowTooShort { minutes });
    }
    let ref_window = window(reference, &t0, &t1)?;
    let need = minutes as f64 * min_overlap_frac;

    let mut avd = Best {
        shift: None,
        value: 0.0,
    };
    let mut svd = Best {
        shift: None,
        value: 0.0,
    };
    let mut cor = Best {
        shift: None,
        value: 0.0,
    };
    let mut overlap_at = Vec::with_capacity(bounds.search_order().len());
    for k in bounds.search_order() {
        let shifted = shift_probe(probe, k);
        let pairs = co_present(&ref_window, &shifted);
        if (pairs.len() as f64) < need {
            return Err(Error::InsufficientOverlap {
                have: pairs.len(),
                need: need.ceil() as usize,
            });
        }
        avd.offer_min(k, pairs.iter().map(|(r, p)| (r - p).abs()).sum());
        svd.offer_min(k, pairs.iter().map(|(r, p)| (r - p) * (r - p)).sum());
        if pairs.len() >= 3 {
            if let Some(r) = pearson(&pairs) {
                cor.offer_max(k, r);
            }
        }
        overlap_at.push((k, pairs.len()));
    }

    let shift_avd = avd.shift.expect("bounds are nonempty");
    let shift_svd = svd.shift.expect("bounds are nonempty");
    let shift_cor = cor.shift;
    let mut flags = LatencyFlags::empty();
    if shift_cor.is_none() {
        flags |= LatencyFlags::COR_UNDEFINED;
    }
    let defined: Vec<i32> = [Some(shift_avd), Some(shift_svd), shift_cor]
        .into_iter()
        .flatten()
        .collect();
    if defined
        .iter()
        .any(|&k| k == bounds.k_min || k == bounds.k_max)
    {
        flags |= LatencyFlags::BOUNDARY_OPTIMUM;
    }
    let mean_latency = defined.iter().map(|&k| f64::from(k)).sum::<f64>() / defined.len() as f64;
    let overlap_count = overlap_at
        .iter()
        .find(|(k, _)| *k == shift_avd)
        .map_or(0, |(_, n)| *n);

    Ok(LatencyResult {
        segment_id: episode.segment_id.clone(),
        vendor_id: probe.source_id().to_string(),
        date: episode.date,
        episode_start: episode.sp_start,
        period,
        shift_avd,
        shift_svd,
        shift_cor,
        mean_latency,
        overlap_count,
        flags,
    })
}

// ---- CSV ----------------------------------------------------------------

pub const LATENCY_HEADER: [&str; 11] = [
    "segment_id",
    "vendor_id",
    "date",
    "episode_start",
    "period",
    "shift_avd",
    "shift_svd",
    "shift_cor",
    "mean_latency",
    "overlap_count",
    "flags",
];

pub fn write_latency_csv(results: &[LatencyResult]) -> String {
    to_csv(
        LATENCY_HEADER,
        results.iter().map(|r| {
            [
                r.segment_id.clone(),
                r.vendor_id.clone(),
                r.date.to_string(),
                format_instant(&r.episode_start),
                r.period.to_string(),
                r.shift_avd.to_string(),
                r.shift_svd.to_string(),
                r.shift_cor.map(|k| k.to_string()).unwrap_or_default(),
                r.mean_latency.to_string(),
                r.overlap_count.to_string(),
                r.flags
                    .iter_names()
                    .map(|(n, _)| n)
                    .collect::<Vec<_>>()
                    .join("|"),
            ]
        }),
    )
}

pub fn parse_latency_csv(bytes: &[u8]) -> Result<Vec<LatencyResult>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(bytes);
    let header = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(LATENCY_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", LATENCY_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let int = |i: usize, what: &str| -> Result<i32> {
            let s = field(&rec, i, line)?;
            s.parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad {what} `{s}`"),
            })
        };
        let perr = |e: Error| match e {
            Error::InvalidParameter(message) => Error::Parse { line, message },
            other => other,
        };
        let mut flags = LatencyFlags::empty();
        for name in field(&rec, 10, line)?.split('|').filter(|s| !s.is_empty()) {
            flags |= LatencyFlags::from_name(name).ok_or_else(|| Error::Parse {
                line,
                message: format!("unknown flag `{name}`"),
            })?;
        }
        let cor = field(&rec, 7, line)?;
        out.push(LatencyResult {
            segment_id: field(&rec, 0, line)?.to_string(),
            vendor_id: field(&rec, 1, line)?.to_string(),
            date: field(&rec, 2, line)?.parse().map_err(|e| Error::Parse {
                line,
                message: format!("bad date: {e}"),
            })?,
            episode_start: parse_instant(field(&rec, 3, line)?, line)?,
            period: field(&rec, 4, line)?.parse().map_err(perr)?,
            shift_avd: int(5, "shift_avd")?,
            shift_svd: int(6, "shift_svd")?,
            shift_cor: if cor.is_empty() {
                None
            } else {
                Some(int(7, "shift_cor")?)
            },
            mean_latency: parse_f64(field(&rec, 8, line)?, "mean_latency", line)?,
            overlap_count: field(&rec, 9, line)?.parse().map_err(|_| Error::Parse {
                line,
                message: "bad overlap_count".into(),
            })?,
            flags,
        });
    }
    Ok(out)
}
