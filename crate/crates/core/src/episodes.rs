//! Slowdown-and-recovery episode detection on a day of reference speeds.
//!
//! Free-flow speed (FFS) is a high percentile of the day's speeds and the
//! minimum slowdown threshold (MST) a fraction of it. Each run of minutes
//! below MST seeds a candidate whose transition is the run's minimum; the
//! slowdown start and recovery end are found by searching outwards until the
//! speed is back at FFS. Candidates are then filtered for data gaps, merged
//! when close together, and dropped when too short.

use bitflags::bitflags;
use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::ingest::{field, format_instant, parse_f64, parse_instant, to_csv};
use crate::timeseries::{epoch_minute, fill_gaps, percentile, SpeedSeries};
use crate::Instant;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeParams {
    /// Percentile of the day's speeds taken as free-flow speed.
    pub ffs_percentile: f64,
    /// MST as a fraction of FFS.
    pub mst_fraction: f64,
    /// Missing runs this long or longer disqualify an episode; shorter ones
    /// are interpolated.
    pub max_patch_gap: usize,
    /// Episodes whose gap (next start minus previous end) is at most this
    /// many minutes are merged.
    pub merge_gap: i64,
    pub min_duration: i64,
}

impl Default for EpisodeParams {
    fn default() -> Self {
        Self {
            ffs_percentile: 80.0,
            mst_fraction: 0.40,
            max_patch_gap: 5,
            merge_gap: 30,
            min_duration: 60,
        }
    }
}

impl EpisodeParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.ffs_percentile) {
            return Err(Error::InvalidParameter(format!(
                "ffs_percentile {}",
                self.ffs_percentile
            )));
        }
        if !(self.mst_fraction > 0.0 && self.mst_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "mst_fraction {} not in (0, 1)",
                self.mst_fraction
            )));
        }
        if self.max_patch_gap < 1 || self.merge_gap < 1 || self.min_duration < 1 {
            return Err(Error::InvalidParameter(
                "episode durations must be >= 1 minute".into(),
            ));
        }
        Ok(())
    }
}

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct EpisodeFlags: u8 {
        const SP_START_CLIPPED = 0b01;
        const RP_END_CLIPPED = 0b10;
    }
}

/// One slowdown-and-recovery episode.
///
/// The slowdown period is `[sp_start, transition)`, the recovery period
/// `[transition, rp_end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub segment_id: String,
    pub date: NaiveDate,
    pub sp_start: Instant,
    pub transition: Instant,
    pub rp_end: Instant,
    pub ffs: f64,
    pub mst: f64,
    pub min_speed: f64,
    pub flags: EpisodeFlags,
}

impl Episode {
    pub fn duration_minutes(&self) -> i64 {
        epoch_minute(&self.rp_end) - epoch_minute(&self.sp_start)
    }
}

/// Slot-index form used while detecting.
#[derive(Debug, Clone, Copy)]
struct Span {
    sp_start: usize,
    transition: usize,
    rp_end: usize,
    flags: EpisodeFlags,
}

fn thresholds(day: &SpeedSeries, params: &EpisodeParams) -> Result<(f64, f64)> {
    let ffs = percentile(day, params.ffs_percentile)?;
    Ok((ffs, params.mst_fraction * ffs))
}

/// Earliest index of the minimum present value in `[a, b)`.
fn argmin(values: &[Option<f64>], a: usize, b: usize) -> Option<(usize, f64)> {
    values[a..b]
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (a + i, v)))
        .fold(None, |best, (i, v)| match best {
            Some((_, bv)) if bv <= v => best,
            _ => Some((i, v)),
        })
}

fn candidate_spans(values: &[Option<f64>], ffs: f64, mst: f64) -> Vec<Span> {
    let n = values.len();
    let mut groups = Vec::new();
    let mut i = 0;
    while i < n {
        if matches!(values[i], Some(v) if v < mst) {
            let start = i;
            while i < n && matches!(values[i], Some(v) if v < mst) {
                i += 1;
            }
            groups.push((start, i));
        } else {
            i += 1;
        }
    }

    let mut spans: Vec<Span> = Vec::with_capacity(groups.len());
    for (g, &(start, end)) in groups.iter().enumerate() {
        let (transition, _) = argmin(values, start, end).expect("marked run is present");
        let mut flags = EpisodeFlags::empty();

        let floor = spans.last().map_or(0, |prev| prev.rp_end);
        let sp_start = (floor..transition)
            .rev()
            .find(|&j| matches!(values[j], Some(v) if v >= ffs))
            .unwrap_or_else(|| {
                flags |= EpisodeFlags::SP_START_CLIPPED;
                floor
            });

        let ceiling = groups.get(g + 1).map_or(n - 1, |&(next, _)| next);
        let rp_end = (transition + 1..=ceiling)
            .find(|&j| matches!(values[j], Some(v) if v >= ffs))
            .unwrap_or_else(|| {
                flags |= EpisodeFlags::RP_END_CLIPPED;
                ceiling.max(transition)
            });

        spans.push(Span {
            sp_start,
            transition,
            rp_end,
            flags,
        });
    }
    spans
}

fn to_episode(
    day: &SpeedSeries,
    span: Span,
    ffs: f64,
    mst: f64,
    values: &[Option<f64>],
) -> Episode {
    let min_speed = argmin(values, span.sp_start, span.rp_end.max(span.sp_start + 1))
        .map_or(f64::NAN, |(_, v)| v);
    Episode {
        segment_id: day.segment_id().to_string(),
        date: day.date(),
        sp_start: day.timestamp(span.sp_start),
        transition: day.timestamp(span.transition),
        rp_end: day.timestamp(span.rp_end),
        ffs,
        mst,
        min_speed,
        flags: span.flags,
    }
}

fn to_span(day: &SpeedSeries, e: &Episode) -> Result<Span> {
    let idx = |ts: &Instant| {
        day.index_of(ts).ok_or_else(|| {
            Error::OutOfRange(format!(
                "episode boundary {ts} not on the grid of {} {}",
                day.segment_id(),
                day.date()
            ))
        })
    };
    Ok(Span {
        sp_start: idx(&e.sp_start)?,
        transition: idx(&e.transition)?,
        rp_end: idx(&e.rp_end)?,
        flags: e.flags,
    })
}

/// Slots patched for a span: its window plus the closing `rp_end` minute,
/// so a hole just before `rp_end` is still bounded on the right.
fn patch_span(values: &mut [Option<f64>], span: &Span, max_gap: usize) {
    let end = (span.rp_end + 1).min(values.len());
    fill_gaps(&mut values[span.sp_start..end], max_gap);
}

/// Candidate episodes before gap, merge, and duration rules.
///
/// Candidates may be degenerate (`sp_start == transition`) when clipped at a
/// neighbour; [`apply_filters`] removes any that survive merging.
pub fn detect_candidates(day: &SpeedSeries, params: &EpisodeParams) -> Result<Vec<Episode>> {
    params.validate()?;
    let (ffs, mst) = thresholds(day, params)?;
    Ok(candidate_spans(day.values(), ffs, mst)
        .into_iter()
        .map(|s| to_episode(day, s, ffs, mst, day.values()))
        .collect())
}

fn longest_missing_run(values: &[Option<f64>]) -> usize {
    let mut longest = 0;
    let mut run = 0;
    for v in values {
        if v.is_none() {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }
    longest
}

/// Returns `day` with short missing runs interpolated inside each window.
pub fn patch_episode_windows(
    day: &SpeedSeries,
    episodes: &[Episode],
    max_gap: usize,
) -> Result<SpeedSeries> {
    let mut values = day.values().to_vec();
    for e in episodes {
        patch_span(&mut values, &to_span(day, e)?, max_gap);
    }
    Ok(day.with_values(values))
}

/// Gap discard, gap patching, merging, and duration filtering, in that order.
///
/// Candidates must come from [`detect_candidates`] on the same `day`.
pub fn apply_filters(
    candidates: &[Episode],
    day: &SpeedSeries,
    params: &EpisodeParams,
) -> Result<Vec<Episode>> {
    let Some(first) = candidates.first() else {
        return Ok(Vec::new());
    };
    let (ffs, mst) = (first.ffs, first.mst);

    let mut kept = Vec::with_capacity(candidates.len());
    for c in candidates {
        let s = to_span(day, c)?;
        if longest_missing_run(&day.values()[s.sp_start..s.rp_end]) < params.max_patch_gap {
            kept.push(s);
        }
    }

    let mut values = day.values().to_vec();
    for s in &kept {
        patch_span(&mut values, s, params.max_patch_gap);
    }

    let mut merged: Vec<Span> = Vec::with_capacity(kept.len());
    for span in kept {
        match merged.last_mut() {
            Some(prev) if (span.sp_start as i64 - prev.rp_end as i64) <= params.merge_gap => {
                let (transition, _) = argmin(&values, prev.sp_start, span.rp_end)
                    .expect("merged window holds marked minutes");
                prev.transition = transition;
                prev.rp_end = span.rp_end;
                prev.flags = (prev.flags & EpisodeFlags::SP_START_CLIPPED)
                    | (span.flags & EpisodeFlags::RP_END_CLIPPED);
            }
            _ => merged.push(span),
        }
    }

    Ok(merged
        .into_iter()
        .filter(|s| (s.rp_end - s.sp_start) as i64 >= params.min_duration)
        .filter(|s| s.sp_start < s.transition && s.transition < s.rp_end)
        .map(|s| to_episode(day, s, ffs, mst, &values))
        .collect())
}

/// Full detection: candidates, then filters. Output is chronological and
/// non-overlapping.
pub fn detect_episodes(day: &SpeedSeries, params: &EpisodeParams) -> Result<Vec<Episode>> {
    let candidates = detect_candidates(day, params)?;
    apply_filters(&candidates, day, params)
}

// ---- CSV ----------------------------------------------------------------

pub const EPISODE_HEADER: [&str; 9] = [
    "segment_id",
    "date",
    "sp_start",
    "transition",
    "rp_end",
    "ffs",
    "mst",
    "min_speed",
    "flags",
];

fn flags_to_string(flags: EpisodeFlags) -> String {
    flags
        .iter_names()
        .map(|(n, _)| n)
        .collect::<Vec<_>>()
        .join("|")
}

pub fn write_episodes_csv(episodes: &[Episode]) -> String {
    to_csv(
        EPISODE_HEADER,
        episodes.iter().map(|e| {
            [
                e.segment_id.clone(),
                e.date.to_string(),
                format_instant(&e.sp_start),
                format_instant(&e.transition),
                format_instant(&e.rp_end),
                e.ffs.to_string(),
                e.mst.to_string(),
                e.min_speed.to_string(),
                flags_to_string(e.flags),
            ]
        }),
    )
}

pub fn parse_episodes_csv(bytes: &[u8]) -> Result<Vec<Episode>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(bytes);
    let header = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(EPISODE_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", EPISODE_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let date = field(&rec, 1, line)?
            .parse::<NaiveDate>()
            .map_err(|e| Error::Parse {
                line,
                message: format!("bad date: {e}"),
            })?;
        let mut flags = EpisodeFlags::empty();
        for name in field(&rec, 8, line)?.split('|').filter(|s| !s.is_empty()) {
            flags |= EpisodeFlags::from_name(name).ok_or_else(|| Error::Parse {
                line,
                message: format!("unknown flag `{name}`"),
            })?;
        }
        out.push(Episode {
            segment_id: field(&rec, 0, line)?.to_string(),
            date,
            sp_start: parse_instant(field(&rec, 2, line)?, line)?,
            transition: parse_instant(field(&rec, 3, line)?, line)?,
            rp_end: parse_instant(field(&rec, 4, line)?, line)?,
            ffs: parse_f64(field(&rec, 5, line)?, "ffs", line)?,
            mst: parse_f64(field(&rec, 6, line)?, "mst", line)?,
            min_speed: parse_f64(field(&rec, 7, line)?, "min_speed", line)?,
            flags,
        });
    }
    Ok(out)
}
