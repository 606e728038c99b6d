//! Synthetic reference and probe feeds with planted latency.
//!
//! A reference day is a flat baseline with trapezoidal slowdowns. A probe
//! feed is derived from it by delaying the curve, optionally by different
//! amounts on the slowdown and recovery sides, then adding noise and
//! dropping minutes. Because the delays are known, every stage of the
//! pipeline can be checked against ground truth.

use chrono::{Duration, FixedOffset, NaiveDate, NaiveTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ingest::{format_instant, to_csv, Detection, Segment, SegmentTable, TravelTimeSample};
use crate::timeseries::{epoch_minute, SpeedSeries, MAX_SPEED_MPH};
use crate::Instant;

/// Noisy speeds are clamped to at least this.
pub const MIN_SYNTH_SPEED: f64 = 1.0;

pub const MINUTES_PER_DAY: usize = 1440;

/// A trapezoidal slowdown: linear descent, flat trough, linear recovery.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowdownProfile {
    pub baseline_speed: f64,
    pub min_speed: f64,
    /// Last minute at baseline before the descent.
    pub sp_begin: Instant,
    pub descent: u32,
    /// Extra minutes held at `min_speed` after the descent ends.
    pub trough: u32,
    pub recovery: u32,
}

impl SlowdownProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_speed > 0.0 && self.min_speed < 0.4 * self.baseline_speed) {
            return Err(Error::InvalidParameter(format!(
                "min speed {} must be in (0, 0.4 x baseline {})",
                self.min_speed, self.baseline_speed
            )));
        }
        if self.baseline_speed > MAX_SPEED_MPH {
            return Err(Error::InvalidParameter(format!(
                "baseline {} above {MAX_SPEED_MPH}",
                self.baseline_speed
            )));
        }
        if self.descent < 1 || self.recovery < 1 {
            return Err(Error::InvalidParameter(
                "descent and recovery must be >= 1 minute".into(),
            ));
        }
        Ok(())
    }

    /// First minute at `min_speed`.
    pub fn transition(&self) -> Instant {
        self.sp_begin + Duration::minutes(i64::from(self.descent))
    }

    /// First minute back at baseline.
    pub fn rp_end(&self) -> Instant {
        self.sp_begin + Duration::minutes(i64::from(self.descent + self.trough + self.recovery))
    }

    /// Noise-free speed `j` minutes after `sp_begin`; `None` outside the
    /// profile.
    pub fn speed_at(&self, j: i64) -> Option<f64> {
        let (d, t, r) = (
            i64::from(self.descent),
            i64::from(self.trough),
            i64::from(self.recovery),
        );
        let (b, m) = (self.baseline_speed, self.min_speed);
        match j {
            _ if j < 0 || j > d + t + r => None,
            _ if j <= d => Some(b - (b - m) * j as f64 / d as f64),
            _ if j < d + t => Some(m),
            _ => Some(m + (b - m) * (j - d - t) as f64 / r as f64),
        }
    }
}

/// Identity and clock of one synthetic day.
#[derive(Debug, Clone, PartialEq)]
pub struct DaySpec {
    pub segment_id: String,
    pub date: NaiveDate,
    pub utc_offset: FixedOffset,
    pub baseline_speed: f64,
}

impl DaySpec {
    pub fn midnight(&self) -> Instant {
        self.date
            .and_time(NaiveTime::MIN)
            .and_local_timezone(self.utc_offset)
            .single()
            .expect("fixed offsets are unambiguous")
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn clamp_speed(v: f64) -> f64 {
    v.clamp(MIN_SYNTH_SPEED, MAX_SPEED_MPH)
}

/// A full 1440-minute reference day with independent Gaussian noise.
pub fn generate_reference_day(
    profiles: &[SlowdownProfile],
    day: &DaySpec,
    seed: u64,
    noise_sigma: f64,
) -> Result<SpeedSeries> {
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise sigma {noise_sigma}"
        )));
    }
    let mut sorted: Vec<&SlowdownProfile> = profiles.iter().collect();
    sorted.sort_by_key(|p| p.sp_begin);
    for p in &sorted {
        p.validate()?;
    }
    for w in sorted.windows(2) {
        if w[1].sp_begin <= w[0].rp_end() {
            return Err(Error::Overlap(w[1].sp_begin.to_string()));
        }
    }

    let midnight = day.midnight();
    let start = epoch_minute(&midnight);
    let mut values = vec![Some(day.baseline_speed); MINUTES_PER_DAY];
    for p in &sorted {
        let begin = epoch_minute(&p.sp_begin) - start;
        for (i, slot) in values.iter_mut().enumerate() {
            if let Some(v) = p.speed_at(i as i64 - begin) {
                *slot = Some(v);
            }
        }
    }
    if noise_sigma > 0.0 {
        let mut rng = rng(seed);
        for slot in values.iter_mut().flatten() {
            let z: f64 = rng.sample(StandardNormal);
            *slot = clamp_speed(*slot + noise_sigma * z);
        }
    }
    SpeedSeries::new(&day.segment_id, "reference", day.date, midnight, values)
}

/// How a probe feed is derived from the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDerivation {
    /// Delay applied before the transition, in minutes.
    pub sp_shift: u32,
    /// Delay applied after the transition.
    pub rp_shift: u32,
    pub noise_sigma: f64,
    /// Lag-one autocorrelation of the noise; 0 gives white noise.
    pub noise_ar1: f64,
    pub drop_prob: f64,
    pub seed: u64,
}

impl Default for ProbeDerivation {
    fn default() -> Self {
        Self {
            sp_shift: 0,
            rp_shift: 0,
            noise_sigma: 0.0,
            noise_ar1: 0.0,
            drop_prob: 0.0,
            seed: 0,
        }
    }
}

impl ProbeDerivation {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise sigma {}",
                self.noise_sigma
            )));
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return Err(Error::InvalidParameter(format!(
                "drop_prob {}",
                self.drop_prob
            )));
        }
        if !(-1.0 < self.noise_ar1 && self.noise_ar1 < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "noise_ar1 {}",
                self.noise_ar1
            )));
        }
        Ok(())
    }
}

/// Delay regime around one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftRegime {
    pub transition: Instant,
    pub sp_shift: u32,
    pub rp_shift: u32,
}

/// Delayed value at slot `i` under one regime. Between `transition + min`
/// and `transition + max` of the two shifts the delayed curves are blended
/// linearly.
fn delayed(values: &[Option<f64>], i: i64, transition: i64, sp: i64, rp: i64) -> Option<f64> {
    let at = |j: i64| {
        (0..values.len() as i64)
            .contains(&j)
            .then(|| values[j as usize])
            .flatten()
    };
    let (lo, hi) = (transition + sp.min(rp), transition + sp.max(rp));
    if i < lo {
        at(i - sp)
    } else if i >= hi {
        at(i - rp)
    } else {
        let w = (i - lo) as f64 / (hi - lo) as f64;
        Some((1.0 - w) * at(i - sp)? + w * at(i - rp)?)
    }
}

/// Probe feed for a day with one delay regime per slowdown.
///
/// Each minute follows the regime whose transition is nearest, with ties
/// going to the earlier one. Minutes that would read before the start of
/// the reference are missing.
pub fn derive_probe_regimes(
    reference: &SpeedSeries,
    regimes: &[ShiftRegime],
    d: &ProbeDerivation,
) -> Result<SpeedSeries> {
    d.validate()?;
    let start = reference.start_minute();
    let mut regimes: Vec<(i64, i64, i64)> = regimes
        .iter()
        .map(|r| {
            (
                epoch_minute(&r.transition) - start,
                i64::from(r.sp_shift),
                i64::from(r.rp_shift),
            )
        })
        .collect();
    regimes.sort();
    if regimes.is_empty() {
        regimes.push((0, 0, 0));
    }

    let src = reference.values();
    let mut values: Vec<Option<f64>> = (0..src.len() as i64)
        .map(|i| {
            let &(tr, sp, rp) = regimes
                .iter()
                .min_by_key(|(tr, _, _)| (i - tr).abs())
                .expect("at least one regime");
            delayed(src, i, tr, sp, rp)
        })
        .collect();

    let mut rng = rng(d.seed);
    if d.noise_sigma > 0.0 {
        let innovation = (1.0 - d.noise_ar1 * d.noise_ar1).sqrt();
        let mut e: f64 = rng.sample::<f64, _>(StandardNormal);
        for slot in values.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            e = d.noise_ar1 * e + innovation * z;
            if let Some(v) = slot {
                *v = clamp_speed(*v + d.noise_sigma * e);
            }
        }
    }
    if d.drop_prob > 0.0 {
        for slot in values.iter_mut() {
            if rng.random::<f64>() < d.drop_prob {
                *slot = None;
            }
        }
    }
    Ok(reference.with_values(values).with_source_id("probe"))
}

/// Probe feed delayed by `sp_shift` before `transition` and `rp_shift`
/// after it, plus noise and dropped minutes.
pub fn derive_probe(
    reference: &SpeedSeries,
    d: &ProbeDerivation,
    transition: &Instant,
) -> Result<SpeedSeries> {
    derive_probe_regimes(
        reference,
        &[ShiftRegime {
            transition: *transition,
            sp_shift: d.sp_shift,
            rp_shift: d.rp_shift,
        }],
        d,
    )
}

// ---- multi-day corpora ----------------------------------------------------

/// Planted latency of one vendor.
#[derive(Debug, Clone, PartialEq)]
pub struct VendorSpec {
    pub id: String,
    pub sp_latency: f64,
    pub rp_latency: f64,
    /// Per-episode spread of the planted shifts, before rounding to whole
    /// minutes. The same draw moves both sides.
    pub latency_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub seed: u64,
    pub start_date: NaiveDate,
    pub days: u32,
    pub utc_offset: FixedOffset,
    pub segments: Vec<Segment>,
    /// Local start times of the slowdowns planted on every day.
    pub episode_starts: Vec<NaiveTime>,
    pub baseline_speed: f64,
    pub min_speed: f64,
    pub descent: u32,
    pub trough: u32,
    pub recovery: u32,
    pub ref_noise_sigma: f64,
    pub probe_noise_sigma: f64,
    pub drop_prob: f64,
    /// Largest plantable shift; draws are clamped to `[0, max_shift]`.
    pub max_shift: u32,
    pub vendors: Vec<VendorSpec>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let seg = |id: &str, state: &str, road: &str, len: f64| Segment {
            segment_id: id.into(),
            state: state.into(),
            road: road.into(),
            length_mi: len,
            timezone: "America/New_York".into(),
        };
        Self {
            seed: 42,
            start_date: NaiveDate::from_ymd_opt(2015, 12, 3).expect("valid date"),
            days: 2,
            utc_offset: FixedOffset::west_opt(5 * 3600).expect("valid offset"),
            segments: vec![
                seg("SC-1", "SC", "I-85", 2.5),
                seg("SC-2", "SC", "I-26", 3.1),
                seg("NH-1", "NH", "I-93", 1.8),
                seg("NH-2", "NH", "I-89", 3.4),
                seg("NC-1", "NC", "I-240", 2.2),
                seg("NC-2", "NC", "I-40", 2.6),
            ],
            episode_starts: vec![
                NaiveTime::from_hms_opt(7, 30, 0).expect("valid time"),
                NaiveTime::from_hms_opt(16, 30, 0).expect("valid time"),
            ],
            baseline_speed: 65.0,
            min_speed: 20.0,
            descent: 40,
            trough: 10,
            recovery: 40,
            ref_noise_sigma: 0.0,
            probe_noise_sigma: 0.0,
            drop_prob: 0.0,
            max_shift: 20,
            vendors: vec![
                VendorSpec {
                    id: "vendor1".into(),
                    sp_latency: 3.0,
                    rp_latency: 3.0,
                    latency_sigma: 0.5,
                },
                VendorSpec {
                    id: "vendor2".into(),
                    sp_latency: 5.0,
                    rp_latency: 5.0,
                    latency_sigma: 0.5,
                },
                VendorSpec {
                    id: "vendor3".into(),
                    sp_latency: 7.0,
                    rp_latency: 7.0,
                    latency_sigma: 0.5,
                },
            ],
        }
    }
}

/// Ground truth for one (episode, vendor).
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedEpisode {
    pub segment_id: String,
    pub date: NaiveDate,
    pub sp_start: Instant,
    pub transition: Instant,
    pub rp_end: Instant,
    pub vendor_id: String,
    pub sp_shift: u32,
    pub rp_shift: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub segments: SegmentTable,
    /// One series per (segment, day), sorted.
    pub reference: Vec<SpeedSeries>,
    /// One series per (segment, vendor, day), sorted.
    pub probes: Vec<SpeedSeries>,
    pub planted: Vec<PlantedEpisode>,
}

fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    parts.iter().fold(seed, |acc, &p| {
        let mut z = acc ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    })
}

pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    if cfg.vendors.is_empty() || cfg.segments.is_empty() {
        return Err(Error::InvalidParameter(
            "corpus needs segments and vendors".into(),
        ));
    }
    let mut segments = SegmentTable::new();
    for s in &cfg.segments {
        if segments.insert(s.segment_id.clone(), s.clone()).is_some() {
            return Err(Error::InvalidParameter(format!(
                "duplicate segment {}",
                s.segment_id
            )));
        }
    }
    let mut reference = Vec::new();
    let mut probes = Vec::new();
    let mut planted = Vec::new();

    for (si, seg) in segments.values().enumerate() {
        for d in 0..cfg.days {
            let date = cfg.start_date + Duration::days(i64::from(d));
            let day = DaySpec {
                segment_id: seg.segment_id.clone(),
                date,
                utc_offset: cfg.utc_offset,
                baseline_speed: cfg.baseline_speed,
            };
            let profiles: Vec<SlowdownProfile> = cfg
                .episode_starts
                .iter()
                .map(|t| SlowdownProfile {
                    baseline_speed: cfg.baseline_speed,
                    min_speed: cfg.min_speed,
                    sp_begin: day.midnight() + (*t - NaiveTime::MIN),
                    descent: cfg.descent,
                    trough: cfg.trough,
                    recovery: cfg.recovery,
                })
                .collect();
            let day_seed = mix_seed(cfg.seed, &[si as u64, u64::from(d)]);
            let ref_day = generate_reference_day(&profiles, &day, day_seed, cfg.ref_noise_sigma)?;

            for (vi, vendor) in cfg.vendors.iter().enumerate() {
                let mut shift_rng = rng(mix_seed(day_seed, &[vi as u64, 1]));
                let regimes: Vec<ShiftRegime> = profiles
                    .iter()
                    .map(|p| {
                        let z: f64 = shift_rng.sample(StandardNormal);
                        let draw = |mean: f64| {
                            (mean + vendor.latency_sigma * z)
                                .round()
                                .clamp(0.0, f64::from(cfg.max_shift))
                                as u32
                        };
                        ShiftRegime {
                            transition: p.transition(),
                            sp_shift: draw(vendor.sp_latency),
                            rp_shift: draw(vendor.rp_latency),
                        }
                    })
                    .collect();
                let derivation = ProbeDerivation {
                    noise_sigma: cfg.probe_noise_sigma,
                    drop_prob: cfg.drop_prob,
                    seed: mix_seed(day_seed, &[vi as u64, 2]),
                    ..Default::default()
                };
                let probe = derive_probe_regimes(&ref_day, &regimes, &derivation)?
                    .with_source_id(vendor.id.clone());
                for (p, r) in profiles.iter().zip(&regimes) {
                    planted.push(PlantedEpisode {
                        segment_id: seg.segment_id.clone(),
                        date,
                        sp_start: p.sp_begin,
                        transition: p.transition(),
                        rp_end: p.rp_end(),
                        vendor_id: vendor.id.clone(),
                        sp_shift: r.sp_shift,
                        rp_shift: r.rp_shift,
                    });
                }
                probes.push(probe);
            }
            reference.push(ref_day);
        }
    }
    probes.sort_by(|a, b| {
        (a.segment_id(), a.source_id(), a.date()).cmp(&(b.segment_id(), b.source_id(), b.date()))
    });
    Ok(Corpus {
        segments,
        reference,
        probes,
        planted,
    })
}

pub const PLANTED_HEADER: [&str; 8] = [
    "segment_id",
    "date",
    "vendor_id",
    "sp_start",
    "transition",
    "rp_end",
    "sp_shift",
    "rp_shift",
];

pub fn write_planted_csv(planted: &[PlantedEpisode]) -> String {
    to_csv(
        PLANTED_HEADER,
        planted.iter().map(|p| {
            [
                p.segment_id.clone(),
                p.date.to_string(),
                p.vendor_id.clone(),
                format_instant(&p.sp_start),
                format_instant(&p.transition),
                format_instant(&p.rp_end),
                p.sp_shift.to_string(),
                p.rp_shift.to_string(),
            ]
        }),
    )
}

/// One travel-time sample per present reference minute, timed so that its
/// midpoint falls at the middle of that minute.
pub fn reference_travel_times(
    reference: &[SpeedSeries],
    segments: &SegmentTable,
) -> Result<Vec<TravelTimeSample>> {
    let mut out = Vec::new();
    for series in reference {
        let seg = segments
            .get(series.segment_id())
            .ok_or_else(|| Error::UnknownSegment(series.segment_id().to_string()))?;
        for (i, v) in series.values().iter().enumerate() {
            let Some(speed) = v else { continue };
            let duration_s = seg.length_mi / speed * 3600.0;
            let half = Duration::microseconds((duration_s * 0.5e6).round() as i64);
            out.push(TravelTimeSample {
                segment_id: seg.segment_id.clone(),
                start_time: series.timestamp(i) + Duration::seconds(30) - half,
                duration_s,
            });
        }
    }
    Ok(out)
}

/// Upstream and downstream sensor ids used for synthetic detections.
pub fn sensor_ids(segment_id: &str) -> (String, String) {
    (format!("{segment_id}-up"), format!("{segment_id}-down"))
}

/// Turns travel-time samples into one device passing both sensors.
pub fn travel_times_to_detections(samples: &[TravelTimeSample]) -> Vec<Detection> {
    let mut out = Vec::with_capacity(samples.len() * 2);
    for (n, s) in samples.iter().enumerate() {
        let (up, down) = sensor_ids(&s.segment_id);
        let device_id = format!("{:016x}", mix_seed(0x5eed, &[n as u64]));
        let duration = Duration::microseconds((s.duration_s * 1e6).round() as i64);
        out.push(Detection {
            sensor_id: up,
            device_id: device_id.clone(),
            timestamp: s.start_time,
        });
        out.push(Detection {
            sensor_id: down,
            device_id,
            timestamp: s.start_time + duration,
        });
    }
    out
}
