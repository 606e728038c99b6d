//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Relative paths are
//! resolved against the directory of the file they appear in. Unknown keys
//! are rejected so typos fail loudly.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{NaiveDate, NaiveTime};
use probelag_core::latency::DEFAULT_MIN_OVERLAP_FRAC;
use probelag_core::synth::VendorSpec;
use probelag_core::{EpisodeParams, ShiftBounds};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSettings {
    pub days: u32,
    pub start_date: NaiveDate,
    pub timezone: String,
    pub episode_starts: Vec<NaiveTime>,
    pub baseline_speed: f64,
    pub min_speed: f64,
    pub descent: u32,
    pub trough: u32,
    pub recovery: u32,
    pub ref_noise: f64,
    pub probe_noise: f64,
    pub drop_prob: f64,
    pub max_shift: u32,
    pub vendors: Vec<VendorSpec>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let c = probelag_core::synth::CorpusConfig::default();
        Self {
            days: c.days,
            start_date: c.start_date,
            timezone: "America/New_York".into(),
            episode_starts: c.episode_starts,
            baseline_speed: c.baseline_speed,
            min_speed: c.min_speed,
            descent: c.descent,
            trough: c.trough,
            recovery: c.recovery,
            ref_noise: c.ref_noise_sigma,
            probe_noise: c.probe_noise_sigma,
            drop_prob: c.drop_prob,
            max_shift: c.max_shift,
            vendors: c.vendors,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub segments: Option<PathBuf>,
    pub reference_speeds: Option<PathBuf>,
    pub reference_travel_times: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub sensor_map: Option<PathBuf>,
    pub probes: Vec<PathBuf>,
    /// Vendors to measure; empty means every vendor found in the probe feeds.
    pub vendors: Vec<String>,
    pub episodes_csv: Option<PathBuf>,
    pub latency_csv: Option<PathBuf>,
    pub out_dir: PathBuf,

    pub episode: EpisodeParams,
    pub bounds: ShiftBounds,
    pub min_overlap_frac: f64,
    /// Centered moving-average width; 1 disables smoothing.
    pub smooth_window: usize,
    pub smooth_reference: bool,
    pub smooth_probe: bool,
    pub detect_on_smoothed: bool,
    pub outlier_filter: bool,
    pub outlier_window: u32,
    pub outlier_k: f64,
    /// Longest accepted travel time, as a multiple of the free-flow time.
    pub max_tt_factor: f64,
    pub free_flow_speed_mph: f64,

    pub seed: u64,
    pub synth: SynthSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            segments: None,
            reference_speeds: None,
            reference_travel_times: None,
            detections: None,
            sensor_map: None,
            probes: Vec::new(),
            vendors: Vec::new(),
            episodes_csv: None,
            latency_csv: None,
            out_dir: PathBuf::from("out"),
            episode: EpisodeParams::default(),
            bounds: ShiftBounds::default(),
            min_overlap_frac: DEFAULT_MIN_OVERLAP_FRAC,
            smooth_window: 5,
            smooth_reference: true,
            smooth_probe: true,
            detect_on_smoothed: true,
            outlier_filter: true,
            outlier_window: 15,
            outlier_k: 3.0,
            max_tt_factor: 4.0,
            free_flow_speed_mph: 65.0,
            seed: 42,
            synth: SynthSettings::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Config(format!(
            "`{key}`: expected true or false, got `{value}`"
        ))),
    }
}

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn path(base: &Path, value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| base.join(value))
}

fn parse_vendor(key: &str, item: &str) -> CliResult<VendorSpec> {
    let parts: Vec<&str> = item.split(':').collect();
    let [id, sp, rp, sigma] = parts[..] else {
        return Err(CliError::Config(format!(
            "`{key}`: vendor `{item}` must be ID:SP_LATENCY:RP_LATENCY:SIGMA"
        )));
    };
    Ok(VendorSpec {
        id: id.to_string(),
        sp_latency: parse(key, sp)?,
        rp_latency: parse(key, rp)?,
        latency_sigma: parse(key, sigma)?,
    })
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one setting. Relative paths are resolved against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> CliResult<()> {
        let v = value.trim();
        let s = &mut self.synth;
        match key {
            "segments" => self.segments = path(base, v),
            "reference_speeds" => self.reference_speeds = path(base, v),
            "reference_travel_times" => self.reference_travel_times = path(base, v),
            "detections" => self.detections = path(base, v),
            "sensor_map" => self.sensor_map = path(base, v),
            "probes" => self.probes = list(v).map(|p| base.join(p)).collect(),
            "vendors" => self.vendors = list(v).map(String::from).collect(),
            "episodes_csv" => self.episodes_csv = path(base, v),
            "latency_csv" => self.latency_csv = path(base, v),
            "out_dir" => self.out_dir = base.join(v),
            "ffs_percentile" => self.episode.ffs_percentile = parse(key, v)?,
            "mst_fraction" => self.episode.mst_fraction = parse(key, v)?,
            "max_patch_gap" => self.episode.max_patch_gap = parse(key, v)?,
            "merge_gap" => self.episode.merge_gap = parse(key, v)?,
            "min_duration" => self.episode.min_duration = parse(key, v)?,
            "bounds" => self.bounds = parse(key, v)?,
            "min_overlap_frac" => self.min_overlap_frac = parse(key, v)?,
            "smooth_window" => self.smooth_window = parse(key, v)?,
            "smooth_reference" => self.smooth_reference = parse_bool(key, v)?,
            "smooth_probe" => self.smooth_probe = parse_bool(key, v)?,
            "detect_on_smoothed" => self.detect_on_smoothed = parse_bool(key, v)?,
            "outlier_filter" => self.outlier_filter = parse_bool(key, v)?,
            "outlier_window" => self.outlier_window = parse(key, v)?,
            "outlier_k" => self.outlier_k = parse(key, v)?,
            "max_tt_factor" => self.max_tt_factor = parse(key, v)?,
            "free_flow_speed_mph" => self.free_flow_speed_mph = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "synth_days" => s.days = parse(key, v)?,
            "synth_start_date" => s.start_date = parse(key, v)?,
            "synth_timezone" => s.timezone = v.to_string(),
            "synth_episode_starts" => {
                s.episode_starts = list(v).map(|t| parse(key, t)).collect::<CliResult<_>>()?
            }
            "synth_baseline_speed" => s.baseline_speed = parse(key, v)?,
            "synth_min_speed" => s.min_speed = parse(key, v)?,
            "synth_descent" => s.descent = parse(key, v)?,
            "synth_trough" => s.trough = parse(key, v)?,
            "synth_recovery" => s.recovery = parse(key, v)?,
            "synth_ref_noise" => s.ref_noise = parse(key, v)?,
            "synth_probe_noise" => s.probe_noise = parse(key, v)?,
            "synth_drop_prob" => s.drop_prob = parse(key, v)?,
            "synth_max_shift" => s.max_shift = parse(key, v)?,
            "synth_vendors" => {
                s.vendors = list(v)
                    .map(|item| parse_vendor(key, item))
                    .collect::<CliResult<_>>()?
            }
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses config text on top of the current values.
    pub fn apply_text(&mut self, text: &str, base: &Path) -> CliResult<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected `key = value`", n + 1))
            })?;
            self.set(key.trim(), value, base)
                .map_err(|e| CliError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut cfg = Self::default();
        cfg.apply_text(&text, base)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        self.episode
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.bounds
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.min_overlap_frac > 0.0 && self.min_overlap_frac <= 1.0) {
            return bad(format!(
                "min_overlap_frac {} not in (0, 1]",
                self.min_overlap_frac
            ));
        }
        if self.smooth_window == 0 || self.smooth_window.is_multiple_of(2) {
            return bad(format!(
                "smooth_window {} must be odd and positive",
                self.smooth_window
            ));
        }
        if self.outlier_window < 5 || !(self.outlier_k > 0.0) {
            return bad("outlier_window must be >= 5 and outlier_k > 0".into());
        }
        if !(self.max_tt_factor > 0.0 && self.free_flow_speed_mph > 0.0) {
            return bad("max_tt_factor and free_flow_speed_mph must be positive".into());
        }
        Ok(())
    }

    /// Every setting except `out_dir`, in a fixed order. Feeding the result
    /// back through [`RunConfig::apply_text`] reproduces this configuration.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synth;
        let e = &self.episode;
        vec![
            ("segments", show_path(&self.segments)),
            ("reference_speeds", show_path(&self.reference_speeds)),
            (
                "reference_travel_times",
                show_path(&self.reference_travel_times),
            ),
            ("detections", show_path(&self.detections)),
            ("sensor_map", show_path(&self.sensor_map)),
            ("probes", join(&self.probes, |p| p.display().to_string())),
            ("vendors", self.vendors.join(",")),
            ("episodes_csv", show_path(&self.episodes_csv)),
            ("latency_csv", show_path(&self.latency_csv)),
            ("ffs_percentile", e.ffs_percentile.to_string()),
            ("mst_fraction", e.mst_fraction.to_string()),
            ("max_patch_gap", e.max_patch_gap.to_string()),
            ("merge_gap", e.merge_gap.to_string()),
            ("min_duration", e.min_duration.to_string()),
            ("bounds", self.bounds.to_string()),
            ("min_overlap_frac", self.min_overlap_frac.to_string()),
            ("smooth_window", self.smooth_window.to_string()),
            ("smooth_reference", self.smooth_reference.to_string()),
            ("smooth_probe", self.smooth_probe.to_string()),
            ("detect_on_smoothed", self.detect_on_smoothed.to_string()),
            ("outlier_filter", self.outlier_filter.to_string()),
            ("outlier_window", self.outlier_window.to_string()),
            ("outlier_k", self.outlier_k.to_string()),
            ("max_tt_factor", self.max_tt_factor.to_string()),
            ("free_flow_speed_mph", self.free_flow_speed_mph.to_string()),
            ("seed", self.seed.to_string()),
            ("synth_days", s.days.to_string()),
            ("synth_start_date", s.start_date.to_string()),
            ("synth_timezone", s.timezone.clone()),
            (
                "synth_episode_starts",
                join(&s.episode_starts, |t| t.format("%H:%M:%S").to_string()),
            ),
            ("synth_baseline_speed", s.baseline_speed.to_string()),
            ("synth_min_speed", s.min_speed.to_string()),
            ("synth_descent", s.descent.to_string()),
            ("synth_trough", s.trough.to_string()),
            ("synth_recovery", s.recovery.to_string()),
            ("synth_ref_noise", s.ref_noise.to_string()),
            ("synth_probe_noise", s.probe_noise.to_string()),
            ("synth_drop_prob", s.drop_prob.to_string()),
            ("synth_max_shift", s.max_shift.to_string()),
            (
                "synth_vendors",
                join(&s.vendors, |v| {
                    format!(
                        "{}:{}:{}:{}",
                        v.id, v.sp_latency, v.rp_latency, v.latency_sigma
                    )
                }),
            ),
        ]
    }

    pub fn manifest(&self) -> String {
        let mut out = String::from("# resolved run parameters\n");
        for (k, v) in self.entries() {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn episodes_path(&self) -> PathBuf {
        self.episodes_csv
            .clone()
            .unwrap_or_else(|| self.out_dir.join("episodes.csv"))
    }

    pub fn latency_path(&self) -> PathBuf {
        self.latency_csv
            .clone()
            .unwrap_or_else(|| self.out_dir.join("latency.csv"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "# comment\nsegments = seg.csv\nprobes = a.csv, b.csv\nbounds = -3:12\n\
             smooth_window = 7\nsynth_vendors = v1:2:4:0.25\nsynth_episode_starts = 08:00\n",
            Path::new("/data"),
        )
        .unwrap();
        assert_eq!(cfg.segments, Some(PathBuf::from("/data/seg.csv")));
        assert_eq!(cfg.probes.len(), 2);
        assert_eq!(cfg.bounds, ShiftBounds::new(-3, 12).unwrap());

        let mut again = RunConfig::default();
        again
            .apply_text(&cfg.manifest(), Path::new("/elsewhere"))
            .unwrap();
        again.out_dir = cfg.out_dir.clone();
        assert_eq!(again, cfg);
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let mut again = RunConfig::default();
        again.apply_text(&cfg.manifest(), Path::new("")).unwrap();
        assert_eq!(again, cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_text("nonsense", Path::new("")).is_err());
        assert!(cfg.apply_text("colour = red", Path::new("")).is_err());
        assert!(cfg
            .apply_text("smooth_window = five", Path::new(""))
            .is_err());
        assert!(cfg
            .apply_text("synth_vendors = v1:2", Path::new(""))
            .is_err());
        cfg.apply_text("smooth_window = 4", Path::new("")).unwrap();
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    }
}
