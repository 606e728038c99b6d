//! Reporting-latency measurement for GPS-probe traffic speed feeds.
//!
//! A probe feed is compared against reference speeds derived from
//! Bluetooth/Wi-Fi re-identification travel times. Slowdown-and-recovery
//! episodes are detected in the reference curve, and for every episode the
//! integer minute shift that best aligns the probe curve to the reference is
//! searched under three fitness functions (absolute, squared, correlation).
//!
//! Module map:
//!
//! - [`timeseries`]: minute-gridded [`SpeedSeries`] and its primitives
//! - [`ingest`]: CSV schemas, detection matching, travel time to speed
//! - [`episodes`]: slowdown-and-recovery episode detection
//! - [`latency`]: shift search and [`LatencyResult`]
//! - [`stats`]: aggregation, Welch t-test, distributions
//! - [`synth`]: synthetic feeds with planted latency

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod episodes;
pub mod error;
pub mod ingest;
pub mod latency;
pub mod stats;
pub mod synth;
pub mod timeseries;

pub use episodes::{detect_episodes, Episode, EpisodeFlags, EpisodeParams};
pub use error::{Error, Result};
pub use ingest::{Detection, Segment, SegmentTable, SensorPair, TravelTimeSample};
pub use latency::{measure_latency, LatencyFlags, LatencyResult, Period, ShiftBounds};
pub use timeseries::{SpeedSample, SpeedSeries};

/// Local timestamp with its UTC offset. All instants in this crate carry one.
pub type Instant = chrono::DateTime<chrono::FixedOffset>;
