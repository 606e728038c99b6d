//! Aggregation of latency results into summary tables and distributions.

pub mod tdist;

use std::collections::BTreeMap;

use chrono::Timelike;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::SegmentTable;
use crate::latency::{pearson, LatencyResult, Period, ShiftBounds};
use crate::timeseries::percentile_sorted;

/// Which dimensions to group on. Dimensions left out are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupBy {
    pub state: bool,
    pub vendor: bool,
    pub period: bool,
}

impl GroupBy {
    pub const STATE_VENDOR_PERIOD: GroupBy = GroupBy {
        state: true,
        vendor: true,
        period: true,
    };
    pub const STATE_VENDOR: GroupBy = GroupBy {
        state: true,
        vendor: true,
        period: false,
    };
    pub const VENDOR_PERIOD: GroupBy = GroupBy {
        state: false,
        vendor: true,
        period: true,
    };
    pub const VENDOR: GroupBy = GroupBy {
        state: false,
        vendor: true,
        period: false,
    };
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct GroupKey {
    pub state: Option<String>,
    pub vendor: Option<String>,
    pub period: Option<Period>,
}

impl GroupKey {
    fn of(r: &LatencyResult, by: GroupBy, segments: &SegmentTable) -> Result<Self> {
        let state = if by.state {
            let seg = segments
                .get(&r.segment_id)
                .ok_or_else(|| Error::UnknownSegment(r.segment_id.clone()))?;
            Some(seg.state.clone())
        } else {
            None
        };
        Ok(Self {
            state,
            vendor: by.vendor.then(|| r.vendor_id.clone()),
            period: by.period.then_some(r.period),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateCell {
    #[serde(flatten)]
    pub key: GroupKey,
    pub mean_avd: f64,
    pub mean_svd: f64,
    /// `None` when no result in the group has a defined correlation shift.
    pub mean_cor: Option<f64>,
    pub mean_of_means: f64,
    pub n: usize,
    /// Sample standard deviation of `mean_latency`; 0 for a single result.
    pub std: f64,
}

/// Order-independent mean: values are summed in sorted order.
fn mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_variance(values: &[f64], mean: f64) -> f64 {
    let mut sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    sq.sort_by(f64::total_cmp);
    sq.iter().sum::<f64>() / (values.len() - 1) as f64
}

/// Per-group means of each fitness function's shift and of the mean latency.
pub fn aggregate(
    results: &[LatencyResult],
    by: GroupBy,
    segments: &SegmentTable,
) -> Result<Vec<AggregateCell>> {
    if results.is_empty() {
        return Err(Error::EmptyInput("no latency results to aggregate".into()));
    }
    let mut groups: BTreeMap<GroupKey, Vec<&LatencyResult>> = BTreeMap::new();
    for r in results {
        groups
            .entry(GroupKey::of(r, by, segments)?)
            .or_default()
            .push(r);
    }
    Ok(groups
        .into_iter()
        .map(|(key, rs)| {
            let col = |f: &dyn Fn(&LatencyResult) -> Option<f64>| -> Vec<f64> {
                rs.iter().filter_map(|r| f(r)).collect()
            };
            let mut avd = col(&|r| Some(f64::from(r.shift_avd)));
            let mut svd = col(&|r| Some(f64::from(r.shift_svd)));
            let mut cor = col(&|r| r.shift_cor.map(f64::from));
            let mut means = col(&|r| Some(r.mean_latency));
            let mean_of_means = mean(&mut means);
            let std = if means.len() > 1 {
                sample_variance(&means, mean_of_means).sqrt()
            } else {
                0.0
            };
            AggregateCell {
                key,
                mean_avd: mean(&mut avd),
                mean_svd: mean(&mut svd),
                mean_cor: (!cor.is_empty()).then(|| mean(&mut cor)),
                mean_of_means,
                n: rs.len(),
                std,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShareCell {
    #[serde(flatten)]
    pub key: GroupKey,
    /// Episodes whose slowdown latency strictly exceeds recovery latency.
    pub sp_greater: usize,
    /// Episodes with both an SP and an RP result.
    pub episodes: usize,
    pub share: f64,
}

/// Fraction of episodes with SP latency strictly greater than RP latency.
///
/// `by.period` is ignored. Episodes lacking either row are left out.
pub fn sp_gt_rp_share(
    results: &[LatencyResult],
    by: GroupBy,
    segments: &SegmentTable,
) -> Result<Vec<ShareCell>> {
    let by = GroupBy {
        period: false,
        ..by
    };
    type EpisodeKey<'a> = (&'a str, &'a str, chrono::NaiveDate, crate::Instant);
    let mut pairs: BTreeMap<EpisodeKey<'_>, (Option<f64>, Option<f64>, GroupKey)> = BTreeMap::new();
    for r in results {
        let slot = match r.period {
            Period::Sp => 0,
            Period::Rp => 1,
            Period::Sre => continue,
        };
        let key = (
            r.segment_id.as_str(),
            r.vendor_id.as_str(),
            r.date,
            r.episode_start,
        );
        let entry = match pairs.entry(key) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert((None, None, GroupKey::of(r, by, segments)?))
            }
        };
        if slot == 0 {
            entry.0 = Some(r.mean_latency);
        } else {
            entry.1 = Some(r.mean_latency);
        }
    }
    let mut cells: BTreeMap<GroupKey, (usize, usize)> = BTreeMap::new();
    for (sp, rp, group) in pairs.into_values() {
        if let (Some(sp), Some(rp)) = (sp, rp) {
            let c = cells.entry(group).or_default();
            c.1 += 1;
            if sp > rp {
                c.0 += 1;
            }
        }
    }
    Ok(cells
        .into_iter()
        .map(|(key, (sp_greater, episodes))| ShareCell {
            key,
            sp_greater,
            episodes,
            share: sp_greater as f64 / episodes as f64,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestResult {
    pub t_stat: f64,
    pub df: f64,
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
}

fn moments(xs: &[f64], name: &str) -> Result<(f64, f64)> {
    if xs.len() < 2 {
        return Err(Error::DegenerateSample(format!(
            "sample {name} has {} values, need 2",
            xs.len()
        )));
    }
    let mut sorted = xs.to_vec();
    let m = mean(&mut sorted);
    let v = sample_variance(&sorted, m);
    if v == 0.0 {
        return Err(Error::DegenerateSample(format!(
            "sample {name} has zero variance"
        )));
    }
    Ok((m, v))
}

/// Welch's unequal-variance two-sample t-test, two-sided.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    let (ma, va) = moments(a, "a")?;
    let (mb, vb) = moments(b, "b")?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    let t_stat = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(TestResult {
        t_stat,
        df,
        p_value: tdist::two_sided_p(t_stat, df),
        n_a: a.len(),
        n_b: b.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VendorPairTest {
    pub vendor_a: String,
    pub vendor_b: String,
    pub test: Option<TestResult>,
    /// Error code when the test could not be run.
    pub skipped: Option<&'static str>,
}

/// Welch tests between every vendor pair, pooling all rows of `period`
/// across states. Pairs are ordered `a < b` by vendor id.
pub fn pairwise_vendor_tests(results: &[LatencyResult], period: Period) -> Vec<VendorPairTest> {
    let mut by_vendor: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in results.iter().filter(|r| r.period == period) {
        by_vendor
            .entry(&r.vendor_id)
            .or_default()
            .push(r.mean_latency);
    }
    let vendors: Vec<_> = by_vendor.keys().copied().collect();
    let mut out = Vec::new();
    for (i, a) in vendors.iter().enumerate() {
        for b in &vendors[i + 1..] {
            let res = welch_t_test(&by_vendor[a], &by_vendor[b]);
            out.push(VendorPairTest {
                vendor_a: a.to_string(),
                vendor_b: b.to_string(),
                skipped: res.as_ref().err().map(Error::code),
                test: res.ok(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    /// Bin covers `[center - 0.5, center + 0.5)`.
    pub center: i32,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionSummary {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Values below the first bin.
    pub underflow: usize,
    pub bins: Vec<HistogramBin>,
    /// Values at or above the end of the last bin.
    pub overflow: usize,
}

/// Five-number summary plus a 1-minute histogram with one bin per integer
/// shift in `bounds`.
pub fn distribution_summary(values: &[f64], bounds: &ShiftBounds) -> Result<DistributionSummary> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no values to summarize".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut bins: Vec<HistogramBin> = (bounds.k_min..=bounds.k_max)
        .map(|center| HistogramBin { center, count: 0 })
        .collect();
    let (mut underflow, mut overflow) = (0, 0);
    let lo = f64::from(bounds.k_min) - 0.5;
    for &v in &sorted {
        let idx = (v - lo).floor();
        if idx < 0.0 {
            underflow += 1;
        } else if idx >= bins.len() as f64 {
            overflow += 1;
        } else {
            bins[idx as usize].count += 1;
        }
    }
    Ok(DistributionSummary {
        n: sorted.len(),
        min: sorted[0],
        q1: percentile_sorted(&sorted, 25.0),
        median: percentile_sorted(&sorted, 50.0),
        q3: percentile_sorted(&sorted, 75.0),
        max: sorted[sorted.len() - 1],
        underflow,
        bins,
        overflow,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmPmCell {
    pub vendor: String,
    pub period: Period,
    pub am: Option<DistributionSummary>,
    pub pm: Option<DistributionSummary>,
}

/// Local clock hour before noon at episode start counts as AM.
pub fn is_am(r: &LatencyResult) -> bool {
    r.episode_start.hour() < 12
}

/// Morning and afternoon latencies of one (vendor, period).
type Halves = (Vec<f64>, Vec<f64>);

/// Latency distributions split by morning vs afternoon episode start, per
/// (vendor, period).
pub fn am_pm_split(results: &[LatencyResult], bounds: &ShiftBounds) -> Vec<AmPmCell> {
    let mut groups: BTreeMap<(&str, Period), Halves> = BTreeMap::new();
    for r in results {
        let g = groups.entry((&r.vendor_id, r.period)).or_default();
        if is_am(r) {
            g.0.push(r.mean_latency);
        } else {
            g.1.push(r.mean_latency);
        }
    }
    groups
        .into_iter()
        .map(|((vendor, period), (am, pm))| AmPmCell {
            vendor: vendor.to_string(),
            period,
            am: distribution_summary(&am, bounds).ok(),
            pm: distribution_summary(&pm, bounds).ok(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LengthCorrelation {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Pearson correlation between segment length and mean latency, with a
/// two-sided t-test of zero correlation.
pub fn length_correlation(
    results: &[LatencyResult],
    segments: &SegmentTable,
) -> Result<LengthCorrelation> {
    let pairs = results
        .iter()
        .map(|r| {
            segments
                .get(&r.segment_id)
                .map(|s| (s.length_mi, r.mean_latency))
                .ok_or_else(|| Error::UnknownSegment(r.segment_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    if pairs.len() < 3 {
        return Err(Error::DegenerateSample(format!(
            "{} results, need 3 for a length correlation",
            pairs.len()
        )));
    }
    let r = pearson(&pairs)
        .ok_or_else(|| Error::DegenerateSample("length or latency has zero variance".into()))?;
    let n = pairs.len();
    let df = (n - 2) as f64;
    let p_value = if r.abs() >= 1.0 {
        0.0
    } else {
        tdist::two_sided_p(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    Ok(LengthCorrelation { r, p_value, n })
}
