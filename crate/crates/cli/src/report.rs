//! Summary tables and distributions from latency results.

use std::path::Path;

use probelag_core::latency::parse_latency_csv;
use probelag_core::stats::{
    aggregate, am_pm_split, distribution_summary, length_correlation, pairwise_vendor_tests,
    sp_gt_rp_share, AggregateCell, AmPmCell, DistributionSummary, GroupBy, LengthCorrelation,
    ShareCell, VendorPairTest,
};
use probelag_core::{Error, LatencyResult, Period, SegmentTable};
use serde::Serialize;

use crate::commands::write;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::inputs::{self, load_segments};
use crate::table::{opt, Table};

/// Significance level of the vendor comparisons.
pub const ALPHA: f64 = 0.01;

#[derive(Debug, Clone, Serialize)]
pub struct VendorDistribution {
    pub vendor: String,
    pub period: Period,
    pub summary: DistributionSummary,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Correlation {
    Computed(LengthCorrelation),
    Skipped { skipped: &'static str },
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub results: usize,
    /// Per (state, vendor, period).
    pub latency_by_state: Vec<AggregateCell>,
    /// Per (vendor, period), pooled over states.
    pub latency_by_vendor: Vec<AggregateCell>,
    /// Per (state, vendor).
    pub sp_gt_rp_by_state: Vec<ShareCell>,
    /// Per vendor, pooled over states.
    pub sp_gt_rp_total: Vec<ShareCell>,
    /// Pairwise Welch tests on whole-episode latency.
    pub vendor_tests: Vec<VendorPairTest>,
    pub distributions: Vec<VendorDistribution>,
    pub am_pm: Vec<AmPmCell>,
    pub length_correlation: Correlation,
}

fn label(v: &Option<String>) -> String {
    v.clone().unwrap_or_default()
}

fn table3(cells: &[AggregateCell]) -> String {
    let mut t = Table::new(&[
        "state", "vendor", "period", "avd", "sqr", "cor", "mean", "std", "n",
    ]);
    for c in cells {
        t.row([
            label(&c.key.state),
            label(&c.key.vendor),
            c.key.period.map(|p| p.to_string()).unwrap_or_default(),
            c.mean_avd.to_string(),
            c.mean_svd.to_string(),
            opt(c.mean_cor),
            c.mean_of_means.to_string(),
            c.std.to_string(),
            c.n.to_string(),
        ]);
    }
    t.finish()
}

fn table4(by_state: &[ShareCell], total: &[ShareCell]) -> String {
    let mut t = Table::new(&["state", "vendor", "sp_greater", "episodes", "share"]);
    for c in by_state.iter().chain(total) {
        t.row([
            c.key.state.clone().unwrap_or_else(|| "Total".into()),
            label(&c.key.vendor),
            c.sp_greater.to_string(),
            c.episodes.to_string(),
            c.share.to_string(),
        ]);
    }
    t.finish()
}

fn table5(tests: &[VendorPairTest]) -> String {
    let mut t = Table::new(&[
        "vendor_a",
        "vendor_b",
        "t_stat",
        "df",
        "p_value",
        "n_a",
        "n_b",
        "significant",
        "skipped",
    ]);
    for p in tests {
        let test = p.test.as_ref();
        t.row([
            p.vendor_a.clone(),
            p.vendor_b.clone(),
            opt(test.map(|x| x.t_stat)),
            opt(test.map(|x| x.df)),
            opt(test.map(|x| x.p_value)),
            test.map(|x| x.n_a.to_string()).unwrap_or_default(),
            test.map(|x| x.n_b.to_string()).unwrap_or_default(),
            test.map(|x| (x.p_value < ALPHA).to_string())
                .unwrap_or_default(),
            p.skipped.unwrap_or_default().to_string(),
        ]);
    }
    t.finish()
}

/// Square layout: t statistics above the diagonal, p-values below.
fn table5_matrix(tests: &[VendorPairTest]) -> String {
    let mut vendors: Vec<&str> = tests
        .iter()
        .flat_map(|p| [p.vendor_a.as_str(), p.vendor_b.as_str()])
        .collect();
    vendors.sort_unstable();
    vendors.dedup();
    let mut header = vec!["p \\ t"];
    header.extend(&vendors);
    let mut t = Table::new(&header);
    for (i, row) in vendors.iter().enumerate() {
        let mut cells = vec![row.to_string()];
        for (j, col) in vendors.iter().enumerate() {
            let (a, b) = if i < j { (row, col) } else { (col, row) };
            let test = tests
                .iter()
                .find(|p| p.vendor_a == *a && p.vendor_b == *b)
                .and_then(|p| p.test.as_ref());
            cells.push(match (i.cmp(&j), test) {
                (std::cmp::Ordering::Less, Some(x)) => x.t_stat.to_string(),
                (std::cmp::Ordering::Greater, Some(x)) => x.p_value.to_string(),
                _ => String::new(),
            });
        }
        t.row(cells);
    }
    t.finish()
}

fn five_numbers(t: &mut Table, prefix: &[String], s: &DistributionSummary) {
    let mut row = prefix.to_vec();
    row.extend([
        s.n.to_string(),
        s.min.to_string(),
        s.q1.to_string(),
        s.median.to_string(),
        s.q3.to_string(),
        s.max.to_string(),
    ]);
    t.row(row);
}

fn distributions_csv(ds: &[VendorDistribution]) -> (String, String) {
    let mut bins = Table::new(&["vendor", "period", "bin", "count"]);
    let mut boxes = Table::new(&["vendor", "period", "n", "min", "q1", "median", "q3", "max"]);
    for d in ds {
        let (v, p) = (d.vendor.clone(), d.period.to_string());
        bins.row([
            v.clone(),
            p.clone(),
            "underflow".into(),
            d.summary.underflow.to_string(),
        ]);
        for b in &d.summary.bins {
            bins.row([
                v.clone(),
                p.clone(),
                b.center.to_string(),
                b.count.to_string(),
            ]);
        }
        bins.row([
            v.clone(),
            p.clone(),
            "overflow".into(),
            d.summary.overflow.to_string(),
        ]);
        five_numbers(&mut boxes, &[v, p], &d.summary);
    }
    (bins.finish(), boxes.finish())
}

fn ampm_csv(cells: &[AmPmCell]) -> String {
    let mut t = Table::new(&[
        "vendor", "period", "half", "n", "min", "q1", "median", "q3", "max",
    ]);
    for c in cells {
        for (half, s) in [("AM", &c.am), ("PM", &c.pm)] {
            let prefix = [c.vendor.clone(), c.period.to_string(), half.to_string()];
            match s {
                Some(s) => five_numbers(&mut t, &prefix, s),
                None => {
                    let mut row = prefix.to_vec();
                    row.push("0".into());
                    row.extend(std::iter::repeat_n(String::new(), 5));
                    t.row(row);
                }
            }
        }
    }
    t.finish()
}

fn correlation_csv(c: &Correlation) -> String {
    let mut t = Table::new(&["r", "p_value", "n", "skipped"]);
    match c {
        Correlation::Computed(x) => t.row([
            x.r.to_string(),
            x.p_value.to_string(),
            x.n.to_string(),
            String::new(),
        ]),
        Correlation::Skipped { skipped } => t.row([
            String::new(),
            String::new(),
            String::new(),
            skipped.to_string(),
        ]),
    }
    t.finish()
}

pub(crate) fn report_with(
    cfg: &RunConfig,
    segments: &SegmentTable,
    results: &[LatencyResult],
    source: &Path,
) -> CliResult<Report> {
    if results.is_empty() {
        return Err(CliError::Data {
            path: source.to_path_buf(),
            source: Error::EmptyInput("no latency results".into()),
        });
    }
    let sre: Vec<LatencyResult> = results
        .iter()
        .filter(|r| r.period == Period::Sre)
        .cloned()
        .collect();

    let mut distributions = Vec::new();
    for period in Period::ALL {
        let mut vendors: Vec<&str> = results.iter().map(|r| r.vendor_id.as_str()).collect();
        vendors.sort_unstable();
        vendors.dedup();
        for vendor in vendors {
            let values: Vec<f64> = results
                .iter()
                .filter(|r| r.period == period && r.vendor_id == vendor)
                .map(|r| r.mean_latency)
                .collect();
            if let Ok(summary) = distribution_summary(&values, &cfg.bounds) {
                distributions.push(VendorDistribution {
                    vendor: vendor.to_string(),
                    period,
                    summary,
                });
            }
        }
    }
    distributions.sort_by(|a, b| (&a.vendor, a.period).cmp(&(&b.vendor, b.period)));

    let length_correlation = match length_correlation(&sre, segments) {
        Ok(c) => Correlation::Computed(c),
        Err(e @ (Error::DegenerateSample(_) | Error::EmptyInput(_))) => {
            Correlation::Skipped { skipped: e.code() }
        }
        Err(e) => return Err(CliError::data(source)(e)),
    };
    let data = CliError::data;
    let report = Report {
        results: results.len(),
        latency_by_state: aggregate(results, GroupBy::STATE_VENDOR_PERIOD, segments)
            .map_err(data(source))?,
        latency_by_vendor: aggregate(results, GroupBy::VENDOR_PERIOD, segments)
            .map_err(data(source))?,
        sp_gt_rp_by_state: sp_gt_rp_share(results, GroupBy::STATE_VENDOR, segments)
            .map_err(data(source))?,
        sp_gt_rp_total: sp_gt_rp_share(results, GroupBy::VENDOR, segments).map_err(data(source))?,
        vendor_tests: pairwise_vendor_tests(results, Period::Sre),
        distributions,
        am_pm: am_pm_split(results, &cfg.bounds),
        length_correlation,
    };

    let out = &cfg.out_dir;
    write(
        out,
        "summary.json",
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )?;
    write(out, "table3.csv", &table3(&report.latency_by_state))?;
    write(
        out,
        "table4.csv",
        &table4(&report.sp_gt_rp_by_state, &report.sp_gt_rp_total),
    )?;
    write(out, "table5.csv", &table5(&report.vendor_tests))?;
    write(
        out,
        "table5_matrix.csv",
        &table5_matrix(&report.vendor_tests),
    )?;
    let (bins, boxes) = distributions_csv(&report.distributions);
    write(out, "distributions.csv", &bins)?;
    write(out, "boxplot.csv", &boxes)?;
    write(out, "ampm.csv", &ampm_csv(&report.am_pm))?;
    write(
        out,
        "length_correlation.csv",
        &correlation_csv(&report.length_correlation),
    )?;
    Ok(report)
}

/// Builds the summary tables from a latency CSV.
pub fn report(cfg: &RunConfig) -> CliResult<Report> {
    cfg.validate()?;
    let segments = load_segments(cfg)?;
    let path = cfg.latency_path();
    let results = parse_latency_csv(&inputs::read(&path)?).map_err(CliError::data(&path))?;
    report_with(cfg, &segments, &results, &path)
}
