//! Skipped work, recorded with a machine-readable reason code.

use chrono::NaiveDate;
use probelag_core::{Instant, Period};

use crate::table::Table;

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub segment_id: String,
    pub vendor_id: String,
    pub date: Option<NaiveDate>,
    pub episode_start: Option<Instant>,
    pub period: Option<Period>,
    pub code: String,
    pub message: String,
}

impl Diagnostic {
    pub fn segment(segment_id: &str, code: &str, message: String) -> Self {
        Self {
            segment_id: segment_id.to_string(),
            vendor_id: String::new(),
            date: None,
            episode_start: None,
            period: None,
            code: code.to_string(),
            message,
        }
    }

    pub fn day(segment_id: &str, date: NaiveDate, err: &probelag_core::Error) -> Self {
        Self {
            date: Some(date),
            ..Self::segment(segment_id, err.code(), err.to_string())
        }
    }
}

pub fn to_csv(diags: &[Diagnostic]) -> String {
    let mut t = Table::new(&[
        "segment_id",
        "vendor_id",
        "date",
        "episode_start",
        "period",
        "code",
        "message",
    ]);
    for d in diags {
        t.row([
            d.segment_id.clone(),
            d.vendor_id.clone(),
            d.date.map(|x| x.to_string()).unwrap_or_default(),
            d.episode_start.map(|x| x.to_rfc3339()).unwrap_or_default(),
            d.period.map(|p| p.to_string()).unwrap_or_default(),
            d.code.clone(),
            d.message.clone(),
        ]);
    }
    t.finish()
}
