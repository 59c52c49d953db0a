//! Experiment report rows.
//!
//! Every benchmark emits flat rows with a metric name drawn from a frozen
//! vocabulary; anything else is rejected on read. Two encodings, same
//! content: CSV (`id,params,metric,value,units`, no quoting — fields never
//! contain commas) and a JSON array. `params` is a `;`-separated `key=value`
//! string identifying the sweep cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The frozen metric vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Cycles,
    CompressionRatio,
    MaxDeviation,
    Utilization,
    SpeedupVsDense,
    SuccessRate,
    Density,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Cycles,
        Metric::CompressionRatio,
        Metric::MaxDeviation,
        Metric::Utilization,
        Metric::SpeedupVsDense,
        Metric::SuccessRate,
        Metric::Density,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Cycles => "cycles",
            Metric::CompressionRatio => "compression_ratio",
            Metric::MaxDeviation => "max_deviation",
            Metric::Utilization => "utilization",
            Metric::SpeedupVsDense => "speedup_vs_dense",
            Metric::SuccessRate => "success_rate",
            Metric::Density => "density",
        }
    }

    pub fn parse(name: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == name)
    }
}

/// One measured value of one experiment cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Subcommand that produced the row.
    pub id: String,
    /// `;`-separated `key=value` cell parameters.
    pub params: String,
    pub metric: Metric,
    pub value: f64,
    pub units: String,
}

impl ReportRow {
    pub fn new(
        id: impl Into<String>,
        params: impl Into<String>,
        metric: Metric,
        value: f64,
        units: impl Into<String>,
    ) -> Self {
        ReportRow {
            id: id.into(),
            params: params.into(),
            metric,
            value,
            units: units.into(),
        }
    }
}

pub const CSV_HEADER: &str = "id,params,metric,value,units";

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        debug_assert!(!r.id.contains(',') && !r.params.contains(',') && !r.units.contains(','));
        // {:?} guarantees shortest round-trip formatting for f64
        out.push_str(&format!(
            "{},{},{},{:?},{}\n",
            r.id,
            r.params,
            r.metric.name(),
            r.value,
            r.units
        ));
    }
    out
}

/// Parse report CSV, rejecting wrong headers, field counts, unknown metric
/// names, and non-finite values.
pub fn rows_from_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty report"))?;
    if header != CSV_HEADER {
        return Err(Error::parse(1, format!("bad header {header:?}")));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::parse(lineno, "expected 5 fields"));
        }
        let metric = Metric::parse(fields[2])
            .ok_or_else(|| Error::parse(lineno, format!("unknown metric {:?}", fields[2])))?;
        let value: f64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(lineno, "bad value"))?;
        if !value.is_finite() {
            return Err(Error::parse(lineno, "non-finite value"));
        }
        rows.push(ReportRow::new(fields[0], fields[1], metric, value, fields[4]));
    }
    Ok(rows)
}

pub fn rows_to_json(rows: &[ReportRow]) -> String {
    serde_json::to_string_pretty(rows).expect("report serialization")
}

/// Parse a JSON report; serde rejects unknown metric names.
pub fn rows_from_json(text: &str) -> Result<Vec<ReportRow>> {
    let rows: Vec<ReportRow> = serde_json::from_str(text)?;
    for r in &rows {
        if !r.value.is_finite() {
            return Err(Error::Config(format!(
                "non-finite value for metric {}",
                r.metric.name()
            )));
        }
    }
    Ok(rows)
}
