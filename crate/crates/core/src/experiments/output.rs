use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{OutputFormat, ReplicateRecord, SummaryStats};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "experiment,n,t,grid_k,base_seed,replicate,metric,value,lower,upper";

/// Label of summary rows in the `replicate` column.
pub const SUMMARY_LABEL: &str = "SUMMARY";

/// One line of an output file. Summary rows carry the mean in `value` and
/// the standard error in `lower`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRow {
    pub experiment: String,
    pub n: usize,
    pub t: Option<f64>,
    pub grid_k: Option<usize>,
    pub base_seed: u64,
    pub replicate: String,
    pub metric: String,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl From<&ReplicateRecord> for OutputRow {
    fn from(r: &ReplicateRecord) -> Self {
        OutputRow {
            experiment: r.experiment.tag().to_string(),
            n: r.n,
            t: r.t,
            grid_k: r.grid_k,
            base_seed: r.base_seed,
            replicate: r.replicate_index.to_string(),
            metric: r.metric.clone(),
            value: r.value,
            lower: r.lower,
            upper: r.upper,
        }
    }
}

impl From<&SummaryStats> for OutputRow {
    fn from(s: &SummaryStats) -> Self {
        OutputRow {
            experiment: s.experiment.tag().to_string(),
            n: s.n,
            t: s.t,
            grid_k: s.grid_k,
            base_seed: s.base_seed,
            replicate: SUMMARY_LABEL.to_string(),
            metric: s.metric.clone(),
            value: s.mean,
            lower: Some(s.se),
            upper: None,
        }
    }
}

fn rows(records: &[ReplicateRecord], summaries: &[SummaryStats]) -> Vec<OutputRow> {
    records
        .iter()
        .map(OutputRow::from)
        .chain(summaries.iter().map(OutputRow::from))
        .collect()
}

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_real(x: Option<f64>) -> String {
    x.map(real).unwrap_or_default()
}

pub fn render_csv(records: &[ReplicateRecord], summaries: &[SummaryStats]) -> String {
    let mut out = String::with_capacity(128 * (records.len() + summaries.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows(records, summaries) {
        let fields = [
            row.experiment,
            row.n.to_string(),
            opt_real(row.t),
            row.grid_k.map(|k| k.to_string()).unwrap_or_default(),
            row.base_seed.to_string(),
            row.replicate,
            row.metric,
            real(row.value),
            opt_real(row.lower),
            opt_real(row.upper),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn render_json(records: &[ReplicateRecord], summaries: &[SummaryStats]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&rows(records, summaries))?;
    s.push('\n');
    Ok(s)
}

/// Writes records then summaries to `path`.
pub fn emit(records: &[ReplicateRecord], summaries: &[SummaryStats], format: OutputFormat, path: &Path) -> Result<()> {
    let body = match format {
        OutputFormat::Csv => render_csv(records, summaries),
        OutputFormat::Json => render_json(records, summaries)?,
    };
    fs::write(path, body).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
