//! Result tables and their CSV / JSON files.
//!
//! A CSV file starts with the resolved configuration as `# `-prefixed TOML lines,
//! followed by the header `sweep,metric,value,ci95,trials,events,seconds`.

use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 7] = [
    "sweep", "metric", "value", "ci95", "trials", "events", "seconds",
];

/// One estimate at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep: f64,
    pub metric: String,
    pub value: f64,
    /// 95% confidence half-width: Wilson for rates, normal approximation for means.
    pub ci95: f64,
    pub trials: u64,
    /// Counted error events; 0 for metrics that are not rates.
    pub events: u64,
    /// Wall time of the sweep point, 0 unless timing is enabled.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub config: ExperimentConfig,
    pub rows: Vec<ResultRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::config("format", format!("unknown format `{other}`"))),
        }
    }
}

impl ResultTable {
    /// Rows with the given metric, in sweep order.
    pub fn metric(&self, name: &str) -> Vec<&ResultRow> {
        self.rows.iter().filter(|r| r.metric == name).collect()
    }

    /// Value of `metric` at sweep point `sweep`.
    pub fn value(&self, metric: &str, sweep: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.sweep == sweep)
            .map(|r| r.value)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        for line in self.config.to_toml().lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.serialize(r).map_err(csv_err)?;
        }
        let body = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        out.push_str(std::str::from_utf8(&body).map_err(|e| Error::Io(e.to_string()))?);
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let toml: String = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .map(|l| l.strip_prefix("# ").unwrap_or(l.trim_start_matches('#')))
            .collect::<Vec<_>>()
            .join("\n");
        let config = ExperimentConfig::from_toml(&toml)?;
        let mut rd = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let header = rd.headers().map_err(csv_err)?.clone();
        if header.iter().ne(CSV_HEADER) {
            return Err(Error::Io(format!("unexpected CSV header {header:?}")));
        }
        let rows = rd
            .deserialize()
            .collect::<std::result::Result<Vec<ResultRow>, _>>()
            .map_err(csv_err)?;
        Ok(Self { config, rows })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("<json>", e.to_string()))
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Writes the table to `path`.
pub fn emit(table: &ResultTable, path: &FsPath, format: Format) -> Result<()> {
    std::fs::write(path, table.render(format)?)?;
    Ok(())
}
