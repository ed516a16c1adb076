//! Run configuration documents and machine-readable run reports.
//!
//! JSON reports are written with sorted keys and shortest round-trip floats,
//! so identical inputs give byte-identical files. CSV output is either the
//! report's table (one row per sample) or, when there is none, one
//! `path,value` row per scalar leaf of the JSON document. Both start with a
//! `#` header line naming the tool, version and schema.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::psh::PipelineConfig;
use crate::sampling::{DEFAULT_COLLAR_LEVELS, DEFAULT_SAMPLES};

pub const TOOL_NAME: &str = "dfindex";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub seed: u64,
    /// Boundary samples for invariants and bounds; collar points for the
    /// estimator.
    pub samples: usize,
    pub collar_levels: Vec<f64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: DEFAULT_SAMPLES,
            collar_levels: DEFAULT_COLLAR_LEVELS.to_vec(),
        }
    }
}

/// One configuration document per run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub domain: Option<DomainSpec>,
    pub sampling: SamplingConfig,
    pub estimator: EstimatorConfig,
    pub pipeline: PipelineConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Estimator settings with the sampling section applied.
    pub fn effective_estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            seed: self.sampling.seed,
            samples: self.sampling.samples,
            collar_levels: self.sampling.collar_levels.clone(),
            ..self.estimator.clone()
        }
    }
}

/// Reads a domain document.
pub fn load_domain(path: &Path) -> Result<DomainSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Status {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
    /// Informational record without a verdict.
    #[serde(rename = "OK")]
    Ok,
}

#[derive(Clone, Debug, Serialize)]
pub struct Record {
    pub operation: String,
    pub status: Status,
    pub samples: usize,
    pub tolerance: Option<f64>,
    pub output: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing_seconds: Option<f64>,
}

impl Record {
    pub fn new(operation: &str, status: Status, samples: usize, tolerance: Option<f64>, output: impl Serialize) -> Result<Self> {
        Ok(Self {
            operation: operation.to_string(),
            status,
            samples,
            tolerance,
            output: serde_json::to_value(output)?,
            timing_seconds: None,
        })
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub status: Status,
    pub failed: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub schema_version: u32,
    pub command: String,
    pub domain: Option<DomainSpec>,
    pub config: Value,
    pub records: Vec<Record>,
    pub table: Option<Table>,
    pub verdict: Verdict,
}

impl RunReport {
    pub fn new(command: &str, config: &RunConfig) -> Result<Self> {
        Ok(Self {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            domain: config.domain.clone(),
            config: serde_json::to_value(config)?,
            records: Vec::new(),
            table: None,
            verdict: Verdict {
                status: Status::Ok,
                failed: Vec::new(),
            },
        })
    }

    pub fn push(&mut self, record: Record) {
        if record.status == Status::Fail {
            self.verdict.failed.push(record.operation.clone());
        }
        self.verdict.status = if !self.verdict.failed.is_empty() {
            Status::Fail
        } else if record.status == Status::Pass || self.verdict.status == Status::Pass {
            Status::Pass
        } else {
            Status::Ok
        };
        self.records.push(record);
    }

    pub fn passed(&self) -> bool {
        self.verdict.status != Status::Fail
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Pretty JSON with sorted keys and a trailing newline.
pub fn to_json(report: &RunReport) -> Result<String> {
    // `Value` maps are ordered, which sorts every key.
    let v = serde_json::to_value(report)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&p, x, out);
            }
        }
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), x, out);
            }
        }
        leaf => out.push((prefix.to_string(), cell(leaf))),
    }
}

pub fn to_csv(report: &RunReport) -> Result<String> {
    let mut buf = format!(
        "# {} {} schema {} command {} verdict {}\n",
        report.tool,
        report.version,
        report.schema_version,
        report.command,
        cell(&serde_json::to_value(report.verdict.status)?)
    )
    .into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let csv_err = |e: csv::Error| Error::Io(e.to_string());
        match &report.table {
            Some(t) => {
                w.write_record(&t.columns).map_err(csv_err)?;
                for row in &t.rows {
                    w.write_record(row.iter().map(cell)).map_err(csv_err)?;
                }
            }
            None => {
                let mut doc = serde_json::to_value(report)?;
                if let Value::Object(m) = &mut doc {
                    m.remove("table");
                }
                let mut rows = Vec::new();
                flatten("", &doc, &mut rows);
                w.write_record(["path", "value"]).map_err(csv_err)?;
                for (p, v) in rows {
                    w.write_record([p, v]).map_err(csv_err)?;
                }
            }
        }
        w.flush()?;
    }
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}

/// Writes the report to `path`, or to standard output when `path` is `None`.
pub fn write_report(report: &RunReport, path: Option<&Path>, format: Format) -> Result<()> {
    let text = match format {
        Format::Json => to_json(report)?,
        Format::Csv => to_csv(report)?,
    };
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_has_header() {
        let r = RunReport::new("report", &RunConfig::default()).unwrap();
        let j: Value = serde_json::from_str(&to_json(&r).unwrap()).unwrap();
        assert_eq!(j["tool"], "dfindex");
        assert_eq!(j["schema_version"], 1);
        assert_eq!(j["verdict"]["status"], "OK");
        let c = to_csv(&r).unwrap();
        assert!(c.starts_with("# dfindex "));
        assert!(c.lines().nth(1).unwrap() == "path,value");
    }

    #[test]
    fn keys_are_sorted_and_floats_round_trip() {
        let mut r = RunReport::new("x", &RunConfig::default()).unwrap();
        let x = 0.1 + 0.2;
        r.push(Record::new("b", Status::Pass, 1, Some(1e-8), serde_json::json!({"z": x, "a": 1})).unwrap());
        let s = to_json(&r).unwrap();
        assert!(s.find("\"a\"").unwrap() < s.find("\"z\"").unwrap());
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["records"][0]["output"]["z"].as_f64().unwrap(), x);
    }

    #[test]
    fn verdict_tracks_failures() {
        let mut r = RunReport::new("x", &RunConfig::default()).unwrap();
        r.push(Record::new("a", Status::Pass, 1, None, 0).unwrap());
        assert_eq!(r.verdict.status, Status::Pass);
        r.push(Record::new("b", Status::Fail, 1, None, 0).unwrap());
        r.push(Record::new("c", Status::Ok, 1, None, 0).unwrap());
        assert_eq!(r.verdict.status, Status::Fail);
        assert_eq!(r.verdict.failed, vec!["b".to_string()]);
        assert!(!r.passed());
    }

    #[test]
    fn config_rejects_unknown_fields() {
        assert!(RunConfig::from_json(r#"{"sampling": {"seed": 3, "bogus": 1}}"#).is_err());
        let c = RunConfig::from_json(r#"{"domain": {"kind": "ball", "radius": 2.0}, "estimator": {"eta": 0.9}}"#).unwrap();
        assert_eq!(c.domain, Some(DomainSpec::Ball { radius: 2.0, dim: 2 }));
        assert_eq!(c.estimator.eta, 0.9);
        assert_eq!(c.sampling.samples, DEFAULT_SAMPLES);
    }
}
