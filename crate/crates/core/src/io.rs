//! CSV/JSON plumbing for the CLI: population loading, assignment and
//! outcome files, the simulate config format, and run manifests.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design::{Assignment, MQuantiles, SeedInfo};
use crate::error::Error;
use crate::inference::{CiMethod, HcVariant};
use crate::population::FinitePopulation;
use crate::sim::SimulationReport;
use crate::Result;

/// Load a population CSV: header row, first column `unit_id`, remaining
/// numeric covariate columns; optional `y1`,`y0` columns switch on
/// simulation mode.
pub fn load_population(path: &Path) -> Result<FinitePopulation> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || headers.get(0) != Some("unit_id") {
        return Err(Error::Parse {
            line: 1,
            msg: "first column must be named 'unit_id'".into(),
        });
    }
    let mut y1_col = None;
    let mut y0_col = None;
    let mut cov_cols = Vec::new();
    for (j, name) in headers.iter().enumerate().skip(1) {
        match name {
            "y1" => y1_col = Some(j),
            "y0" => y0_col = Some(j),
            _ => cov_cols.push(j),
        }
    }
    if y1_col.is_some() != y0_col.is_some() {
        return Err(Error::Parse {
            line: 1,
            msg: "columns y1 and y0 must be given together".into(),
        });
    }
    if cov_cols.is_empty() {
        return Err(Error::Parse { line: 1, msg: "no covariate columns found".into() });
    }

    let mut ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut y1 = Vec::new();
    let mut y0 = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let field = |j: usize| -> Result<f64> {
            record[j].parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("column '{}': not a number: '{}'", &headers[j], &record[j]),
            })
        };
        ids.push(record[0].to_string());
        let mut row = Vec::with_capacity(cov_cols.len());
        for &j in &cov_cols {
            row.push(field(j)?);
        }
        rows.push(row);
        if let (Some(j1), Some(j0)) = (y1_col, y0_col) {
            y1.push(field(j1)?);
            y0.push(field(j0)?);
        }
    }
    let n = rows.len();
    let k = cov_cols.len();
    let covariates = DMatrix::from_fn(n, k, |i, j| rows[i][j]);
    FinitePopulation::new(
        covariates,
        y1_col.map(|_| y1),
        y0_col.map(|_| y0),
        ids,
    )
}

/// Write the `design` assignment CSV: columns `unit_id`, `z`.
pub fn write_assignment_csv(path: &Path, ids: &[String], a: &Assignment) -> Result<()> {
    if ids.len() != a.n() {
        return Err(Error::Invalid("unit id list and assignment length differ".into()));
    }
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["unit_id", "z"])?;
    for (id, &z) in ids.iter().zip(&a.z) {
        writer.write_record([id.as_str(), if z == 1 { "1" } else { "0" }])?;
    }
    writer.flush()?;
    Ok(())
}

/// Read an assignment CSV back: (unit ids, assignment).
pub fn read_assignment_csv(path: &Path) -> Result<(Vec<String>, Assignment)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("unit_id") || headers.get(1) != Some("z") {
        return Err(Error::Parse { line: 1, msg: "expected columns unit_id,z".into() });
    }
    let mut ids = Vec::new();
    let mut z = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record?;
        ids.push(record[0].to_string());
        z.push(match &record[1] {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                return Err(Error::Parse { line, msg: format!("z must be 0 or 1, got '{other}'") })
            }
        });
    }
    Ok((ids, Assignment::new(z)?))
}

/// Read an outcomes CSV (`unit_id`,`y`).
pub fn read_outcomes_csv(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("unit_id") || headers.get(1) != Some("y") {
        return Err(Error::Parse { line: 1, msg: "expected columns unit_id,y".into() });
    }
    let mut out = BTreeMap::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record?;
        let id = record[0].to_string();
        let y = record[1].parse::<f64>().map_err(|_| Error::Parse {
            line,
            msg: format!("column 'y': not a number: '{}'", &record[1]),
        })?;
        if out.insert(id.clone(), y).is_some() {
            return Err(Error::Parse { line, msg: format!("duplicate unit_id '{id}'") });
        }
    }
    Ok(out)
}

/// Arrange outcomes in the order of `ids`; the id sets must be equal.
pub fn align_outcomes(ids: &[String], outcomes: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
    if ids.len() != outcomes.len() {
        if let Some(extra) = outcomes.keys().find(|k| !ids.contains(k)) {
            return Err(Error::UnitMismatch(format!(
                "outcomes contain unknown unit_id '{extra}'"
            )));
        }
    }
    ids.iter()
        .map(|id| {
            outcomes
                .get(id)
                .copied()
                .ok_or_else(|| Error::UnitMismatch(format!("no outcome for unit_id '{id}'")))
        })
        .collect()
}

/// Provenance record attached to every CLI output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 over the command name and all input bytes, hex encoded.
    pub config_hash: String,
    pub master_seed: u64,
    pub tool_version: String,
    pub timestamp_unix_secs: u64,
}

impl RunManifest {
    pub fn new(command: &str, inputs: &[&[u8]], master_seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(command.as_bytes());
        for part in inputs {
            hasher.update([0u8]); // separator so parts cannot merge
            hasher.update(part);
        }
        let config_hash = format!("{:x}", hasher.finalize());
        let timestamp_unix_secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        RunManifest {
            command: command.to_string(),
            config_hash,
            master_seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix_secs,
        }
    }
}

/// JSON sidecar written next to the `design` assignment CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignSidecar {
    pub m_min: f64,
    #[serde(rename = "T")]
    pub tries: usize,
    pub chosen_index: usize,
    pub tie_count: usize,
    pub master_seed: u64,
    pub driver_stream: u64,
    pub m_summary: MQuantiles,
    pub ridged: bool,
    pub manifest: RunManifest,
}

impl DesignSidecar {
    pub fn seed_info(&self) -> SeedInfo {
        SeedInfo { master_seed: self.master_seed, driver_stream: self.driver_stream }
    }
}

/// Parsed `simulate` key-value config file. Lines are `key = value`,
/// `#` starts a comment, list values are comma-separated.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulateFileConfig {
    pub population: String,
    pub n1: usize,
    pub k_used: Option<usize>,
    pub tries: usize,
    pub reps: usize,
    pub alpha: f64,
    pub methods: Vec<CiMethod>,
    pub hc: Vec<HcVariant>,
    pub seed: Option<u64>,
    pub mc_draws: Option<usize>,
}

impl SimulateFileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                msg: format!("expected 'key = value', got '{line}'"),
            })?;
            let key = key.trim().to_string();
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Parse { line: idx + 1, msg: format!("duplicate key '{key}'") });
            }
        }

        fn required<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
            map.get(key).map(String::as_str).ok_or_else(|| Error::Config {
                field: key.to_string(),
                msg: "missing required key".into(),
            })
        }
        fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| Error::Config {
                field: key.to_string(),
                msg: format!("cannot parse '{value}'"),
            })
        }
        fn optional<T: std::str::FromStr>(
            map: &BTreeMap<String, String>,
            key: &str,
        ) -> Result<Option<T>> {
            map.get(key).map(|v| parse_as(key, v)).transpose()
        }
        fn list<T: std::str::FromStr<Err = Error>>(key: &str, value: &str) -> Result<Vec<T>> {
            let items: Result<Vec<T>> = value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect();
            let items = items?;
            if items.is_empty() {
                return Err(Error::Config { field: key.to_string(), msg: "empty list".into() });
            }
            Ok(items)
        }

        let known = [
            "population", "n1", "K_used", "T", "reps", "alpha", "methods", "hc", "seed",
            "mc_draws",
        ];
        if let Some(unknown) = map.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(Error::Config {
                field: unknown.clone(),
                msg: "unknown config key".into(),
            });
        }

        Ok(SimulateFileConfig {
            population: required(&map, "population")?.to_string(),
            n1: parse_as("n1", required(&map, "n1")?)?,
            k_used: optional(&map, "K_used")?,
            tries: parse_as("T", required(&map, "T")?)?,
            reps: parse_as("reps", required(&map, "reps")?)?,
            alpha: parse_as("alpha", required(&map, "alpha")?)?,
            methods: list("methods", required(&map, "methods")?)?,
            hc: list("hc", required(&map, "hc")?)?,
            seed: optional(&map, "seed")?,
            mc_draws: optional(&map, "mc_draws")?,
        })
    }
}

/// Flat per-cell CSV for a simulation report, one row per (method, hc).
pub fn simulation_report_csv(report: &SimulationReport) -> String {
    let mut out = String::from(
        "method,hc,coverage,coverage_se,bias,bias_se,rmse,mean_length,length_se,pct_length_vs_neyman\n",
    );
    for cell in &report.cells {
        let pct = cell
            .pct_length_vs_neyman
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
            cell.method,
            cell.hc,
            cell.coverage,
            cell.coverage_se,
            cell.bias,
            cell.bias_se,
            cell.rmse,
            cell.mean_length,
            cell.length_se,
            pct
        ));
    }
    out
}
