//! Result records and their CSV/JSON serialization.
//!
//! Everything except `metadata.json` is a pure function of the
//! configuration and seed, so repeated runs produce identical bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use neumann_core::estimator::GradientEstimate;
use neumann_core::penalized::PenalizedPathState;
use neumann_core::reflected::{ExcursionRecord, ReflectedPathRecord};
use neumann_core::JumpMode;
use neumann_core::Scheme;
use serde::Serialize;

use crate::config::Format;
use crate::error::{AppError, AppResult};

pub const CSV_SCHEMA: &str = "# schema=1";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRecord {
    pub x: Vec<f64>,
    pub t: f64,
    pub scheme: String,
    pub dt: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub paths: usize,
    pub seed: u64,
    pub u_hat: f64,
    pub u_se: f64,
    pub v_hat: Vec<f64>,
    pub v_se: Vec<f64>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl EstimateRecord {
    pub fn new(est: &GradientEstimate, diagnostics: BTreeMap<String, f64>) -> Self {
        let epsilon = match est.scheme {
            Scheme::Reflected {
                mode: JumpMode::EpsilonExcursion { epsilon },
                ..
            } => Some(epsilon),
            _ => None,
        };
        Self {
            x: est.x.clone(),
            t: est.t,
            scheme: est.scheme.name().to_string(),
            dt: est.scheme.dt(),
            n: est.scheme.penalty(),
            epsilon,
            paths: est.paths,
            seed: est.seed,
            u_hat: est.value.mean,
            u_se: est.value.se,
            v_hat: est.components.clone(),
            v_se: est.standard_errors.clone(),
            diagnostics,
        }
    }
}

/// One pass/fail rule of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleOutcome {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub limit: f64,
    pub detail: String,
}

impl RuleOutcome {
    /// Passes when `value ≤ limit`.
    pub fn at_most(
        name: impl Into<String>,
        value: f64,
        limit: f64,
        detail: impl Into<String>,
    ) -> Self {
        Self {
            name: name.into(),
            pass: value <= limit,
            value,
            limit,
            detail: detail.into(),
        }
    }

    pub fn flag(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            value: pass as u8 as f64,
            limit: 1.0,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl OutputFile {
    fn format(&self) -> Option<Format> {
        if self.name.ends_with(".csv") {
            Some(Format::Csv)
        } else if self.name.ends_with(".json") {
            Some(Format::Json)
        } else {
            None
        }
    }
}

/// Outcome of one subcommand: files to write, rules, and a text table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub command: String,
    pub files: Vec<OutputFile>,
    pub rules: Vec<RuleOutcome>,
    pub text: String,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            ..Default::default()
        }
    }

    pub fn passed(&self) -> bool {
        self.rules.iter().all(|r| r.pass)
    }

    pub fn rule(&self, name: &str) -> Option<&RuleOutcome> {
        self.rules.iter().find(|r| r.name == name)
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> AppResult<()> {
        self.files.push(OutputFile {
            name: name.to_string(),
            bytes: json_bytes(value)?,
        });
        Ok(())
    }

    pub fn add_csv(
        &mut self,
        name: &str,
        headers: &[String],
        rows: &[Vec<String>],
    ) -> AppResult<()> {
        self.files.push(OutputFile {
            name: name.to_string(),
            bytes: csv_bytes(headers, rows)?,
        });
        Ok(())
    }

    /// Adds `summary.json` and `summary.csv` from the rules.
    pub fn add_summary(&mut self) -> AppResult<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            command: &'a str,
            pass: bool,
            rules: &'a [RuleOutcome],
        }
        let summary = Summary {
            command: &self.command,
            pass: self.passed(),
            rules: &self.rules,
        };
        let json = json_bytes(&summary)?;
        let headers: Vec<String> = ["rule", "pass", "value", "limit", "detail"]
            .map(String::from)
            .to_vec();
        let rows: Vec<Vec<String>> = self
            .rules
            .iter()
            .map(|r| {
                vec![
                    r.name.clone(),
                    r.pass.to_string(),
                    num(r.value),
                    num(r.limit),
                    r.detail.clone(),
                ]
            })
            .collect();
        let csv = csv_bytes(&headers, &rows)?;
        self.files.push(OutputFile {
            name: "summary.json".into(),
            bytes: json,
        });
        self.files.push(OutputFile {
            name: "summary.csv".into(),
            bytes: csv,
        });
        Ok(())
    }

    /// Rule lines for the terminal.
    pub fn rule_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.rules {
            let tag = if r.pass { "PASS" } else { "FAIL" };
            s.push_str(&format!(
                "{tag} {}: {} (limit {}) {}\n",
                r.name,
                num(r.value),
                num(r.limit),
                r.detail
            ));
        }
        s
    }

    /// Writes the files of the requested formats plus `metadata.json` and
    /// returns the written paths.
    pub fn write(
        &self,
        dir: &Path,
        formats: &[Format],
        meta: &Metadata,
    ) -> AppResult<Vec<PathBuf>> {
        let werr = |path: &Path, source| AppError::Write {
            path: path.to_path_buf(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(|e| werr(dir, e))?;
        let mut written = Vec::new();
        for f in &self.files {
            if f.format().is_some_and(|fmt| !formats.contains(&fmt)) {
                continue;
            }
            let path = dir.join(&f.name);
            std::fs::write(&path, &f.bytes).map_err(|e| werr(&path, e))?;
            written.push(path);
        }
        let path = dir.join("metadata.json");
        std::fs::write(&path, json_bytes(meta)?).map_err(|e| werr(&path, e))?;
        written.push(path);
        Ok(written)
    }
}

/// Run context kept out of the deterministic files.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub command: String,
    pub version: String,
    pub config: Option<String>,
    pub seed: u64,
    pub workers: usize,
    pub unix_time: u64,
}

impl Metadata {
    pub fn now(command: &str, config: Option<&Path>, seed: u64, workers: usize) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.map(|p| p.display().to_string()),
            seed,
            workers,
            unix_time: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

/// Shortest round-trip decimal form; exponent notation for very small or
/// very large magnitudes.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

pub fn json_bytes<T: Serialize>(value: &T) -> AppResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| AppError::Numerical(format!("cannot serialize: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// CSV with a leading schema line.
pub fn csv_bytes(headers: &[String], rows: &[Vec<String>]) -> AppResult<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CSV_SCHEMA.as_bytes());
    out.push(b'\n');
    let mut w = csv::Writer::from_writer(out);
    let cerr = |e: csv::Error| AppError::Numerical(format!("cannot write CSV: {e}"));
    w.write_record(headers).map_err(cerr)?;
    for row in rows {
        w.write_record(row).map_err(cerr)?;
    }
    w.into_inner()
        .map_err(|e| AppError::Numerical(format!("cannot write CSV: {e}")))
}

fn position_headers(d: usize, prefix: &str) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}

fn jacobian_headers(d: usize, columns: usize) -> Vec<String> {
    let mut h = Vec::new();
    for i in 1..=d {
        for j in 1..=columns {
            h.push(format!("J_{i}{j}"));
        }
    }
    h
}

/// Column-major Jacobian as row-major strings.
fn jacobian_cells(jac: &[f64], d: usize) -> impl Iterator<Item = String> + '_ {
    let columns = jac.len() / d;
    (0..d).flat_map(move |i| (0..columns).map(move |j| num(jac[j * d + i])))
}

pub fn estimates_csv(records: &[EstimateRecord]) -> (Vec<String>, Vec<Vec<String>>) {
    let d = records.first().map_or(0, |r| r.x.len());
    let mut headers: Vec<String> = ["scheme", "dt", "n", "epsilon", "paths", "seed", "t"]
        .map(String::from)
        .to_vec();
    headers.extend(position_headers(d, "x"));
    headers.extend(["u_hat", "u_se"].map(String::from));
    headers.extend(position_headers(d, "v_hat"));
    headers.extend(position_headers(d, "v_se"));
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let rows = records
        .iter()
        .map(|r| {
            let mut row = vec![
                r.scheme.clone(),
                num(r.dt),
                opt(r.n),
                opt(r.epsilon),
                r.paths.to_string(),
                r.seed.to_string(),
                num(r.t),
            ];
            row.extend(r.x.iter().map(|v| num(*v)));
            row.extend([num(r.u_hat), num(r.u_se)]);
            row.extend(r.v_hat.iter().map(|v| num(*v)));
            row.extend(r.v_se.iter().map(|v| num(*v)));
            row
        })
        .collect();
    (headers, rows)
}

pub fn penalized_path_csv(path: &[PenalizedPathState]) -> (Vec<String>, Vec<Vec<String>>) {
    let d = path.first().map_or(0, |s| s.dim());
    let columns = path.first().map_or(0, |s| s.columns());
    let mut headers = vec!["step".to_string(), "t".to_string()];
    headers.extend(position_headers(d, "X_"));
    headers.extend(jacobian_headers(d, columns));
    headers.push("T_n".into());
    let rows = path
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mut row = vec![k.to_string(), num(s.time)];
            row.extend(s.position.iter().map(|v| num(*v)));
            row.extend(jacobian_cells(&s.jacobian, d));
            row.push(num(s.occupation));
            row
        })
        .collect();
    (headers, rows)
}

pub fn reflected_path_csv(rec: &ReflectedPathRecord) -> (Vec<String>, Vec<Vec<String>>) {
    let d = rec.positions.first().map_or(0, Vec::len);
    let columns = rec.jacobians.first().map_or(0, |j| j.len() / d.max(1));
    let mut headers = vec!["step".to_string(), "t".to_string()];
    headers.extend(position_headers(d, "X_"));
    headers.extend(jacobian_headers(d, columns));
    headers.extend(["L", "contact"].map(String::from));
    let rows = (0..rec.times.len())
        .map(|k| {
            let mut row = vec![k.to_string(), num(rec.times[k])];
            row.extend(rec.positions[k].iter().map(|v| num(*v)));
            row.extend(jacobian_cells(&rec.jacobians[k], d));
            row.push(num(rec.local_time[k]));
            row.push((rec.contacts[k] as u8).to_string());
            row
        })
        .collect();
    (headers, rows)
}

/// Excursions of several paths; `path` indexes the source path.
pub fn excursions_csv(
    d: usize,
    rows_in: &[(usize, &ExcursionRecord, f64, f64)],
) -> (Vec<String>, Vec<Vec<String>>) {
    let mut headers: Vec<String> = ["path", "start_t", "end_t", "duration"]
        .map(String::from)
        .to_vec();
    headers.extend(position_headers(d, "start_point_"));
    headers.extend(position_headers(d, "end_point_"));
    let rows = rows_in
        .iter()
        .map(|(p, e, start_t, end_t)| {
            let mut row = vec![p.to_string(), num(*start_t), num(*end_t), num(e.duration)];
            row.extend(e.start_point.iter().map(|v| num(*v)));
            row.extend(e.end_point.iter().map(|v| num(*v)));
            row
        })
        .collect();
    (headers, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_schema_line() {
        let bytes =
            csv_bytes(&["a".into(), "b".into()], &[vec!["1".into(), "x,y".into()]]).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "# schema=1\na,b\n1,\"x,y\"\n"
        );
    }

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 123456789.0] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn jacobian_rows_are_row_major() {
        let cells: Vec<String> = jacobian_cells(&[1.0, 2.0, 3.0, 4.0], 2).collect();
        assert_eq!(cells, ["1", "3", "2", "4"]);
    }

    #[test]
    fn write_filters_formats() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Report::new("estimate");
        r.add_json("a.json", &1).unwrap();
        r.add_csv("a.csv", &["h".into()], &[]).unwrap();
        let meta = Metadata::now("estimate", None, 1, 1);
        let written = r.write(dir.path(), &[Format::Csv], &meta).unwrap();
        assert!(dir.path().join("a.csv").exists());
        assert!(!dir.path().join("a.json").exists());
        assert_eq!(written.len(), 2);
    }
}
