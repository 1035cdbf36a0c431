//! CSV artifacts.
//!
//! Every file is UTF-8 and comma-separated with a single header line. Above
//! the header sit `#`-prefixed metadata lines, each a TOML `key = value`
//! pair: the canonical run configuration followed by `meta.*` entries.
//! Numbers are written in Rust's shortest round-trip exponent form.

use std::io::Write;

use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::dynamics::Trajectory;

pub const TRAJECTORY_HEADER: [&str; 8] = ["t", "phi", "phi_dot", "pop0", "pop_m1", "pop_p1", "re_S", "im_S"];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("schema mismatch: expected header `{expected}`, found `{found}`")]
    Schema { expected: String, found: String },
    #[error("row {row}, column `{column}`: `{value}` is not a number")]
    Number { row: usize, column: String, value: String },
    #[error("embedded config: {0}")]
    Config(#[from] ConfigError),
}

pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:e}")
    }
}

/// An in-memory CSV table with metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTable {
    pub meta: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        CsvTable { meta: Vec::new(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    /// Adds the canonical config lines to the metadata.
    pub fn with_config(mut self, config: &Config) -> Self {
        self.meta.extend(config.canonical().lines().map(str::to_string));
        self
    }

    /// Adds a `meta.<key> = <value>` line; `value` must already be TOML.
    pub fn with_meta(mut self, key: &str, value: impl std::fmt::Display) -> Self {
        self.meta.push(format!("meta.{key} = {value}"));
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn push_nums(&mut self, row: &[f64]) {
        self.rows.push(row.iter().map(|x| fmt_num(*x)).collect());
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), IoError> {
        for m in &self.meta {
            writeln!(w, "# {m}")?;
        }
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(&self.header)?;
        for r in &self.rows {
            cw.write_record(r)?;
        }
        cw.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn parse(text: &str) -> Result<CsvTable, IoError> {
        let meta = text.lines().take_while(|l| l.starts_with('#')).map(|l| l.trim_start_matches('#').trim().to_string()).collect();
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r.records().map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect())).collect::<Result<_, _>>()?;
        Ok(CsvTable { meta, header, rows })
    }

    /// Metadata lines outside the `meta.` namespace, i.e. the run config.
    pub fn config_text(&self) -> String {
        self.meta.iter().filter(|m| !m.starts_with("meta.")).map(|m| format!("{m}\n")).collect()
    }

    /// Value text of `meta.<key>`, if present.
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        let prefix = format!("meta.{key} = ");
        self.meta.iter().find_map(|m| m.strip_prefix(&prefix))
    }

    pub fn require_header(&self, expected: &[&str]) -> Result<(), IoError> {
        if self.header.iter().map(String::as_str).ne(expected.iter().copied()) {
            return Err(IoError::Schema { expected: expected.join(","), found: self.header.join(",") });
        }
        Ok(())
    }

    /// Column `name` parsed as numbers.
    pub fn column(&self, name: &str) -> Result<Vec<f64>, IoError> {
        let idx = self.header.iter().position(|h| h == name).ok_or_else(|| IoError::Schema {
            expected: format!("a `{name}` column"),
            found: self.header.join(","),
        })?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let v = r.get(idx).map(String::as_str).unwrap_or("");
                v.parse().map_err(|_| IoError::Number { row: i + 1, column: name.to_string(), value: v.to_string() })
            })
            .collect()
    }
}

/// Trajectory samples as a CSV table with the standard header.
pub fn trajectory_table(config: &Config, traj: &Trajectory, index: usize) -> CsvTable {
    let mut t = CsvTable::new(&TRAJECTORY_HEADER)
        .with_config(config)
        .with_meta("kind", "\"trajectory\"")
        .with_meta("trajectory", index)
        .with_meta("seed", traj.seed);
    t.rows.reserve(traj.len());
    for (time, s) in traj.times.iter().zip(&traj.states) {
        t.push_nums(&[
            *time,
            s.mech.phi,
            s.mech.phi_dot,
            s.spin.pop0,
            s.spin.pop_m1,
            s.spin.pop_p1,
            s.spin.coherence.re,
            s.spin.coherence.im,
        ]);
    }
    t
}

/// A trajectory CSV read back for analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryData {
    pub t: Vec<f64>,
    pub phi: Vec<f64>,
    pub phi_dot: Vec<f64>,
    /// The run configuration embedded in the metadata.
    pub config: Config,
}

pub fn read_trajectory(text: &str) -> Result<TrajectoryData, IoError> {
    let table = CsvTable::parse(text)?;
    table.require_header(&TRAJECTORY_HEADER)?;
    let config = Config::parse(&table.config_text(), &[])?;
    Ok(TrajectoryData { t: table.column("t")?, phi: table.column("phi")?, phi_dot: table.column("phi_dot")?, config })
}
