//! Output directories, manifests and the CSV tables every subcommand writes.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use netdeconv::trainer::RunRecord;
use netdeconv::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// First line of every CSV the CLI writes.
pub const DESK_SCALE_NOTE: &str = "# desk-scale run: reduced datasets, widths and epochs; \
absolute numbers are not comparable to full-scale training";

/// Where an experiment reads its data and writes its artifacts.
#[derive(Clone, Debug)]
pub struct Context {
    pub data_dir: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    /// Whitening subtracts the batch mean (off with `--uncentered`).
    pub centered: bool,
    /// Re-read every written CSV and check it parses back identically.
    pub self_check: bool,
    pub jobs: usize,
    /// Set in worker processes: run only this entry of the experiment.
    pub run_index: Option<usize>,
    /// Command line that re-invokes this subcommand, for `--jobs` workers.
    pub worker_command: Option<Vec<OsString>>,
}

impl Context {
    pub fn new(data_dir: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Context {
            data_dir: data_dir.into(),
            out: out.into(),
            seed: 1,
            centered: true,
            self_check: false,
            jobs: 1,
            run_index: None,
            worker_command: None,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn prepare(&self) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| io_error(&self.out, e))
    }

    /// Data subdirectory, with a pointer to the fetch script when missing.
    pub fn dataset_dir(&self, name: &str) -> Result<PathBuf> {
        let dir = self.data_dir.join(name);
        if dir.is_dir() {
            Ok(dir)
        } else {
            Err(Error::InsufficientData(format!(
                "{} not found; run scripts/fetch_data.sh or pass --data-dir",
                dir.display()
            )))
        }
    }

    pub fn write_manifest<C: Serialize>(&self, name: &str, config: &C) -> Result<()> {
        let manifest = ExperimentManifest {
            name: name.to_string(),
            note: DESK_SCALE_NOTE.trim_start_matches("# ").to_string(),
            seed: self.seed,
            centered: self.centered,
            data_dir: self.data_dir.clone(),
            out: self.out.clone(),
            config: serde_json::to_value(config)?,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        write_file(&self.path("manifest.json"), text.as_bytes())
    }

    pub fn write_table(&self, name: &str, table: &Table) -> Result<()> {
        let path = self.path(name);
        write_file(&path, table.to_csv().as_bytes())?;
        if self.self_check {
            let back = Table::parse(&read_file(&path)?)?;
            if back != *table {
                return Err(Error::Format {
                    offset: 0,
                    reason: format!("{} does not read back identically", path.display()),
                });
            }
        }
        Ok(())
    }

    /// Check a run record CSV written by the trainer.
    pub fn check_record(&self, path: &Path, record: &RunRecord) -> Result<()> {
        if self.self_check {
            let back = RunRecord::parse_csv(&read_file(path)?)?;
            if back != *record {
                return Err(Error::Format {
                    offset: 0,
                    reason: format!("{} does not read back identically", path.display()),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub name: String,
    pub note: String,
    pub seed: u64,
    pub centered: bool,
    pub data_dir: PathBuf,
    pub out: PathBuf,
    pub config: serde_json::Value,
}

/// Settings read from `--config`: either a bare config object or a
/// manifest written by an earlier run.
pub struct LoadedConfig<C> {
    pub config: C,
    pub manifest: Option<ExperimentManifest>,
}

pub fn load_config<C: DeserializeOwned + Default>(path: Option<&Path>) -> Result<LoadedConfig<C>> {
    let Some(path) = path else {
        return Ok(LoadedConfig {
            config: C::default(),
            manifest: None,
        });
    };
    let value: serde_json::Value = serde_json::from_str(&read_file(path)?)?;
    if value.get("config").is_some() && value.get("name").is_some() {
        let manifest: ExperimentManifest = serde_json::from_value(value)?;
        Ok(LoadedConfig {
            config: serde_json::from_value(manifest.config.clone())?,
            manifest: Some(manifest),
        })
    } else {
        Ok(LoadedConfig {
            config: serde_json::from_value(value)?,
            manifest: None,
        })
    }
}

/// A CSV table of plain text cells under a fixed header.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width differs from header"
        );
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{DESK_SCALE_NOTE}\n{}\n", self.columns.join(","));
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    /// Parse text from [`Table::to_csv`], skipping leading `#` lines.
    pub fn parse(text: &str) -> Result<Table> {
        let mut offset = 0u64;
        let mut lines = text.lines().peekable();
        while let Some(l) = lines.next_if(|l| l.starts_with('#')) {
            offset += l.len() as u64 + 1;
        }
        let header = lines.next().ok_or(Error::Format {
            offset,
            reason: "missing header".into(),
        })?;
        let columns: Vec<String> = header.split(',').map(str::to_string).collect();
        offset += header.len() as u64 + 1;
        let mut rows = Vec::new();
        for line in lines {
            let row: Vec<String> = line.split(',').map(str::to_string).collect();
            if row.len() != columns.len() {
                return Err(Error::Format {
                    offset,
                    reason: format!(
                        "{} fields under a {}-column header",
                        row.len(),
                        columns.len()
                    ),
                });
            }
            rows.push(row);
            offset += line.len() as u64 + 1;
        }
        Ok(Table { columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn f64_at(&self, row: usize, name: &str) -> Option<f64> {
        self.rows.get(row)?.get(self.column(name)?)?.parse().ok()
    }
}

/// Shortest text that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_round_trip() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![num(0.1), num(f64::INFINITY)]);
        t.push(vec!["x".into(), num(-2.5e-300)]);
        let back = Table::parse(&t.to_csv()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.f64_at(0, "a"), Some(0.1));
        assert_eq!(back.f64_at(0, "b"), Some(f64::INFINITY));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(matches!(
            Table::parse("a,b\n1,2\n3\n"),
            Err(Error::Format { offset: 8, .. })
        ));
    }
}
