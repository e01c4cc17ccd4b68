//! Per-step metrics and their CSV form.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};

pub const BASE_COLUMNS: [&str; 6] = ["step", "epoch", "split", "loss", "acc", "wall_ms"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub step: usize,
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub acc: f64,
    pub wall_ms: f64,
    /// Largest Newton–Schulz residual of each deconvolution layer; empty for
    /// evaluation rows.
    pub layer_diag: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub diag_columns: usize,
    pub rows: Vec<RecordRow>,
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Test => "test",
    }
}

pub fn csv_header(diag_columns: usize) -> String {
    let mut cols: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
    cols.extend((0..diag_columns).map(|i| format!("layer_diag_{i}")));
    cols.join(",")
}

impl RecordRow {
    pub fn csv_line(&self, diag_columns: usize) -> String {
        let mut line = format!(
            "{},{},{},{},{},{}",
            self.step,
            self.epoch,
            split_name(self.split),
            self.loss,
            self.acc,
            self.wall_ms
        );
        for i in 0..diag_columns {
            line.push(',');
            if let Some(v) = self.layer_diag.get(i) {
                line.push_str(&v.to_string());
            }
        }
        line
    }
}

impl RunRecord {
    pub fn new(diag_columns: usize) -> Self {
        RunRecord {
            diag_columns,
            rows: Vec::new(),
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &RecordRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn last(&self, split: Split) -> Option<&RecordRow> {
        self.split(split).last()
    }

    /// Equality with the wall-clock column ignored.
    pub fn same_metrics(&self, other: &RunRecord) -> bool {
        self.diag_columns == other.diag_columns
            && self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                RecordRow {
                    wall_ms: 0.0,
                    ..a.clone()
                } == RecordRow {
                    wall_ms: 0.0,
                    ..b.clone()
                }
            })
    }

    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", csv_header(self.diag_columns))?;
        for r in &self.rows {
            writeln!(out, "{}", r.csv_line(self.diag_columns))?;
        }
        Ok(())
    }

    /// Parse CSV text written by [`RunRecord::write_csv`], checking the schema
    /// and that steps increase within each split. Leading `#` lines are
    /// treated as comments.
    pub fn parse_csv(text: &str) -> Result<RunRecord> {
        let mut lines = text.lines().peekable();
        let mut offset = 0u64;
        while let Some(line) = lines.next_if(|l| l.starts_with('#')) {
            offset += line.len() as u64 + 1;
        }
        let header = lines
            .next()
            .ok_or_else(|| Error::format(offset, "empty run record"))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < BASE_COLUMNS.len() || cols[..BASE_COLUMNS.len()] != BASE_COLUMNS {
            return Err(Error::format(
                offset,
                format!("unexpected header {header:?}"),
            ));
        }
        let diag_columns = cols.len() - BASE_COLUMNS.len();
        for (i, c) in cols[BASE_COLUMNS.len()..].iter().enumerate() {
            if *c != format!("layer_diag_{i}") {
                return Err(Error::format(offset, format!("unexpected column {c:?}")));
            }
        }
        let mut record = RunRecord::new(diag_columns);
        offset += header.len() as u64 + 1;
        let mut last_step = [None::<usize>; 2];
        for line in lines {
            let bad = |what: &str| Error::format(offset, format!("{what} in {line:?}"));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(bad("wrong field count"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
            let split = match f[2] {
                "train" => Split::Train,
                "test" => Split::Test,
                _ => return Err(bad("bad split")),
            };
            let step = int(f[0])?;
            let slot = &mut last_step[split as usize];
            if slot.is_some_and(|prev| step <= prev) {
                return Err(bad("non-increasing step"));
            }
            *slot = Some(step);
            let layer_diag = f[BASE_COLUMNS.len()..]
                .iter()
                .filter(|s| !s.is_empty())
                .map(|s| num(s))
                .collect::<Result<_>>()?;
            record.rows.push(RecordRow {
                step,
                epoch: int(f[1])?,
                split,
                loss: num(f[3])?,
                acc: num(f[4])?,
                wall_ms: num(f[5])?,
                layer_diag,
            });
            offset += line.len() as u64 + 1;
        }
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut r = RunRecord::new(2);
        r.rows.push(RecordRow {
            step: 1,
            epoch: 1,
            split: Split::Train,
            loss: 2.5,
            acc: 0.125,
            wall_ms: 3.0,
            layer_diag: vec![1e-3, 2e-7],
        });
        r.rows.push(RecordRow {
            step: 1,
            epoch: 1,
            split: Split::Test,
            loss: 2.0,
            acc: 0.25,
            wall_ms: 4.0,
            layer_diag: vec![],
        });
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,epoch,split,loss,acc,wall_ms,layer_diag_0,layer_diag_1\n"));
        assert_eq!(RunRecord::parse_csv(&text).unwrap(), r);
    }

    #[test]
    fn parse_rejects_repeated_steps() {
        let text = "step,epoch,split,loss,acc,wall_ms\n2,1,train,1,0,0\n2,1,train,1,0,0\n";
        assert!(matches!(
            RunRecord::parse_csv(text),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn leading_comments_are_skipped() {
        let text = "# note\nstep,epoch,split,loss,acc,wall_ms\n1,1,train,1,0,0\n1,x,train,1,0,0\n";
        match RunRecord::parse_csv(text) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 57),
            other => panic!("{other:?}"),
        }
    }
}
