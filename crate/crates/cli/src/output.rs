//! CSV tables and run summaries.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

/// 17 significant digits, `.` decimal separator.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Table { header: header.iter().map(|h| h.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_to(&self, sink: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes to `path`, or to standard output when there is none.
    pub fn write(&self, path: Option<&Path>) -> Result<()> {
        match path {
            Some(p) => {
                let f = std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
                self.write_to(std::io::BufWriter::new(f))
            }
            None => self.write_to(std::io::stdout().lock()),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub command: String,
    pub parameters: Value,
    pub pass: Option<bool>,
    pub max_violation: Option<f64>,
    pub observed_order: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub results: Option<Value>,
    #[serde(skip)]
    pub text: String,
}

impl Summary {
    /// Goes to standard output when the CSV went to a file, else to standard error.
    pub fn emit(&self, json: bool, csv_on_stdout: bool) -> Result<()> {
        let line = if json { serde_json::to_string(self)? } else { self.text.clone() };
        if csv_on_stdout {
            eprintln!("{line}");
        } else {
            println!("{line}");
        }
        Ok(())
    }
}
