//! Deterministic numeric formatting and CSV emission.
//!
//! All floating-point output goes through [`fmt_f64`] (17 significant
//! digits), so repeated runs with the same seed produce byte-identical
//! files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};

/// Fixed-width scientific representation with 17 significant digits, the
/// shortest form that round-trips every f64.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// A comma-delimited writer with a mandatory header row.
pub struct CsvWriter {
    out: BufWriter<File>,
    columns: usize,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = File::create(path)
            .with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{}", header.join(","))?;
        Ok(Self {
            out,
            columns: header.len(),
        })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        debug_assert_eq!(fields.len(), self.columns);
        writeln!(self.out, "{}", fields.join(","))?;
        Ok(())
    }

    pub fn row_f64(&mut self, values: &[f64]) -> Result<()> {
        let fields: Vec<String> = values.iter().map(|&v| fmt_f64(v)).collect();
        self.row(&fields)
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}
