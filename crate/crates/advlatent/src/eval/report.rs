//! Report bundles and their on-disk artifacts.
//!
//! A bundle is the complete output of one experiment run: a rectangular
//! table of pre-formatted cells, plotting payloads, and a manifest that
//! records every hyperparameter the run used, defaults included. Rows are
//! strings the moment they enter the bundle, so any re-export is
//! byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::experiments::Template;
use super::plot::{bar_chart, line_chart, Series};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(Error::validation(format!(
                "unknown export format {other:?}, expected csv|json"
            ))),
        }
    }
}

/// Everything one experiment run produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportBundle {
    pub template: Template,
    /// Column names; the last two are always `status` and `note`.
    pub columns: Vec<String>,
    /// Pre-formatted cells, one row per experiment cell.
    pub rows: Vec<Vec<String>>,
    /// Cells that failed and were quarantined.
    pub incomplete: usize,
    /// Line-plot payload (x = budget, y = rate), empty when not applicable.
    pub lines: Vec<Series>,
    pub lines_y_label: String,
    /// Grouped-bar payload, empty when not applicable.
    pub bars: Vec<(String, Vec<(String, f64)>)>,
    pub bars_y_label: String,
    /// Every hyperparameter the run used, defaults included.
    pub manifest: serde_json::Value,
}

impl ReportBundle {
    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::validation("empty bundle, nothing to export".to_string()));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.columns.len() {
                return Err(Error::validation(format!(
                    "row {i} has {} cells for {} columns",
                    row.len(),
                    self.columns.len()
                )));
            }
        }
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Write the bundle's table and manifest under `dir`. Returns the files
/// written. The same bundle always produces byte-identical artifacts.
pub fn export_results(bundle: &ReportBundle, format: ExportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    bundle.validate()?;
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let table = match format {
        ExportFormat::Csv => {
            let mut out = String::new();
            let _ = writeln!(
                out,
                "{}",
                bundle.columns.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(",")
            );
            for row in &bundle.rows {
                let _ = writeln!(
                    out,
                    "{}",
                    row.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(",")
                );
            }
            let path = dir.join("results.csv");
            fs::write(&path, out)?;
            path
        }
        ExportFormat::Json => {
            let rows: Vec<serde_json::Value> = bundle
                .rows
                .iter()
                .map(|row| {
                    bundle
                        .columns
                        .iter()
                        .zip(row)
                        .map(|(c, v)| (c.clone(), serde_json::Value::String(v.clone())))
                        .collect::<serde_json::Map<_, _>>()
                        .into()
                })
                .collect();
            let path = dir.join("results.json");
            fs::write(&path, serde_json::to_string_pretty(&rows)?)?;
            path
        }
    };
    written.push(table);

    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&bundle.manifest)?)?;
    written.push(manifest_path);
    Ok(written)
}

/// Render the bundle's charts under `dir`. Returns the files written;
/// bundles with no plottable payload produce none.
pub fn emit_plots(bundle: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    bundle.validate()?;
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let title = format!("{}", bundle.template);
    if !bundle.lines.is_empty() {
        let svg = line_chart(&title, "epsilon", &bundle.lines_y_label, &bundle.lines)?;
        let path = dir.join("curves.svg");
        fs::write(&path, svg)?;
        written.push(path);
    }
    if !bundle.bars.is_empty() {
        let svg = bar_chart(&title, &bundle.bars_y_label, &bundle.bars)?;
        let path = dir.join("bars.svg");
        fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}
