//! Cross-run comparison tables.

use std::path::{Path, PathBuf};

use udakit::evalkit::{emit_table, TableFormat, TableRow};
use udakit::trainer::{RunManifest, RunStatus};
use udakit::Result;

/// A run directory that could not be included.
#[derive(Clone, Debug, PartialEq)]
pub struct Skipped {
    pub dir: PathBuf,
    pub reason: String,
}

pub struct Report {
    pub table: String,
    pub rows: usize,
    pub skipped: Vec<Skipped>,
}

fn row_label(m: &RunManifest) -> String {
    match m.status {
        RunStatus::Completed => m.method_label.clone(),
        other => format!("{} [{}]", m.method_label, other.as_str()),
    }
}

/// Target-domain metrics of each run's best epoch, one row per run,
/// ordered by method label and then by directory.
pub fn build_report(dirs: &[PathBuf], format: TableFormat) -> Result<Report> {
    let mut runs: Vec<(String, &Path, RunManifest)> = Vec::new();
    let mut skipped = Vec::new();
    for dir in dirs {
        match RunManifest::read(dir) {
            Ok(m) => runs.push((m.method_label.clone(), dir.as_path(), m)),
            Err(e) => skipped.push(Skipped {
                dir: dir.clone(),
                reason: e.to_string(),
            }),
        }
    }
    runs.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    let rows: Vec<TableRow<'_>> = runs
        .iter()
        .map(|(_, _, m)| TableRow {
            label: row_label(m),
            report: m.best_reports.get("target").or_else(|| m.final_reports.get("target")),
        })
        .collect();
    let table = emit_table(&rows, format)?;
    Ok(Report {
        table,
        rows: rows.len(),
        skipped,
    })
}
