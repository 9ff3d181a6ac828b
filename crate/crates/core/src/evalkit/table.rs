use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{confusion_normalized, EvalReport};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(Error::config(format!(
                "unknown table format {other:?}; valid values: csv, markdown"
            ))),
        }
    }
}

/// One table line; rows without a report (for example runs that never
/// finished an epoch) print dashes.
#[derive(Clone, Debug)]
pub struct TableRow<'a> {
    pub label: String,
    pub report: Option<&'a EvalReport>,
}

fn fmt2(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.2}"),
        _ => "-".to_string(),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Per-class accuracies followed by macro and micro columns.
pub fn emit_table(rows: &[TableRow<'_>], format: TableFormat) -> Result<String> {
    let reports: Vec<&EvalReport> = rows.iter().filter_map(|r| r.report).collect();
    let classes = match reports.first() {
        Some(r) => r.class_names.clone(),
        None => return Err(Error::config("no reports to tabulate")),
    };
    if let Some(bad) = reports.iter().find(|r| r.class_names != classes) {
        return Err(Error::config(format!(
            "reports disagree on classes: {:?} vs {:?}",
            classes, bad.class_names
        )));
    }
    let mut header: Vec<String> = vec!["method".into()];
    header.extend(classes.iter().cloned());
    header.push("macro".into());
    header.push("micro".into());
    let values: Vec<Vec<Option<f64>>> = rows
        .iter()
        .map(|r| match r.report {
            Some(rep) => {
                let mut v = rep.per_class_top1.clone();
                v.push(Some(rep.macro_mean));
                v.push(Some(rep.micro_accuracy));
                v
            }
            None => vec![None; classes.len() + 2],
        })
        .collect();
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            let h: Vec<String> = header.iter().map(|s| csv_field(s)).collect();
            writeln!(out, "{}", h.join(",")).unwrap();
            for (r, v) in rows.iter().zip(&values) {
                let mut cells = vec![csv_field(&r.label)];
                cells.extend(v.iter().map(|&x| fmt2(x)));
                writeln!(out, "{}", cells.join(",")).unwrap();
            }
        }
        TableFormat::Markdown => {
            let ncol = classes.len() + 2;
            let best: Vec<Option<String>> = (0..ncol)
                .map(|c| {
                    values
                        .iter()
                        .filter_map(|v| v[c])
                        .filter(|x| x.is_finite())
                        .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
                        .map(|b| fmt2(Some(b)))
                })
                .collect();
            writeln!(out, "| {} |", header.join(" | ")).unwrap();
            writeln!(out, "|{}", ["---|"].repeat(header.len()).concat()).unwrap();
            for (r, v) in rows.iter().zip(&values) {
                let mut cells = vec![r.label.replace('|', "\\|")];
                for (c, &x) in v.iter().enumerate() {
                    let s = fmt2(x);
                    if rows.len() > 1 && x.is_some() && best[c].as_deref() == Some(s.as_str()) {
                        cells.push(format!("**{s}**"));
                    } else {
                        cells.push(s);
                    }
                }
                writeln!(out, "| {} |", cells.join(" | ")).unwrap();
            }
        }
    }
    Ok(out)
}

/// Confusion counts followed by row-normalized percentages.
pub fn confusion_csv(report: &EvalReport) -> String {
    let mut out = String::new();
    let names: Vec<String> = report.class_names.iter().map(|s| csv_field(s)).collect();
    writeln!(out, "kind,true,{}", names.join(",")).unwrap();
    for (name, row) in names.iter().zip(&report.confusion) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "count,{name},{}", cells.join(",")).unwrap();
    }
    let norm = confusion_normalized(report);
    for (name, row) in names.iter().zip(&norm.matrix) {
        let cells: Vec<String> = row.iter().map(|&v| fmt2(Some(100.0 * v))).collect();
        writeln!(out, "percent,{name},{}", cells.join(",")).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(classes: &[&str], labels: &[usize], preds: &[usize]) -> EvalReport {
        let names = classes.iter().map(|s| s.to_string()).collect();
        EvalReport::from_predictions(names, labels, preds).unwrap()
    }

    #[test]
    fn csv_layout() {
        let a = report(&["x", "y"], &[0, 0, 0, 1], &[0, 0, 0, 0]);
        let t = emit_table(
            &[TableRow {
                label: "ft".into(),
                report: Some(&a),
            }],
            TableFormat::Csv,
        )
        .unwrap();
        assert_eq!(t, "method,x,y,macro,micro\nft,100.00,0.00,50.00,75.00\n");
    }

    #[test]
    fn markdown_bolds_column_best() {
        let a = report(&["x", "y"], &[0, 1], &[0, 0]);
        let b = report(&["x", "y"], &[0, 1], &[1, 1]);
        let t = emit_table(
            &[
                TableRow {
                    label: "a".into(),
                    report: Some(&a),
                },
                TableRow {
                    label: "b".into(),
                    report: Some(&b),
                },
            ],
            TableFormat::Markdown,
        )
        .unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "| method | x | y | macro | micro |");
        assert_eq!(lines[2], "| a | **100.00** | 0.00 | **50.00** | **50.00** |");
        assert_eq!(lines[3], "| b | 0.00 | **100.00** | **50.00** | **50.00** |");
    }

    #[test]
    fn single_row_has_no_bold() {
        let a = report(&["x", "y"], &[0, 1], &[0, 1]);
        let t = emit_table(
            &[TableRow {
                label: "a".into(),
                report: Some(&a),
            }],
            TableFormat::Markdown,
        )
        .unwrap();
        assert!(!t.contains("**"));
    }

    #[test]
    fn mismatched_classes_rejected() {
        let a = report(&["x", "y"], &[0], &[0]);
        let b = report(&["x", "z"], &[0], &[0]);
        let rows = [
            TableRow {
                label: "a".into(),
                report: Some(&a),
            },
            TableRow {
                label: "b".into(),
                report: Some(&b),
            },
        ];
        assert!(matches!(emit_table(&rows, TableFormat::Csv), Err(Error::Config(_))));
    }

    #[test]
    fn missing_report_prints_dashes() {
        let a = report(&["x", "y"], &[0], &[0]);
        let rows = [
            TableRow {
                label: "a".into(),
                report: Some(&a),
            },
            TableRow {
                label: "dead".into(),
                report: None,
            },
        ];
        let t = emit_table(&rows, TableFormat::Csv).unwrap();
        assert!(t.ends_with("dead,-,-,-,-\n"));
    }

    #[test]
    fn confusion_file() {
        let a = report(&["x", "y"], &[0, 0, 1, 1], &[0, 1, 1, 1]);
        let c = confusion_csv(&a);
        assert_eq!(
            c,
            "kind,true,x,y\ncount,x,1,1\ncount,y,0,2\npercent,x,50.00,50.00\npercent,y,0.00,100.00\n"
        );
    }
}
