use std::collections::BTreeMap;
use std::fmt::Write;

use super::experiment::MetricReport;
use crate::error::{Error, Result};

/// Serializes reports as one JSON object per line.
pub fn reports_to_records(reports: &[MetricReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r).expect("report serializes"));
        out.push('\n');
    }
    out
}

/// Parses line-delimited report records; blank lines are skipped.
pub fn parse_records(text: &str) -> Result<Vec<MetricReport>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                what: "record file",
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Aligned comparison table: one row per variant and task combination,
/// variants ordered STL, MTL, MTL-TAI, MTL-TE, with one `mean ± half-width`
/// column per task.
pub fn format_table(reports: &[MetricReport]) -> String {
    if reports.is_empty() {
        return "no records\n".to_string();
    }
    let mut columns: Vec<(String, String)> = Vec::new();
    for r in reports {
        for s in &r.scores {
            if !columns.iter().any(|(t, _)| *t == s.task) {
                columns.push((s.task.clone(), s.metric.clone()));
            }
        }
    }
    let mut rows: BTreeMap<(crate::models::Variant, Vec<String>, String), Vec<String>> =
        BTreeMap::new();
    for r in reports {
        let cells = rows
            .entry((r.variant, r.tasks.clone(), r.mode.clone()))
            .or_insert_with(|| vec!["-".to_string(); columns.len()]);
        for s in &r.scores {
            let c = columns
                .iter()
                .position(|(t, _)| *t == s.task)
                .expect("column exists");
            cells[c] = format!("{:.3} ± {:.3}", s.mean, s.half_width);
        }
    }
    let mut header = vec![
        "Model".to_string(),
        "Task Heads".to_string(),
        "Mode".to_string(),
    ];
    header.extend(columns.iter().map(|(t, m)| format!("{t} ({m})")));
    let mut table: Vec<Vec<String>> = vec![header];
    for ((variant, tasks, mode), cells) in rows {
        let mut row = vec![variant.label().to_string(), tasks.join("+"), mode];
        row.extend(cells);
        table.push(row);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| {
            table
                .iter()
                .map(|r| r[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            let _ = writeln!(out, "{}", rule.join("  "));
        }
    }
    out
}
