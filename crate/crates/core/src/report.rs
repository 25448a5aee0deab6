//! Table-shaped reports: the representation × header-category grid of
//! accuracy / f1 and the inference applicability table.
//!
//! Every report comes as an aligned text table plus a comma-separated file.
//! Published full-scale values can be attached as reference columns.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::bench::BenchReport;
use crate::encoder::HeaderCategory;
use crate::metrics::MetricsReport;
use crate::splitter::Representation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Binary,
    MultiClass,
}

impl Task {
    pub fn for_classes(n_classes: usize) -> Task {
        if n_classes <= 2 {
            Task::Binary
        } else {
            Task::MultiClass
        }
    }

    pub fn caption(self) -> &'static str {
        match self {
            Task::Binary => "Binary Performance on IoT-23 dataset",
            Task::MultiClass => "Multi-label Performance on IoT-23 dataset",
        }
    }
}

/// Published IoT-23 (accuracy, f1) per grid cell, in grid order.
const BINARY_REFERENCE: [[(f64, f64); 4]; 3] = [
    [(1.00, 0.97), (1.00, 0.96), (1.00, 0.96), (1.00, 0.94)],
    [(1.00, 0.97), (1.00, 0.93), (0.97, 0.96), (0.99, 1.00)],
    [(1.00, 0.96), (0.98, 0.96), (0.98, 0.97), (0.99, 0.95)],
];
const MULTI_REFERENCE: [[(f64, f64); 4]; 3] = [
    [(0.99, 0.96), (0.94, 0.93), (0.84, 0.92), (0.96, 0.92)],
    [(0.93, 0.92), (0.72, 0.85), (0.79, 0.91), (0.91, 0.90)],
    [(0.97, 0.93), (0.98, 0.93), (0.74, 0.80), (0.98, 0.93)],
];

fn grid_index(rep: Representation, cat: HeaderCategory) -> (usize, usize) {
    let r = Representation::ALL.iter().position(|x| *x == rep).unwrap();
    let c = HeaderCategory::ALL.iter().position(|x| *x == cat).unwrap();
    (r, c)
}

/// Published (accuracy, f1) for one cell.
pub fn reference_value(task: Task, rep: Representation, cat: HeaderCategory) -> (f64, f64) {
    let (r, c) = grid_index(rep, cat);
    match task {
        Task::Binary => BINARY_REFERENCE[r][c],
        Task::MultiClass => MULTI_REFERENCE[r][c],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub representation: Representation,
    pub category: HeaderCategory,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReportOutcome {
    pub rows: usize,
    pub missing: Vec<(Representation, HeaderCategory)>,
}

fn grid_rows(results: &[GridCell]) -> (Vec<&GridCell>, Vec<(Representation, HeaderCategory)>) {
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for rep in Representation::ALL {
        for cat in HeaderCategory::ALL {
            match results
                .iter()
                .find(|c| c.representation == rep && c.category == cat)
            {
                Some(c) => rows.push(c),
                None => missing.push((rep, cat)),
            }
        }
    }
    (rows, missing)
}

fn aligned(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(&mut out, header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(
        &mut out,
        &rule.iter().map(String::as_str).collect::<Vec<_>>(),
    );
    for r in rows {
        line(&mut out, &r.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

/// Renders the grid as (text table, csv). Rows follow the fixed
/// ExpS/ExpF/ExpP × category order; absent cells are listed in `missing`.
pub fn render_grid(
    results: &[GridCell],
    reference: Option<Task>,
    preamble: &[(&str, String)],
) -> (String, String, ReportOutcome) {
    let (rows, missing) = grid_rows(results);
    let mut header = vec!["Representation", "Header", "Accuracy", "f1-score"];
    let mut csv_header = vec!["representation", "header", "accuracy", "f1", "samples"];
    if reference.is_some() {
        header.extend(["Ref accuracy", "Ref f1-score"]);
        csv_header.extend(["ref_accuracy", "ref_f1"]);
    }
    let mut table_rows = Vec::new();
    let mut csv = String::new();
    for (k, v) in preamble {
        let _ = writeln!(csv, "# {k}={v}");
    }
    csv.push_str(&csv_header.join(","));
    csv.push('\n');
    let mut last_rep = None;
    for cell in &rows {
        let rep_label = if last_rep == Some(cell.representation) {
            String::new()
        } else {
            cell.representation.tag().to_string()
        };
        last_rep = Some(cell.representation);
        let mut r = vec![
            rep_label,
            cell.category.title().to_string(),
            format!("{:.4}", cell.metrics.accuracy),
            format!("{:.4}", cell.metrics.weighted_f1),
        ];
        let _ = write!(
            csv,
            "{},{},{:.6},{:.6},{}",
            cell.representation.tag(),
            cell.category.name(),
            cell.metrics.accuracy,
            cell.metrics.weighted_f1,
            cell.metrics.total
        );
        if let Some(task) = reference {
            let (a, f) = reference_value(task, cell.representation, cell.category);
            r.push(format!("{a:.2}"));
            r.push(format!("{f:.2}"));
            let _ = write!(csv, ",{a:.2},{f:.2}");
        }
        csv.push('\n');
        table_rows.push(r);
    }
    let mut text = String::new();
    if let Some(task) = reference {
        let _ = writeln!(text, "Reference columns: \"{}\"", task.caption());
    }
    for (k, v) in preamble {
        let _ = writeln!(text, "{k}: {v}");
    }
    if !text.is_empty() {
        text.push('\n');
    }
    text.push_str(&aligned(&header, &table_rows));
    let outcome = ReportOutcome {
        rows: rows.len(),
        missing,
    };
    (text, csv, outcome)
}

/// Writes `<stem>.txt` and `<stem>.csv`. Missing grid cells are logged as
/// warnings; the files are written regardless.
pub fn emit_report(
    results: &[GridCell],
    reference: Option<Task>,
    preamble: &[(&str, String)],
    dir: impl AsRef<Path>,
    stem: &str,
) -> io::Result<ReportOutcome> {
    let (text, csv, outcome) = render_grid(results, reference, preamble);
    if !outcome.missing.is_empty() {
        let cells: Vec<String> = outcome
            .missing
            .iter()
            .map(|(r, c)| format!("{}/{}", r.tag(), c.name()))
            .collect();
        log::warn!("incomplete grid, missing {}", cells.join(" "));
    }
    let dir = dir.as_ref();
    fs::write(dir.join(format!("{stem}.txt")), text)?;
    fs::write(dir.join(format!("{stem}.csv")), csv)?;
    Ok(outcome)
}

/// Published inference applicability rows: model, accuracy, time elapsed,
/// system time, CPU utilization (max 2 cores).
pub const APPLICABILITY_REFERENCE: [(&str, f64, f64, f64, f64); 4] = [
    ("Binary ExpS", 1.00, 2.813, 0.71, 1.171),
    ("Binary ExpF", 1.00, 7.269, 0.82, 0.513),
    ("Binary ExpP", 1.00, 29.626, 2.42, 1.350),
    ("Binary n-BaIoT", 0.99, 22.877, 1.30, 1.238),
];

pub const APPLICABILITY_CAPTION: &str = "Performance applicability for IoT devices";

/// Renders bench results as (text, csv), with the published rows appended
/// to the text table when `with_reference` is set.
pub fn render_bench(
    results: &[(Representation, BenchReport)],
    with_reference: bool,
) -> (String, String) {
    let header = [
        "Model",
        "Accuracy",
        "Time elapsed (sec)",
        "System time (sec)",
        "User time (sec)",
        "CPU utilization",
        "Samples",
        "Min/Max (sec)",
    ];
    let mut rows = Vec::new();
    let mut csv = String::from(
        "representation,accuracy,wall_seconds,wall_min,wall_max,system_seconds,user_seconds,utilization,samples,samples_per_second,repetitions\n",
    );
    for (rep, b) in results {
        rows.push(vec![
            format!("Measured {}", rep.tag()),
            format!("{:.4}", b.accuracy),
            format!("{:.4}", b.wall_test_seconds),
            format!("{:.4}", b.cpu_system_seconds),
            format!("{:.4}", b.cpu_user_seconds),
            format!("{:.3}", b.utilization),
            b.sample_count.to_string(),
            format!("{:.4}/{:.4}", b.wall_min_seconds, b.wall_max_seconds),
        ]);
        let _ = writeln!(
            csv,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.3},{}",
            rep.tag(),
            b.accuracy,
            b.wall_test_seconds,
            b.wall_min_seconds,
            b.wall_max_seconds,
            b.cpu_system_seconds,
            b.cpu_user_seconds,
            b.utilization,
            b.sample_count,
            b.samples_per_second,
            b.repetitions
        );
    }
    if with_reference {
        for (model, acc, wall, sys, util) in APPLICABILITY_REFERENCE {
            rows.push(vec![
                format!("Reference {model}"),
                format!("{acc:.2}"),
                format!("{wall:.3}"),
                format!("{sys:.2}"),
                String::new(),
                format!("{util:.3}"),
                String::new(),
                String::new(),
            ]);
        }
    }
    let mut text = format!("\"{APPLICABILITY_CAPTION}\"\n\n");
    text.push_str(&aligned(&header, &rows));
    (text, csv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{confusion, metrics};

    fn cell(rep: Representation, cat: HeaderCategory) -> GridCell {
        let cm = confusion(&[0, 1, 1, 0], &[0, 1, 0, 0], 2).unwrap();
        GridCell {
            representation: rep,
            category: cat,
            metrics: metrics(&cm).unwrap(),
        }
    }

    fn full_grid() -> Vec<GridCell> {
        let mut v = Vec::new();
        for rep in Representation::ALL {
            for cat in HeaderCategory::ALL {
                v.push(cell(rep, cat));
            }
        }
        v
    }

    #[test]
    fn full_grid_has_twelve_rows() {
        let (text, csv, out) = render_grid(&full_grid(), None, &[]);
        assert_eq!(out.rows, 12);
        assert!(out.missing.is_empty());
        assert_eq!(csv.lines().count(), 13);
        assert_eq!(text.lines().count(), 14);
    }

    #[test]
    fn reference_columns() {
        let (text, csv, _) = render_grid(&full_grid(), Some(Task::Binary), &[]);
        assert!(csv
            .lines()
            .any(|l| l.starts_with("ExpS,all-headers,") && l.ends_with(",1.00,0.97")));
        assert!(text.contains("Binary Performance on IoT-23 dataset"));
        assert_eq!(
            reference_value(
                Task::MultiClass,
                Representation::Session,
                HeaderCategory::AllHeaders
            ),
            (0.99, 0.96)
        );
    }

    #[test]
    fn empty_results_give_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let out = emit_report(&[], None, &[], dir.path(), "grid").unwrap();
        assert_eq!(out.rows, 0);
        assert_eq!(out.missing.len(), 12);
        let csv = fs::read_to_string(dir.path().join("grid.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1);
    }

    #[test]
    fn rows_follow_grid_order() {
        let mut cells = full_grid();
        cells.reverse();
        let (_, csv, _) = render_grid(&cells, None, &[]);
        let first = csv.lines().nth(1).unwrap();
        assert!(first.starts_with("ExpS,all-headers"));
        let last = csv.lines().last().unwrap();
        assert!(last.starts_with("ExpP,no-headers"));
    }
}
