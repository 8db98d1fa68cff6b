//! Plain-text and TSV tables of metrics reports.

use super::metrics::MetricsReport;

/// One table row: a label (event name, task or "aggregate") and its report.
pub struct ReportRow<'a> {
    pub label: String,
    pub report: &'a MetricsReport,
}

fn header(columns: &[String]) -> Vec<String> {
    let mut h = vec!["Run".to_string(), "Accuracy".to_string(), "Macro-F1".to_string()];
    h.extend(columns.iter().cloned());
    h
}

fn cells(row: &ReportRow<'_>) -> Vec<String> {
    let mut c = vec![
        row.label.clone(),
        format!("{:.3}", row.report.accuracy),
        format!("{:.3}", row.report.macro_f1),
    ];
    c.extend(row.report.per_class.iter().map(|m| format!("{:.3}", m.f1)));
    c
}

/// Tab-separated table: Run, Accuracy, Macro-F1, then per-class F1 in class
/// index order under the given column names.
pub fn render_tsv(rows: &[ReportRow<'_>], columns: &[String]) -> String {
    let mut out = header(columns).join("\t");
    out.push('\n');
    for row in rows {
        out.push_str(&cells(row).join("\t"));
        out.push('\n');
    }
    out
}

/// Same table with space-aligned columns.
pub fn render_text(rows: &[ReportRow<'_>], columns: &[String]) -> String {
    let mut table = vec![header(columns)];
    table.extend(rows.iter().map(cells));
    let n = table.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..n)
        .map(|i| table.iter().filter_map(|r| r.get(i)).map(|c| c.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &table {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
