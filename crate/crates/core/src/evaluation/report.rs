use std::path::Path;

use super::{EvalError, MetricsRow, MetricsTable, WindowPrediction};

pub const REPORT_HEADER: [&str; 6] = ["dataset", "method", "horizon_s", "ade_m", "rmse_m", "n_windows"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(e: csv::Error) -> EvalError {
    EvalError::Parse {
        line: e.position().map(|p| p.line() as usize).unwrap_or(0),
        message: e.to_string(),
    }
}

/// One line per row; floats in shortest round-trip form.
pub fn format_csv(table: &MetricsTable) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_HEADER).map_err(csv_err)?;
    for r in &table.rows {
        w.write_record([
            r.dataset.clone(),
            r.method.clone(),
            r.horizon_s.to_string(),
            r.ade_m.to_string(),
            r.rmse_m.to_string(),
            r.n_windows.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_csv(text: &str) -> Result<MetricsTable, EvalError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?;
    if header.iter().ne(REPORT_HEADER) {
        return Err(EvalError::Parse {
            line: 1,
            message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        let num = |j: usize| -> Result<f64, EvalError> {
            rec[j].parse().map_err(|_| EvalError::Parse {
                line,
                message: format!("bad {} value {:?}", REPORT_HEADER[j], &rec[j]),
            })
        };
        rows.push(MetricsRow {
            dataset: rec[0].to_string(),
            method: rec[1].to_string(),
            horizon_s: num(2)?,
            ade_m: num(3)?,
            rmse_m: num(4)?,
            n_windows: rec[5].parse().map_err(|_| EvalError::Parse {
                line,
                message: format!("bad n_windows {:?}", &rec[5]),
            })?,
        });
    }
    Ok(MetricsTable { rows })
}

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for s in items {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Horizons as rows, one `ade/rmse` column per (dataset, method).
pub fn format_markdown(table: &MetricsTable) -> String {
    let datasets = first_seen(table.rows.iter().map(|r| r.dataset.as_str()));
    let methods = first_seen(table.rows.iter().map(|r| r.method.as_str()));
    let mut horizons: Vec<f64> = Vec::new();
    for r in &table.rows {
        if !horizons.contains(&r.horizon_s) {
            horizons.push(r.horizon_s);
        }
    }
    let columns: Vec<(&str, &str)> = datasets.iter().flat_map(|d| methods.iter().map(move |m| (*d, *m))).collect();
    let mut out = String::from("| horizon (s) |");
    for (d, m) in &columns {
        out.push_str(&format!(" {d} {m} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(columns.len()));
    out.push('\n');
    for h in &horizons {
        out.push_str(&format!("| {h} |"));
        for (d, m) in &columns {
            match table.get(d, m, *h) {
                Some(r) => out.push_str(&format!(" {:.2}/{:.2} |", r.ade_m, r.rmse_m)),
                None => out.push_str(" n/a |"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn emit_report(table: &MetricsTable, format: ReportFormat, path: &Path) -> Result<(), EvalError> {
    if table.rows.is_empty() {
        return Err(EvalError::Empty);
    }
    let text = match format {
        ReportFormat::Csv => format_csv(table)?,
        ReportFormat::Markdown => format_markdown(table),
    };
    std::fs::write(path, text).map_err(io_err(path))
}

/// Per-step predicted and ground-truth positions for external plotting.
pub fn write_predictions_csv(path: &Path, method: &str, predictions: &[WindowPrediction]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => io_err(path)(io),
        other => EvalError::Config(format!("{other:?}")),
    })?;
    w.write_record(["method", "scene_id", "ego_id", "start_index", "step", "pred_x_m", "pred_y_m", "gt_x_m", "gt_y_m"])
        .map_err(csv_err)?;
    for p in predictions {
        for (k, (a, b)) in p.predicted.iter().zip(&p.truth).enumerate() {
            w.write_record([
                method.to_string(),
                p.scene_id.clone(),
                p.ego_id.clone(),
                p.start_index.to_string(),
                (k + 1).to_string(),
                a[0].to_string(),
                a[1].to_string(),
                b[0].to_string(),
                b[1].to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(io_err(path))
}
