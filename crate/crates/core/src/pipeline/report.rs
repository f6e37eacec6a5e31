//! Merge per-category result tables and append the `Mean` row.

use std::path::Path;

use super::eval::{csv_error, write_csv};
use crate::metrics::CSV_COLUMNS;
use crate::{Error, Result};

/// One table row: category name and the eight ×100 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub category: String,
    pub values: [f64; 8],
}

pub fn read_rows(path: &Path) -> Result<Vec<Row>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    let expected: Vec<&str> = std::iter::once("Category").chain(CSV_COLUMNS).collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Input(format!("{}: unexpected header {:?}", path.display(), header)));
    }
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let mut values = [0.0; 8];
        for (i, v) in values.iter_mut().enumerate() {
            *v = record[i + 1]
                .trim()
                .parse()
                .map_err(|_| Error::Input(format!("{}: bad number `{}`", path.display(), &record[i + 1])))?;
        }
        rows.push(Row {
            category: record[0].to_string(),
            values,
        });
    }
    Ok(rows)
}

/// Rows of all inputs, in order, with existing `Mean` rows dropped and a
/// fresh column-wise `Mean` appended.
pub fn merge(inputs: &[&Path]) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for path in inputs {
        rows.extend(read_rows(path)?.into_iter().filter(|r| r.category != "Mean"));
    }
    if rows.is_empty() {
        return Err(Error::Input("no rows to merge".into()));
    }
    let n = rows.len() as f64;
    let mut mean = [0.0; 8];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r.values) {
            *m += v / n;
        }
    }
    rows.push(Row {
        category: "Mean".into(),
        values: mean,
    });
    Ok(rows)
}

pub fn write_merged(out: &Path, rows: &[Row]) -> Result<()> {
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| std::iter::once(r.category.clone()).chain(r.values.iter().map(|v| format!("{v:.1}"))).collect())
        .collect();
    write_csv(out, &table)
}
