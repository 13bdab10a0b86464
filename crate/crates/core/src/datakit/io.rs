use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::{regular_timestamps, TrafficWindow};
use crate::numcore::Array;
use crate::{Error, Result};

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub interval_minutes: u32,
    /// ISO-8601 timestamp of the first row; a missing offset means UTC.
    pub start_timestamp: String,
}

impl Meta {
    pub fn start_epoch(&self) -> Result<i64> {
        parse_timestamp(&self.start_timestamp)
    }
}

pub(crate) fn parse_timestamp(s: &str) -> Result<i64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    Err(Error::Data(format!("unparseable start_timestamp `{s}`")))
}

pub(crate) fn format_timestamp(epoch: i64) -> String {
    DateTime::<Utc>::from_timestamp(epoch, 0)
        .map(|d| d.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_default()
}

pub fn read_meta(path: &Path) -> Result<Meta> {
    let meta: Meta = serde_json::from_str(&fs::read_to_string(path)?)?;
    if meta.interval_minutes == 0 {
        return Err(Error::Data("interval_minutes must be positive".into()));
    }
    meta.start_epoch()?;
    Ok(meta)
}

/// Reads a headed CSV into (header, rows of optional cells).
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<Option<f64>>>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if record.len() != header.len() {
            return Err(Error::Data(format!(
                "{}: row {} has {} cells, header has {}",
                path.display(),
                r + 1,
                record.len(),
                header.len()
            )));
        }
        let cells = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                let cell = cell.trim();
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>().map(Some).map_err(|_| {
                        Error::Data(format!("{}: non-numeric cell `{cell}` at row {}, column {}", path.display(), r + 1, c + 1))
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(cells);
    }
    if rows.is_empty() || header.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    Ok((header, rows))
}

/// Reads a 0/1 mask CSV with a header row into a `T×N` array.
pub fn read_mask_csv(path: &Path) -> Result<Array> {
    let (header, rows) = read_table(path)?;
    let (t, n) = (rows.len(), header.len());
    let mut data = Vec::with_capacity(t * n);
    for row in rows {
        for cell in row {
            match cell {
                Some(v) if v == 0.0 || v == 1.0 => data.push(v),
                _ => return Err(Error::Data(format!("{}: mask cells must be 0 or 1", path.display()))),
            }
        }
    }
    Ok(Array::new(vec![t, n], data)?)
}

/// Loads values (empty cell = missing), an optional explicit mask and the
/// metadata into a window.
pub fn load_dataset(values_csv: &Path, mask_csv: Option<&Path>, meta_json: &Path) -> Result<TrafficWindow> {
    let meta = read_meta(meta_json)?;
    let (header, rows) = read_table(values_csv)?;
    let (t, n) = (rows.len(), header.len());
    let mut values = Vec::with_capacity(t * n);
    let mut implied = Vec::with_capacity(t * n);
    for row in &rows {
        for cell in row {
            values.push(cell.unwrap_or(0.0));
            implied.push(if cell.is_some() { 1.0 } else { 0.0 });
        }
    }
    let mask = match mask_csv {
        Some(p) => {
            let m = read_mask_csv(p)?;
            if m.shape() != [t, n] {
                return Err(Error::Data(format!("mask shape {:?} differs from values {t}×{n}", m.shape())));
            }
            if m.data().iter().zip(&implied).any(|(&m, &i)| m == 1.0 && i == 0.0) {
                return Err(Error::Data("mask marks an empty value cell as observed".into()));
            }
            m
        }
        None => Array::new(vec![t, n], implied)?,
    };
    let timestamps = regular_timestamps(meta.start_epoch()?, meta.interval_minutes, t);
    TrafficWindow::new(Array::new(vec![t, n, 1], values)?, mask, timestamps, meta.interval_minutes, header)
}

/// Loads `values.csv`, `meta.json` and, when present, `mask.csv` from `dir`.
pub fn load_dir(dir: &Path) -> Result<TrafficWindow> {
    let mask = dir.join("mask.csv");
    load_dataset(
        &dir.join("values.csv"),
        mask.exists().then_some(mask.as_path()),
        &dir.join("meta.json"),
    )
}

fn fmt_value(v: f64) -> String {
    format!("{v}")
}

/// Writes a `T×N` array as CSV under `header`. Cells where `keep` is false are left empty.
fn write_table(path: &Path, header: &[String], data: &Array, keep: Option<&Array>, as_int: bool) -> Result<()> {
    let n = header.len();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    let mut row = Vec::with_capacity(n);
    for (t, chunk) in data.data().chunks(n).enumerate() {
        row.clear();
        for (i, &v) in chunk.iter().enumerate() {
            let visible = keep.is_none_or(|k| k.data()[t * n + i] == 1.0);
            row.push(match (visible, as_int) {
                (false, _) => String::new(),
                (true, true) => format!("{}", v as i64),
                (true, false) => fmt_value(v),
            });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes values with empty cells wherever `mask` is 0 (when given).
pub fn write_values_csv(path: &Path, header: &[String], values: &Array, mask: Option<&Array>) -> Result<()> {
    let n = header.len();
    let flat = values.reshape(&[values.len() / n.max(1), n])?;
    write_table(path, header, &flat, mask, false)
}

pub fn write_mask_csv(path: &Path, header: &[String], mask: &Array) -> Result<()> {
    write_table(path, header, mask, None, true)
}

pub fn write_dist_csv(path: &Path, dist: &Array) -> Result<()> {
    let n = dist.shape()[0];
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..n {
        w.write_record(dist.row(i).iter().map(|&v| fmt_value(v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a headerless `N×N` distance matrix.
pub fn read_dist_csv(path: &Path) -> Result<Array> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut data = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        for cell in record.iter() {
            data.push(
                cell.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("{}: non-numeric distance `{cell}`", path.display())))?,
            );
        }
        rows += 1;
    }
    if rows * rows != data.len() {
        return Err(Error::Data(format!("{}: distance matrix is not square", path.display())));
    }
    Ok(Array::new(vec![rows, rows], data)?)
}

/// Writes `values.csv` (missing cells empty), `mask.csv` and `meta.json`.
pub fn save_dataset(w: &TrafficWindow, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_values_csv(&dir.join("values.csv"), &w.node_ids, &w.values, Some(&w.mask))?;
    write_mask_csv(&dir.join("mask.csv"), &w.node_ids, &w.mask)?;
    let meta = Meta {
        interval_minutes: w.interval_minutes,
        start_timestamp: format_timestamp(w.timestamps[0]),
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}
