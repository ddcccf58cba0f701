use std::collections::BTreeSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{ColumnKind, SurvivalDataset};
use crate::error::{Error, Result};
use crate::format::num;

const MISSING: [&str; 5] = ["", "na", "nan", "?", "null"];

fn is_missing(cell: &str) -> bool {
    MISSING.contains(&cell.trim().to_ascii_lowercase().as_str())
}

fn parse_err(msg: String) -> Error {
    Error::Parse(msg)
}

pub fn load_csv(path: impl AsRef<Path>, time_column: &str, event_column: &str) -> Result<SurvivalDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
        _ => parse_err(format!("{}: {e}", path.display())),
    })?;
    parse_csv(file, time_column, event_column)
        .map_err(|e| match e {
            Error::Parse(m) => parse_err(format!("{}: {m}", path.display())),
            other => other,
        })
}

/// Parses comma-delimited text with a header row. Numeric columns stay as
/// they are; any column with a non-numeric cell is one-hot encoded with its
/// lexicographically first level dropped. Line numbers in errors count the
/// header as line 1.
pub fn parse_csv<R: Read>(reader: R, time_column: &str, event_column: &str) -> Result<SurvivalDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(format!("header: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(format!("column `{name}` not found in header {header:?}")))
    };
    let time_idx = find(time_column)?;
    let event_idx = find(event_column)?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(format!("line {}: {e}", k + 2)))?;
        if rec.len() != header.len() {
            return Err(parse_err(format!(
                "line {}: expected {} fields, found {}",
                k + 2,
                header.len(),
                rec.len()
            )));
        }
        rows.push(rec.iter().map(str::to_owned).collect());
    }

    let missing: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.iter().any(|c| is_missing(c)))
        .map(|(k, _)| k + 2)
        .collect();
    if !missing.is_empty() {
        let shown: Vec<String> = missing.iter().take(20).map(|l| l.to_string()).collect();
        return Err(parse_err(format!(
            "{} rows have missing values (lines {}{})",
            missing.len(),
            shown.join(", "),
            if missing.len() > 20 { ", ..." } else { "" }
        )));
    }

    let mut times = Vec::with_capacity(rows.len());
    let mut events = Vec::with_capacity(rows.len());
    for (k, r) in rows.iter().enumerate() {
        let line = k + 2;
        let t: f64 = r[time_idx]
            .parse()
            .map_err(|_| parse_err(format!("line {line}: time `{}` is not a number", r[time_idx])))?;
        if !t.is_finite() || t < 0.0 {
            return Err(parse_err(format!("line {line}: time {t} must be non-negative")));
        }
        let e: f64 = r[event_idx]
            .parse()
            .map_err(|_| parse_err(format!("line {line}: event `{}` is not a number", r[event_idx])))?;
        let e = if e == 0.0 {
            false
        } else if e == 1.0 {
            true
        } else {
            return Err(parse_err(format!("line {line}: event value `{}` is not 0 or 1", r[event_idx])));
        };
        times.push(t);
        events.push(e);
    }

    let mut names = Vec::new();
    let mut kinds = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (c, name) in header.iter().enumerate() {
        if c == time_idx || c == event_idx {
            continue;
        }
        let parsed: Option<Vec<f64>> = rows.iter().map(|r| r[c].parse::<f64>().ok()).collect();
        match parsed {
            Some(values) => {
                if let Some(k) = values.iter().position(|v| !v.is_finite()) {
                    return Err(parse_err(format!("line {}: `{name}` is not finite", k + 2)));
                }
                names.push(name.clone());
                kinds.push(ColumnKind::Numeric);
                columns.push(values);
            }
            None => {
                let levels: BTreeSet<&str> = rows.iter().map(|r| r[c].as_str()).collect();
                for level in levels.iter().skip(1) {
                    names.push(format!("{name}={level}"));
                    kinds.push(ColumnKind::OneHotLevel {
                        source: name.clone(),
                        level: level.to_string(),
                    });
                    columns.push(rows.iter().map(|r| f64::from(u8::from(r[c] == *level))).collect());
                }
            }
        }
    }
    let features = (0..rows.len())
        .map(|k| columns.iter().map(|col| col[k]).collect())
        .collect();
    SurvivalDataset::new(features, times, events, names, kinds)
}

/// Writes the dataset with all features numeric (one-hot columns as 0/1),
/// followed by the time and event columns.
pub fn write_csv_to<W: Write>(
    data: &SurvivalDataset,
    writer: W,
    time_column: &str,
    event_column: &str,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = data.column_names().iter().map(String::as_str).collect();
    header.push(time_column);
    header.push(event_column);
    w.write_record(&header).map_err(csv_io)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.row(i).iter().map(|&v| num(v)).collect();
        rec.push(num(data.times()[i]));
        rec.push(if data.events()[i] { "1" } else { "0" }.to_string());
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(data: &SurvivalDataset, path: impl AsRef<Path>, time_column: &str, event_column: &str) -> Result<()> {
    let file = File::create(path)?;
    write_csv_to(data, file, time_column, event_column)
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
