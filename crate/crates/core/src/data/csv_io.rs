//! `id,label,v0,...,v{t-1}` files. Empty cells are missing readings.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use super::dataset::{Dataset, Provenance};
use crate::error::{Error, Result};

/// One row of a possibly ragged sequence file.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSequence {
    pub id: String,
    pub label: String,
    pub values: Vec<f64>,
}

fn parse_err(path: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_owned(),
        line,
        message: message.into(),
    }
}

fn read_rows<R: Read>(reader: R, origin: &str, ragged: bool) -> Result<Vec<RawSequence>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(origin, 1, e.to_string()))?.clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label" {
        return Err(parse_err(origin, 1, "header must be `id,label,v0,...`"));
    }
    let width = header.len();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(origin, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if !ragged && rec.len() != width {
            return Err(parse_err(
                origin,
                line,
                format!("row has {} fields, header has {width}", rec.len()),
            ));
        }
        if rec.len() < 3 {
            return Err(parse_err(origin, line, "row has no readings"));
        }
        let mut values = rec
            .iter()
            .skip(2)
            .enumerate()
            .map(|(j, cell)| {
                let cell = cell.trim();
                if cell.is_empty() {
                    return Ok(f64::NAN);
                }
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(parse_err(origin, line, format!("v{j}: cannot parse `{cell}`"))),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if ragged {
            while values.last().is_some_and(|v| v.is_nan()) {
                values.pop();
            }
            if values.is_empty() {
                return Err(parse_err(origin, line, "row has no readings"));
            }
        }
        out.push(RawSequence {
            id: rec[0].to_owned(),
            label: rec[1].to_owned(),
            values,
        });
    }
    Ok(out)
}

/// Reads a rectangular sequence file; ragged rows are an error naming the line.
pub fn read_csv<R: Read>(reader: R, origin: &str) -> Result<Dataset> {
    let rows = read_rows(reader, origin, false)?;
    if rows.is_empty() {
        return Err(parse_err(origin, 2, "no data rows"));
    }
    Dataset::from_rows(
        rows.into_iter().map(|r| (r.id, r.label, r.values)),
        Provenance::new("csv").with("path", origin),
    )
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(BufReader::new(f), &path.display().to_string())
}

/// Reads rows whose lengths may differ; trailing empty cells are dropped.
pub fn load_ragged_csv(path: &Path) -> Result<Vec<RawSequence>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_rows(BufReader::new(f), &path.display().to_string(), true)
}

/// Writes the canonical serialization: shortest round-trip float text,
/// empty cells for missing readings.
pub fn write_csv_to<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_owned(), "label".to_owned()];
    header.extend((0..ds.seq_len()).map(|j| format!("v{j}")));
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for i in 0..ds.len() {
        rec.clear();
        rec.push(ds.ids()[i].clone());
        rec.push(ds.class_names()[ds.labels()[i]].clone());
        rec.extend(ds.sequence(i).iter().map(|v| {
            if v.is_nan() {
                String::new()
            } else {
                format!("{v:?}")
            }
        }));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Dataset(e.to_string()))
}

pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(ds, std::io::BufWriter::new(f))
}
