//! Builds a labelled dataset from IEM ASOS archive downloads.
//!
//! Each file is a comma-separated export with a `station` and `valid`
//! (`YYYY-MM-DD HH:MM`, UTC) column followed by variable columns; `M` marks
//! a missing value and lines starting with `#` are comments. Observations
//! are placed on an hourly grid per station (the last reading within an
//! hour wins), then cut into non-overlapping windows per variable. Each
//! window is one sample whose label is the variable.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Provenance};
use crate::error::{Error, Result};

/// Archive column and class name, in label order.
pub const VARIABLES: [(&str, &str); 8] = [
    ("tmpf", "Air Temperature"),
    ("dwpf", "Dew Point Temperature"),
    ("relh", "Relative Humidity"),
    ("drct", "Wind Direction"),
    ("alti", "Pressure Altimeter"),
    ("vsby", "Visibility"),
    ("gust", "Wind Gust"),
    ("feel", "Apparent Temperature"),
];

/// Archive columns that are recognised but not used as classes.
const OTHER_COLUMNS: [&str; 24] = [
    "station", "valid", "lon", "lat", "elevation", "sknt", "p01i", "mslp", "skyc1", "skyc2",
    "skyc3", "skyc4", "skyl1", "skyl2", "skyl3", "skyl4", "wxcodes", "ice_accretion_1hr",
    "ice_accretion_3hr", "ice_accretion_6hr", "peak_wind_gust", "peak_wind_drct",
    "peak_wind_time", "metar",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IowaConfig {
    /// Window length in hours.
    pub window: usize,
    /// Windows with a larger missing fraction are dropped.
    pub max_missing: f64,
}

impl Default for IowaConfig {
    fn default() -> Self {
        Self {
            window: 168,
            max_missing: 0.5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IowaReport {
    pub files: usize,
    pub observations: usize,
    pub stations: Vec<String>,
    pub windows_kept: usize,
    pub windows_dropped: usize,
    pub unknown_columns: Vec<String>,
}

/// Station → variable index → hour → value.
type Grid = BTreeMap<String, Vec<BTreeMap<i64, f64>>>;

fn parse_time(s: &str) -> Option<i64> {
    let s = s.trim();
    NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .ok()
        .map(|t| t.and_utc().timestamp().div_euclid(3600))
}

fn read_into<R: Read>(
    reader: R,
    origin: &str,
    grid: &mut Grid,
    report: &mut IowaReport,
    unknown: &mut BTreeSet<String>,
) -> Result<()> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(station_col), Some(valid_col)) = (col("station"), col("valid")) else {
        return Err(Error::Parse {
            path: origin.to_owned(),
            line: 1,
            message: "expected `station` and `valid` columns".into(),
        });
    };
    let var_cols: Vec<Option<usize>> = VARIABLES.iter().map(|(c, _)| col(c)).collect();
    for h in header.iter() {
        if !VARIABLES.iter().any(|(c, _)| *c == h) && !OTHER_COLUMNS.contains(&h) {
            unknown.insert(h.to_owned());
        }
    }
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let station = rec.get(station_col).unwrap_or_default();
        let Some(hour) = rec.get(valid_col).and_then(parse_time) else {
            return Err(Error::Parse {
                path: origin.to_owned(),
                line,
                message: format!("bad timestamp `{}`", rec.get(valid_col).unwrap_or_default()),
            });
        };
        report.observations += 1;
        let slots = grid
            .entry(station.to_owned())
            .or_insert_with(|| vec![BTreeMap::new(); VARIABLES.len()]);
        // every station gets its full time span, even for all-missing rows
        slots[0].entry(hour).or_insert(f64::NAN);
        for (v, c) in var_cols.iter().enumerate() {
            let Some(c) = c else { continue };
            if let Some(x) = rec.get(*c).and_then(|s| s.parse::<f64>().ok()).filter(|x| x.is_finite()) {
                slots[v].insert(hour, x);
            }
        }
    }
    Ok(())
}

/// Builds the dataset from already-downloaded archive files.
pub fn build_iowa_asos(files: &[PathBuf], cfg: &IowaConfig) -> Result<(Dataset, IowaReport)> {
    if cfg.window == 0 {
        return Err(Error::invalid("window must be positive"));
    }
    let mut grid = Grid::new();
    let mut report = IowaReport::default();
    let mut unknown = BTreeSet::new();
    for path in files {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        read_into(BufReader::new(f), &path.display().to_string(), &mut grid, &mut report, &mut unknown)?;
        report.files += 1;
    }
    for u in &unknown {
        log::warn!("iowa: ignoring unknown column `{u}`");
    }
    report.unknown_columns = unknown.into_iter().collect();
    report.stations = grid.keys().cloned().collect();

    let mut rows = Vec::new();
    for (v, (column, name)) in VARIABLES.iter().enumerate() {
        for (station, slots) in &grid {
            let first = slots.iter().filter_map(|s| s.keys().next()).min().copied();
            let last = slots.iter().filter_map(|s| s.keys().next_back()).max().copied();
            let (Some(first), Some(last)) = (first, last) else { continue };
            let span = (last - first + 1) as usize;
            for w in 0..span / cfg.window {
                let start = first + (w * cfg.window) as i64;
                let values: Vec<f64> = (start..start + cfg.window as i64)
                    .map(|h| slots[v].get(&h).copied().unwrap_or(f64::NAN))
                    .collect();
                let missing = values.iter().filter(|x| x.is_nan()).count();
                if missing as f64 > cfg.max_missing * cfg.window as f64 {
                    report.windows_dropped += 1;
                    continue;
                }
                report.windows_kept += 1;
                rows.push((format!("{station}-{column}-h{start}"), *name, values));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Dataset("no usable windows in the raw files".into()));
    }
    let prov = Provenance::new("iowa-asos")
        .with("window", cfg.window)
        .with("window_policy", "non-overlapping")
        .with("max_missing", cfg.max_missing)
        .with("stations", &report.stations)
        .with("files", files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>());
    Ok((Dataset::from_rows(rows, prov)?, report))
}

/// All `.csv` and `.txt` files directly inside `dir`, sorted by name.
pub fn raw_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "txt"))
        })
        .collect();
    out.sort();
    Ok(out)
}
