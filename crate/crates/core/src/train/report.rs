use std::io::{Read, Write};
use std::path::Path;

use super::trainer::EpochRecord;
use crate::error::{Error, Result};

pub const HISTORY_HEADER: [&str; 5] = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"];

/// Per-epoch learning curve. Floats use shortest round-trip text, so a
/// re-read history is bit-identical.
pub fn write_history<W: Write>(history: &[EpochRecord], writer: W) -> Result<()> {
    if history.is_empty() {
        return Err(Error::invalid("empty history"));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HISTORY_HEADER)?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            format!("{:?}", r.train_loss),
            format!("{:?}", r.train_acc),
            format!("{:?}", r.val_loss),
            format!("{:?}", r.val_acc),
        ])?;
    }
    w.flush().map_err(|e| Error::Dataset(e.to_string()))
}

pub fn read_history<R: Read>(reader: R) -> Result<Vec<EpochRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    if rdr.headers()?.iter().ne(HISTORY_HEADER) {
        return Err(Error::invalid("not a history file"));
    }
    rdr.deserialize::<EpochRecord>()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn save_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_history(history, std::io::BufWriter::new(f))
}

pub fn load_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_history(std::io::BufReader::new(f))
}
