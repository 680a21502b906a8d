//! CSV and JSON writers.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{MetricsRow, RunSummary};

pub const CSV_HEADER: &str = "repetition,device,policy,seq,channel,reward,rolling_rate";

#[derive(Debug, Error)]
#[error("cannot write {}: {source}", path.display())]
pub struct OutputError {
    pub path: PathBuf,
    pub source: io::Error,
}

/// Writes the header and one LF-terminated line per row.
pub fn write_csv<W: Write>(rows: &[MetricsRow], mut w: W) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{:.6}",
            r.repetition,
            r.device,
            r.policy.label(),
            r.seq,
            r.channel,
            r.reward as u8,
            r.rolling_rate
        )?;
    }
    w.flush()
}

fn with_file(path: &Path, f: impl FnOnce(BufWriter<File>) -> io::Result<()>) -> Result<(), OutputError> {
    let err = |source| OutputError { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(err)?;
    f(BufWriter::new(file)).map_err(err)
}

pub fn emit_csv(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<(), OutputError> {
    with_file(path.as_ref(), |w| write_csv(rows, w))
}

pub fn emit_summary_json(summary: &RunSummary, path: impl AsRef<Path>) -> Result<(), OutputError> {
    with_file(path.as_ref(), |mut w| {
        serde_json::to_writer_pretty(&mut w, summary)?;
        w.write_all(b"\n")?;
        w.flush()
    })
}
