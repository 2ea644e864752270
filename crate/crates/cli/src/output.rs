//! Output files. Every file starts with a header line naming the tool,
//! its version and the config hash; CSV files carry it as a `#` comment.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use asa_core::simulator::FileHeader;
use serde::Serialize;

use crate::commands::{CliError, CliResult};

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Opens a CSV file whose first line is the commented header.
pub fn csv_writer(path: &Path, hash: u64) -> CliResult<BufWriter<File>> {
    let mut w = create(path)?;
    writeln!(w, "# {}", FileHeader::new(hash).to_line())?;
    Ok(w)
}

/// Writes the header line followed by one JSON document per line.
pub fn write_ndjson<T: Serialize>(path: &Path, hash: u64, items: &[T]) -> CliResult<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", FileHeader::new(hash).to_line())?;
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| CliError::Runtime(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
