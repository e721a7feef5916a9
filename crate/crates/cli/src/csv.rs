//! CSV output with a schema-version comment line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::{io_error, CliError};

pub struct CsvFile {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvFile {
    /// Creates `path` and writes `# stepnet <kind> v<version>` then `header`.
    pub fn create(path: &Path, kind: &str, version: u32, header: &str) -> Result<Self, CliError> {
        let file = File::create(path).map_err(io_error(path))?;
        let mut f = CsvFile { path: path.to_owned(), out: BufWriter::new(file) };
        f.line(&format!("# stepnet {kind} v{version}"))?;
        f.line(header)?;
        Ok(f)
    }

    pub fn line(&mut self, row: &str) -> Result<(), CliError> {
        writeln!(self.out, "{row}").map_err(io_error(&self.path))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.out.flush().map_err(io_error(&self.path))
    }
}
