use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::host::RequestRecord;

pub const REQUEST_HEADER: &str =
    "app,arrival,start_exec,completion,execution_latency,response_latency,cold_start";

/// Writes rows produced by `body` to `path`, removing the file if anything fails.
pub(crate) fn write_atomically(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<()> {
    let result = (|| {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))?;
        w.into_inner()
            .map_err(|e| Error::io(path, e.into_error()))?
            .sync_all()
            .map_err(|e| Error::io(path, e))
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(path);
    }
    result
}

/// Request-level CSV with a mandatory header. Floats use the shortest
/// round-tripping representation.
pub fn emit_csv(records: &[RequestRecord], path: &Path) -> Result<()> {
    write_atomically(path, |w| {
        writeln!(w, "{REQUEST_HEADER}").map_err(|e| Error::io(path, e))?;
        let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        for r in records {
            csv.serialize(r)?;
        }
        csv.flush().map_err(|e| Error::io(path, e))
    })
}

pub fn read_requests_csv(path: &Path) -> Result<Vec<RequestRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != REQUEST_HEADER {
        return Err(Error::Serde(format!("{}: unexpected header", path.display())));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
