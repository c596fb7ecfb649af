//! Versioned CSV output.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

/// Write `# schema=v1 config_hash=<sha256>` followed by a header and rows.
pub fn write_csv<W: Write, R: Serialize>(mut out: W, config_hash: &str, rows: &[R]) -> Result<()> {
    writeln!(out, "# schema=v{SCHEMA_VERSION} config_hash={config_hash}")
        .map_err(|e| crate::HarnessError::Io { path: "output".into(), source: e })?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| crate::HarnessError::Io { path: "output".into(), source: e })?;
    Ok(())
}

pub fn csv_string<R: Serialize>(config_hash: &str, rows: &[R]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, config_hash, rows)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}
