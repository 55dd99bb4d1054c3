//! Minimal CSV plumbing. Fields never contain commas, quotes, or newlines
//! (numbers, short identifiers, booleans), so no quoting layer is needed.

use std::fs;
use std::path::Path;

use crate::error::{io_err, CliResult};

/// Writes a header line followed by the given rows, newline-terminated.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> CliResult<()> {
    let mut out = String::with_capacity(header.len() + 1 + rows.iter().map(|r| r.len() + 1).sum::<usize>());
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err("write", path, e))
}

/// Reads a CSV into its header fields and data rows.
pub fn read_csv(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(|e| io_err("read", path, e))?;
    let mut lines = text.lines().filter(|l| !l.is_empty());
    let header = lines
        .next()
        .ok_or_else(|| io_err("parse", path, "empty CSV"))?
        .split(',')
        .map(str::to_owned)
        .collect();
    let rows = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
    Ok((header, rows))
}
