//! Shared plumbing for the versioned JSON formats.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// Byte offset of a 1-based `(line, column)` position.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (start + column.saturating_sub(1)).min(text.len())
}

fn parse_error(path: &Path, text: &str, err: serde_json::Error) -> Error {
    let message = match err.classify() {
        serde_json::error::Category::Eof => format!("unexpected end of file ({err})"),
        _ => err.to_string(),
    };
    Error::Parse {
        path: path.to_path_buf(),
        line: err.line(),
        offset: byte_offset(text, err.line(), err.column()),
        message,
    }
}

/// Parses `text` after checking its format tag and version.
pub(crate) fn parse<T: DeserializeOwned>(
    path: &Path,
    text: &str,
    format: &str,
    version: u32,
) -> Result<T> {
    let header: Header = serde_json::from_str(text).map_err(|e| parse_error(path, text, e))?;
    if header.format != format || header.version != version {
        return Err(Error::format(
            path,
            format!(
                "schema mismatch: expected {format} version {version}, found {} version {}",
                header.format, header.version
            ),
        ));
    }
    serde_json::from_str(text).map_err(|e| parse_error(path, text, e))
}

pub(crate) fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn render<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data always serializes");
    s.push('\n');
    s
}

pub(crate) fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Non-finite numbers cannot be written: JSON would silently turn them into `null`.
pub(crate) fn check_finite(path: &Path, field: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::format(path, format!("{field}[{i}] is not finite"))),
        None => Ok(()),
    }
}
