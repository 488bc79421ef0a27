//! File formats and the on-disk dataset layout.

pub mod calib;
pub mod dataset;
pub mod labels;
pub mod pfm;
pub mod pgm;

use std::path::Path;

use crate::error::{Error, Result};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Splits a binary header into whitespace-separated tokens (skipping `#`
/// comments), returning the tokens and the offset just past the single
/// whitespace byte that ends the last one.
pub(crate) fn header_tokens(bytes: &[u8], count: usize) -> std::result::Result<(Vec<String>, usize), (usize, String)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        if i >= bytes.len() {
            return Err((i, format!("header ended after {} of {count} fields", tokens.len())));
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
        if tokens.len() == count {
            if i >= bytes.len() {
                return Err((i, "missing whitespace after header".into()));
            }
            i += 1;
        }
    }
    Ok((tokens, i))
}
