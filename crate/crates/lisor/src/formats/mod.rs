//! On-disk artifact formats.
//!
//! | artifact     | format                                             |
//! |--------------|----------------------------------------------------|
//! | dataset      | JSON Lines, header `{"alphabet","task","seed"}`    |
//! | model        | JSON document, version `lisor-model-v1`            |
//! | trace pool   | JSON Lines, header `{"d","n_sequences","alphabet"}`|
//! | automaton    | JSON document, version `lisor-fsa-v1`              |
//! | word classes | JSON object `class name -> [symbols]`              |
//! | reports      | CSV with a header row                              |

pub mod dataset;
pub mod fsa;
pub mod model;
pub mod pool;
pub mod tables;

use std::fs;
use std::path::Path;

use crate::error::{FormatError, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `contents`, creating parent directories as needed.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    let io = |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::write(path, contents).map_err(io)
}

/// Non-empty lines with their 1-based line numbers.
pub(crate) fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}
