//! Automaton JSON and the word-class sidecar.
//!
//! `T` has one row per state with the start state last; `-1` marks an
//! undefined transition.

use std::collections::BTreeMap;
use std::path::Path;

use lisor_core::data::Alphabet;
use lisor_core::dot::{word_classes, DotOptions};
use lisor_core::fsa::Fsa;
use serde::{Deserialize, Serialize};

use super::{read_text, write_text};
use crate::error::{FormatError, Result};

pub const FSA_VERSION: &str = "lisor-fsa-v1";

#[derive(Serialize, Deserialize)]
struct FsaDoc {
    version: String,
    alphabet: Vec<String>,
    n_states: usize,
    start: usize,
    accepting: Vec<usize>,
    #[serde(rename = "T")]
    t: Vec<Vec<i64>>,
}

pub fn to_json(fsa: &Fsa) -> String {
    let sigma = fsa.alphabet().len();
    let t = (0..=fsa.n_states())
        .map(|s| {
            (0..sigma)
                .map(|a| fsa.transition(s, a).map_or(-1, |n| n as i64))
                .collect()
        })
        .collect();
    let doc = FsaDoc {
        version: FSA_VERSION.into(),
        alphabet: fsa.alphabet().symbols().to_vec(),
        n_states: fsa.n_states(),
        start: fsa.start(),
        accepting: fsa.accepting(),
        t,
    };
    serde_json::to_string_pretty(&doc).expect("automaton serialises")
}

pub fn from_json(text: &str) -> Result<Fsa> {
    let doc: FsaDoc = serde_json::from_str(text).map_err(|e| FormatError::json(e.line(), e))?;
    if doc.version != FSA_VERSION {
        return Err(FormatError::Version {
            expected: FSA_VERSION,
            found: doc.version,
        });
    }
    let alphabet = Alphabet::new(doc.alphabet).map_err(|e| FormatError::field("alphabet", e.to_string()))?;
    if doc.n_states == 0 {
        return Err(FormatError::field("n_states", "must be at least 1"));
    }
    if doc.start != doc.n_states {
        return Err(FormatError::field(
            "start",
            format!("expected {} (one past the last real state), found {}", doc.n_states, doc.start),
        ));
    }
    if let Some(&a) = doc.accepting.iter().find(|&&a| a >= doc.n_states) {
        return Err(FormatError::field("accepting", format!("{a} is not a real state")));
    }
    if doc.t.len() != doc.n_states + 1 {
        return Err(FormatError::field(
            "T",
            format!("expected {} rows, found {}", doc.n_states + 1, doc.t.len()),
        ));
    }
    let mut table = Vec::with_capacity((doc.n_states + 1) * alphabet.len());
    for (s, row) in doc.t.iter().enumerate() {
        if row.len() != alphabet.len() {
            return Err(FormatError::field(
                format!("T[{s}]"),
                format!("expected {} entries, found {}", alphabet.len(), row.len()),
            ));
        }
        for (a, &v) in row.iter().enumerate() {
            table.push(match v {
                -1 => None,
                v if v >= 0 && (v as usize) < doc.n_states => Some(v as usize),
                v => return Err(FormatError::field(format!("T[{s}][{a}]"), format!("{v} is neither -1 nor a real state"))),
            });
        }
    }
    Ok(Fsa::new(alphabet, doc.n_states, &doc.accepting, table)?)
}

pub fn save(fsa: &Fsa, path: &Path) -> Result<()> {
    write_text(path, &to_json(fsa))
}

pub fn load(path: &Path) -> Result<Fsa> {
    from_json(&read_text(path)?)
}

/// Sidecar mapping word-class names to their symbols.
pub fn classes_json(fsa: &Fsa, opts: &DotOptions) -> Result<String> {
    let map: BTreeMap<String, Vec<String>> = word_classes(fsa, opts)?.into_iter().collect();
    Ok(serde_json::to_string_pretty(&map).expect("classes serialise"))
}

pub fn parse_classes(text: &str) -> Result<BTreeMap<String, Vec<String>>> {
    serde_json::from_str(text).map_err(|e| FormatError::json(e.line(), e))
}

/// Path of the sidecar for a DOT file: `fsa.dot` -> `fsa.classes.json`.
pub fn classes_path(dot_path: &Path) -> std::path::PathBuf {
    let stem = dot_path.file_stem().and_then(|s| s.to_str()).unwrap_or("fsa");
    dot_path.with_file_name(format!("{stem}.classes.json"))
}
