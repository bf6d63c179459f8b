//! Dataset JSON Lines.
//!
//! ```text
//! {"alphabet":["0","1"],"task":"0110","seed":7}
//! {"split":"train","tokens":["0","1","1","0"],"label":1}
//! ```

use std::borrow::Cow;
use std::path::Path;

use lisor_core::data::{Alphabet, Dataset, Sequence, Split};
use serde::{Deserialize, Serialize};

use super::{lines, read_text, write_text};
use crate::error::{FormatError, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    alphabet: Vec<String>,
    task: String,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Row<'a> {
    #[serde(borrow)]
    split: Cow<'a, str>,
    #[serde(borrow)]
    tokens: Vec<Cow<'a, str>>,
    label: u8,
}

pub fn to_jsonl(ds: &Dataset) -> String {
    let header = Header {
        alphabet: ds.alphabet.symbols().to_vec(),
        task: ds.task_name.clone(),
        seed: ds.seed,
    };
    let mut out = serde_json::to_string(&header).expect("header serialises");
    out.push('\n');
    for split in Split::ALL {
        for seq in ds.split(split) {
            let row = Row {
                split: Cow::Borrowed(split.name()),
                tokens: seq
                    .tokens()
                    .iter()
                    .map(|&t| Cow::Borrowed(ds.alphabet.symbol(t).expect("dataset tokens are in the alphabet")))
                    .collect(),
                label: seq.label(),
            };
            out.push_str(&serde_json::to_string(&row).expect("row serialises"));
            out.push('\n');
        }
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<Dataset> {
    let mut it = lines(text);
    let (_, first) = it.next().ok_or_else(|| FormatError::field("alphabet", "missing header line"))?;
    let header: Header = serde_json::from_str(first).map_err(|e| FormatError::json(1, e))?;
    let alphabet = Alphabet::new(header.alphabet)?;
    let mut splits: [Vec<Sequence>; 3] = Default::default();
    for (line, body) in it {
        let row: Row = serde_json::from_str(body).map_err(|e| FormatError::json(line, e))?;
        let split = Split::from_name(&row.split)
            .ok_or_else(|| FormatError::field("split", format!("line {line}: unknown split {:?}", row.split)))?;
        let tokens = alphabet
            .encode(&row.tokens)
            .map_err(|e| FormatError::field("tokens", format!("line {line}: {e}")))?;
        let seq = Sequence::new(tokens, row.label).map_err(|e| FormatError::field("label", format!("line {line}: {e}")))?;
        splits[split as usize].push(seq);
    }
    let [train, validation, test] = splits;
    Ok(Dataset::new(alphabet, header.task, header.seed, train, validation, test)?)
}

pub fn save(ds: &Dataset, path: &Path) -> Result<()> {
    write_text(path, &to_jsonl(ds))
}

pub fn load(path: &Path) -> Result<Dataset> {
    from_jsonl(&read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lisor_core::data::{gen_task_000, gen_task_0110};

    #[test]
    fn header_and_rows() {
        let ds = gen_task_0110(2, 1, 42).unwrap();
        let text = to_jsonl(&ds);
        let first = text.lines().next().unwrap();
        assert_eq!(first, r#"{"alphabet":["0","1"],"task":"0110","seed":42}"#);
        assert_eq!(text.lines().count(), 1 + 2 + 16 + 1);
        assert!(text.contains(r#"{"split":"validation","tokens":["0","1","1","0"],"label":1}"#));
        assert_eq!(from_jsonl(&text).unwrap(), ds);
    }

    #[test]
    fn roundtrip_000() {
        let ds = gen_task_000(20, 5, 5, (4, 12), 3).unwrap();
        assert_eq!(from_jsonl(&to_jsonl(&ds)).unwrap(), ds);
    }

    #[test]
    fn bad_rows_name_the_field() {
        let head = r#"{"alphabet":["0","1"],"task":"0110","seed":1}"#;
        let err = from_jsonl(&format!("{head}\n{{\"split\":\"train\",\"tokens\":[\"2\"],\"label\":0}}")).unwrap_err();
        assert!(err.to_string().contains("tokens"), "{err}");
        let err = from_jsonl(&format!("{head}\n{{\"split\":\"dev\",\"tokens\":[\"0\"],\"label\":0}}")).unwrap_err();
        assert!(err.to_string().contains("split"), "{err}");
        let err = from_jsonl(&format!("{head}\n{{\"split\":\"train\",\"tokens\":[\"0\"]}}")).unwrap_err();
        assert!(err.to_string().contains("label"), "{err}");
        assert!(from_jsonl("").is_err());
    }
}
