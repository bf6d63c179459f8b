//! Trace pool JSON Lines.
//!
//! ```text
//! {"d":10,"n_sequences":16,"alphabet":["0","1"]}
//! {"i":1,"j":1,"symbol":"0","h":[...]}
//! ```

use std::path::Path;

use lisor_core::cluster::{TracePoint, TracePool};
use lisor_core::data::Alphabet;
use serde::{Deserialize, Serialize};

use super::{lines, read_text, write_text};
use crate::error::{FormatError, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    d: usize,
    n_sequences: usize,
    alphabet: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    i: usize,
    j: usize,
    symbol: String,
    h: Vec<f64>,
}

pub fn to_jsonl(pool: &TracePool, alphabet: &Alphabet) -> Result<String> {
    let header = Header {
        d: pool.dim(),
        n_sequences: pool.n_sequences(),
        alphabet: alphabet.symbols().to_vec(),
    };
    let mut out = serde_json::to_string(&header).expect("header serialises");
    out.push('\n');
    for p in pool.points() {
        let symbol = alphabet
            .symbol(p.symbol)
            .ok_or_else(|| FormatError::field("symbol", format!("index {} outside the alphabet", p.symbol)))?;
        let row = Row {
            i: p.seq_index,
            j: p.position,
            symbol: symbol.into(),
            h: p.h.clone(),
        };
        out.push_str(&serde_json::to_string(&row).expect("row serialises"));
        out.push('\n');
    }
    Ok(out)
}

pub fn from_jsonl(text: &str) -> Result<(TracePool, Alphabet)> {
    let mut it = lines(text);
    let (_, first) = it.next().ok_or_else(|| FormatError::field("d", "missing header line"))?;
    let header: Header = serde_json::from_str(first).map_err(|e| FormatError::json(1, e))?;
    let alphabet = Alphabet::new(header.alphabet)?;
    let mut points = Vec::new();
    for (line, body) in it {
        let row: Row = serde_json::from_str(body).map_err(|e| FormatError::json(line, e))?;
        let symbol = alphabet
            .index(&row.symbol)
            .ok_or_else(|| FormatError::field("symbol", format!("line {line}: {:?} not in the alphabet", row.symbol)))?;
        if row.h.len() != header.d {
            return Err(FormatError::field(
                "h",
                format!("line {line}: length {} but d = {}", row.h.len(), header.d),
            ));
        }
        points.push(TracePoint {
            h: row.h,
            seq_index: row.i,
            position: row.j,
            symbol,
        });
    }
    let pool = TracePool::new(points, header.n_sequences, header.d)?;
    Ok((pool, alphabet))
}

pub fn save(pool: &TracePool, alphabet: &Alphabet, path: &Path) -> Result<()> {
    write_text(path, &to_jsonl(pool, alphabet)?)
}

pub fn load(path: &Path) -> Result<(TracePool, Alphabet)> {
    from_jsonl(&read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lisor_core::cluster::collect_traces;
    use lisor_core::data::gen_task_0110;
    use lisor_core::rnn::{CellKind, Dims, RnnModel};
    use lisor_core::seeded_rng;

    #[test]
    fn roundtrip_collected_pool() {
        let ds = gen_task_0110(4, 0, 2).unwrap();
        let model = RnnModel::init(CellKind::Mgu, 2, Dims::new(2, 3, 2), 0.5, &mut seeded_rng(2)).unwrap();
        let pool = collect_traces(&model, &ds.validation).unwrap();
        let text = to_jsonl(&pool, &ds.alphabet).unwrap();
        assert!(text.starts_with(r#"{"d":3,"n_sequences":16,"alphabet":["0","1"]}"#));
        assert_eq!(text.lines().count(), 1 + 64);
        let (back, alphabet) = from_jsonl(&text).unwrap();
        assert_eq!(back, pool);
        assert_eq!(alphabet, ds.alphabet);
    }

    #[test]
    fn rejects_out_of_order_rows() {
        let text = "{\"d\":1,\"n_sequences\":1,\"alphabet\":[\"a\"]}\n\
                    {\"i\":1,\"j\":2,\"symbol\":\"a\",\"h\":[0.0]}\n";
        assert!(from_jsonl(text).is_err());
        let text = "{\"d\":2,\"n_sequences\":1,\"alphabet\":[\"a\"]}\n\
                    {\"i\":1,\"j\":1,\"symbol\":\"a\",\"h\":[0.0]}\n";
        assert!(from_jsonl(text).unwrap_err().to_string().contains("`h`"));
    }
}
