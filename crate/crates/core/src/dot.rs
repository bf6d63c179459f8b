//! Graphviz rendering of automata.
//!
//! The start state is drawn as a gray filled circle labelled `R`, accepting
//! states as double circles. With edge merging, all symbols sharing a
//! `(source, target)` pair collapse into one edge; when there are more than
//! `max_label_symbols` of them the edge is labelled with a generated word
//! class name (see [`word_classes`] for the class contents).

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::fsa::Fsa;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DotOptions {
    pub merge_edges: bool,
    pub max_label_symbols: usize,
    /// Token path whose traversed edges are drawn red.
    pub highlight_path: Option<Vec<usize>>,
}

impl Default for DotOptions {
    fn default() -> Self {
        DotOptions {
            merge_edges: false,
            max_label_symbols: 8,
            highlight_path: None,
        }
    }
}

/// One rendered edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    /// Symbol indices carried by the edge, ascending.
    pub symbols: Vec<usize>,
    pub highlighted: bool,
}

fn node_name(fsa: &Fsa, state: usize) -> String {
    if state == fsa.start() {
        "R".into()
    } else {
        format!("S{state}")
    }
}

fn node_tag(fsa: &Fsa, state: usize) -> String {
    if state == fsa.start() {
        "R".into()
    } else {
        format!("{state}")
    }
}

/// Name given to a merged edge whose symbols do not fit in a label.
pub fn word_class_name(fsa: &Fsa, src: usize, dst: usize) -> String {
    format!("word_class_{}-{}", node_tag(fsa, src), node_tag(fsa, dst))
}

/// Edges in render order: sources start-first then ascending, then by
/// symbol (unmerged) or target (merged).
pub fn edges(fsa: &Fsa, opts: &DotOptions) -> Result<Vec<Edge>> {
    if opts.max_label_symbols == 0 {
        return Err(Error::Config("max_label_symbols must be at least 1".into()));
    }
    let n_sym = fsa.alphabet().len();
    let mut traversed = BTreeSet::new();
    if let Some(path) = &opts.highlight_path {
        let mut state = fsa.start();
        for &t in path {
            if t >= n_sym {
                return Err(Error::Input(format!("highlight token {t} outside alphabet of {n_sym}")));
            }
            if fsa.transition(state, t).is_some() {
                traversed.insert((state, t));
            }
            state = fsa.step(state, t)?;
        }
    }
    let sources = core::iter::once(fsa.start()).chain(0..fsa.n_states());
    let mut out = Vec::new();
    for src in sources {
        let outgoing: Vec<(usize, usize)> = (0..n_sym)
            .filter_map(|s| fsa.transition(src, s).map(|dst| (s, dst)))
            .collect();
        if opts.merge_edges {
            let targets: BTreeSet<usize> = outgoing.iter().map(|&(_, d)| d).collect();
            for dst in targets {
                let symbols: Vec<usize> = outgoing.iter().filter(|&&(_, d)| d == dst).map(|&(s, _)| s).collect();
                let highlighted = symbols.iter().any(|&s| traversed.contains(&(src, s)));
                out.push(Edge {
                    src,
                    dst,
                    symbols,
                    highlighted,
                });
            }
        } else {
            for (s, dst) in outgoing {
                out.push(Edge {
                    src,
                    dst,
                    symbols: alloc::vec![s],
                    highlighted: traversed.contains(&(src, s)),
                });
            }
        }
    }
    Ok(out)
}

/// Word classes created by merging: class name and member symbols.
pub fn word_classes(fsa: &Fsa, opts: &DotOptions) -> Result<Vec<(String, Vec<String>)>> {
    if !opts.merge_edges {
        return Ok(Vec::new());
    }
    Ok(edges(fsa, opts)?
        .into_iter()
        .filter(|e| e.symbols.len() > opts.max_label_symbols)
        .map(|e| {
            let symbols = e.symbols.iter().map(|&s| symbol_text(fsa, s)).collect();
            (word_class_name(fsa, e.src, e.dst), symbols)
        })
        .collect())
}

fn symbol_text(fsa: &Fsa, s: usize) -> String {
    fsa.alphabet().symbol(s).unwrap_or_default().into()
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Renders `fsa` as a Graphviz digraph.
pub fn to_dot(fsa: &Fsa, opts: &DotOptions) -> Result<String> {
    let edges = edges(fsa, opts)?;
    let mut out = String::new();
    let _ = writeln!(out, "digraph fsa {{");
    let _ = writeln!(out, "    rankdir=LR;");
    let _ = writeln!(out, "    node [shape=circle];");
    let _ = writeln!(
        out,
        "    {} [label=\"R\", shape=circle, style=filled, fillcolor=gray];",
        quote(&node_name(fsa, fsa.start()))
    );
    for s in 0..fsa.n_states() {
        let shape = if fsa.is_accepting(s) { "doublecircle" } else { "circle" };
        let name = node_name(fsa, s);
        let _ = writeln!(out, "    {} [label={}, shape={shape}];", quote(&name), quote(&name));
    }
    for e in &edges {
        let label = if e.symbols.len() > opts.max_label_symbols {
            word_class_name(fsa, e.src, e.dst)
        } else {
            e.symbols.iter().map(|&s| symbol_text(fsa, s)).collect::<Vec<_>>().join(",")
        };
        let style = if e.highlighted { ", color=red, fontcolor=red" } else { "" };
        let _ = writeln!(
            out,
            "    {} -> {} [label={}{style}];",
            quote(&node_name(fsa, e.src)),
            quote(&node_name(fsa, e.dst)),
            quote(&label)
        );
    }
    out.push_str("}\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Alphabet;

    fn two_state() -> Fsa {
        // start -0-> 0, start -1-> 0, 0 -0,1-> 1
        Fsa::new(Alphabet::binary(), 2, &[1], alloc::vec![Some(1), Some(1), None, None, Some(0), Some(0)]).unwrap()
    }

    #[test]
    fn merged_edges_share_a_label() {
        let fsa = two_state();
        let opts = DotOptions {
            merge_edges: true,
            ..DotOptions::default()
        };
        let dot = to_dot(&fsa, &opts).unwrap();
        assert!(dot.contains("\"S0\" -> \"S1\" [label=\"0,1\"];"), "{dot}");
        assert_eq!(dot.matches("->").count(), 2);
        let plain = to_dot(&fsa, &DotOptions::default()).unwrap();
        assert_eq!(plain.matches("->").count(), 4);
    }

    #[test]
    fn word_class_when_label_overflows() {
        let fsa = two_state();
        let opts = DotOptions {
            merge_edges: true,
            max_label_symbols: 1,
            highlight_path: None,
        };
        let dot = to_dot(&fsa, &opts).unwrap();
        assert!(dot.contains("label=\"word_class_0-1\""));
        assert!(dot.contains("label=\"word_class_R-0\""));
        let classes = word_classes(&fsa, &opts).unwrap();
        assert_eq!(classes[0], ("word_class_R-0".into(), alloc::vec!["0".into(), "1".into()]));
        assert_eq!(classes.len(), 2);
    }

    #[test]
    fn shapes_and_highlight() {
        let fsa = two_state();
        let opts = DotOptions {
            highlight_path: Some(alloc::vec![1, 0]),
            ..DotOptions::default()
        };
        let dot = to_dot(&fsa, &opts).unwrap();
        assert!(dot.contains("\"R\" [label=\"R\", shape=circle, style=filled, fillcolor=gray];"));
        assert!(dot.contains("\"S1\" [label=\"S1\", shape=doublecircle];"));
        assert_eq!(dot.matches(", color=red").count(), 2);
        assert!(dot.contains("\"R\" -> \"S0\" [label=\"1\", color=red, fontcolor=red];"));
        let bad = DotOptions {
            highlight_path: Some(alloc::vec![2]),
            ..DotOptions::default()
        };
        assert!(matches!(to_dot(&fsa, &bad), Err(Error::Input(_))));
        assert_eq!(to_dot(&fsa, &opts).unwrap(), dot);
    }

    #[test]
    fn symbols_are_escaped() {
        let fsa = Fsa::new(Alphabet::new(["say \"hi\"", "a\\b"]).unwrap(), 1, &[], alloc::vec![Some(0), Some(0), Some(0), None]).unwrap();
        let dot = to_dot(&fsa, &DotOptions::default()).unwrap();
        assert!(dot.contains("label=\"say \\\"hi\\\"\""));
        assert!(dot.contains("label=\"a\\\\b\""));
    }

    #[test]
    fn isolated_states_are_kept() {
        let fsa = Fsa::new(Alphabet::binary(), 3, &[], alloc::vec![None; 8]).unwrap();
        let dot = to_dot(&fsa, &DotOptions::default()).unwrap();
        for s in 0..3 {
            assert_eq!(dot.matches(&format!("\"S{s}\" [")).count(), 1);
        }
        assert!(!dot.contains("->"));
    }
}
