//! Model checkpoints: one JSON document, row-major matrices.

use std::path::Path;

use lisor_core::math::Matrix;
use lisor_core::rnn::{Affine, CellKind, CellParams, Dims, Params, RnnModel};
use serde::{Deserialize, Serialize};

use super::{read_text, write_text};
use crate::error::{FormatError, Result};

pub const MODEL_VERSION: &str = "lisor-model-v1";

#[derive(Serialize, Deserialize)]
struct MatrixDoc {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BlockDoc {
    name: String,
    weight: MatrixDoc,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    input: usize,
    blocks: Vec<BlockDoc>,
}

#[derive(Serialize, Deserialize)]
struct ClassifierDoc {
    weight: Vec<f64>,
    bias: f64,
}

#[derive(Serialize, Deserialize)]
struct DimsDoc {
    embed: usize,
    hidden: usize,
    layers: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    version: String,
    kind: String,
    vocab: usize,
    dims: DimsDoc,
    train_embedding: bool,
    embedding: MatrixDoc,
    layers: Vec<LayerDoc>,
    classifier: ClassifierDoc,
}

fn matrix_doc(m: &Matrix) -> MatrixDoc {
    MatrixDoc {
        rows: m.rows(),
        cols: m.cols(),
        data: m.as_slice().to_vec(),
    }
}

fn matrix(doc: MatrixDoc, field: &str) -> Result<Matrix> {
    let (rows, cols, len) = (doc.rows, doc.cols, doc.data.len());
    Matrix::from_vec(rows, cols, doc.data)
        .ok_or_else(|| FormatError::field(field, format!("{rows}x{cols} matrix with {len} entries")))
}

pub fn to_json(model: &RnnModel) -> String {
    let p = model.params();
    let dims = model.dims();
    let doc = ModelDoc {
        version: MODEL_VERSION.into(),
        kind: model.kind().name().into(),
        vocab: model.vocab(),
        dims: DimsDoc {
            embed: dims.embed,
            hidden: dims.hidden,
            layers: dims.layers,
        },
        train_embedding: model.train_embedding(),
        embedding: matrix_doc(&p.embedding),
        layers: p
            .layers
            .iter()
            .map(|layer| LayerDoc {
                input: layer.input(),
                blocks: layer
                    .kind()
                    .block_names()
                    .iter()
                    .zip(layer.blocks())
                    .map(|(name, b)| BlockDoc {
                        name: (*name).into(),
                        weight: matrix_doc(&b.weight),
                        bias: b.bias.clone(),
                    })
                    .collect(),
            })
            .collect(),
        classifier: ClassifierDoc {
            weight: p.head.weight.as_slice().to_vec(),
            bias: p.head.bias[0],
        },
    };
    serde_json::to_string_pretty(&doc).expect("model serialises")
}

pub fn from_json(text: &str) -> Result<RnnModel> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| FormatError::json(e.line(), e))?;
    if doc.version != MODEL_VERSION {
        return Err(FormatError::Version {
            expected: MODEL_VERSION,
            found: doc.version,
        });
    }
    let kind = CellKind::from_name(&doc.kind).map_err(|e| FormatError::field("kind", e.to_string()))?;
    let dims = Dims::new(doc.dims.embed, doc.dims.hidden, doc.dims.layers);
    let embedding = matrix(doc.embedding, "embedding")?;
    if embedding.rows() != doc.vocab {
        return Err(FormatError::field(
            "vocab",
            format!("{} does not match {} embedding rows", doc.vocab, embedding.rows()),
        ));
    }
    let names = kind.block_names();
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (l, layer) in doc.layers.into_iter().enumerate() {
        let field = format!("layers[{l}]");
        if layer.blocks.len() != names.len() {
            return Err(FormatError::field(
                format!("{field}.blocks"),
                format!("expected {} blocks for {}, found {}", names.len(), kind.name(), layer.blocks.len()),
            ));
        }
        let mut blocks = Vec::with_capacity(names.len());
        for (b, (block, name)) in layer.blocks.into_iter().zip(names).enumerate() {
            if block.name != *name {
                return Err(FormatError::field(
                    format!("{field}.blocks[{b}].name"),
                    format!("expected {name:?}, found {:?}", block.name),
                ));
            }
            blocks.push(Affine {
                weight: matrix(block.weight, &format!("{field}.blocks[{b}].weight"))?,
                bias: block.bias,
            });
        }
        let cell = CellParams::from_blocks(kind, dims.hidden, layer.input, blocks)
            .map_err(|e| FormatError::field(field, e.to_string()))?;
        layers.push(cell);
    }
    let head_len = doc.classifier.weight.len();
    let head = Affine {
        weight: Matrix::from_vec(1, head_len, doc.classifier.weight)
            .ok_or_else(|| FormatError::field("classifier.weight", "empty"))?,
        bias: vec![doc.classifier.bias],
    };
    let params = Params {
        embedding,
        layers,
        head,
    };
    Ok(RnnModel::from_params(kind, dims, params, doc.train_embedding)?)
}

pub fn save(model: &RnnModel, path: &Path) -> Result<()> {
    write_text(path, &to_json(model))
}

pub fn load(path: &Path) -> Result<RnnModel> {
    from_json(&read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lisor_core::seeded_rng;

    #[test]
    fn roundtrip_every_kind() {
        let mut rng = seeded_rng(5);
        for kind in CellKind::ALL {
            let model = RnnModel::init(kind, 3, Dims::new(4, 5, 2), 0.3, &mut rng).unwrap();
            let text = to_json(&model);
            assert!(text.contains(MODEL_VERSION));
            assert_eq!(from_json(&text).unwrap(), model);
        }
    }

    #[test]
    fn rejects_wrong_version_and_shapes() {
        let model = RnnModel::init(CellKind::Gru, 2, Dims::new(2, 3, 1), 0.1, &mut seeded_rng(1)).unwrap();
        let text = to_json(&model);
        let err = from_json(&text.replace(MODEL_VERSION, "lisor-model-v0")).unwrap_err();
        assert!(matches!(err, FormatError::Version { .. }));
        let err = from_json(&text.replace("\"GRU\"", "\"XYZ\"")).unwrap_err();
        assert!(err.to_string().contains("kind"), "{err}");
        let err = from_json(&text.replacen("\"name\": \"z\"", "\"name\": \"q\"", 1)).unwrap_err();
        assert!(err.to_string().contains("layers[0].blocks[0].name"), "{err}");
    }
}
