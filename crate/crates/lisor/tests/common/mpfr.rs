//! Multi-precision reference forward pass used as a finite-difference oracle.

use lisor_core::data::Sequence;
use lisor_core::rnn::{CellKind, RnnModel};
use rug::Float;

pub const PREC: u32 = 256;

fn f(x: f64) -> Float {
    Float::with_val(PREC, x)
}

fn sigmoid(x: &Float) -> Float {
    let e = Float::with_val(PREC, -x).exp();
    Float::with_val(PREC, 1.0 / (e + 1.0))
}

fn tanh(x: &Float) -> Float {
    Float::with_val(PREC, x.tanh_ref())
}

struct Block {
    w: Vec<Vec<Float>>,
    b: Vec<Float>,
}

impl Block {
    fn apply(&self, v: &[Float]) -> Vec<Float> {
        self.w
            .iter()
            .zip(&self.b)
            .map(|(row, b)| {
                let mut acc = b.clone();
                for (w, x) in row.iter().zip(v) {
                    acc += Float::with_val(PREC, w * x);
                }
                acc
            })
            .collect()
    }
}

/// All parameters of a model as multi-precision values, in flat order.
pub struct MpModel {
    kind: CellKind,
    hidden: usize,
    embedding: Vec<Vec<Float>>,
    layers: Vec<Vec<Block>>,
    head_w: Vec<Float>,
    head_b: Float,
}

impl MpModel {
    pub fn from_model(model: &RnnModel) -> Self {
        let p = model.params();
        let mat = |m: &lisor_core::math::Matrix| -> Vec<Vec<Float>> {
            (0..m.rows()).map(|r| m.row(r).iter().map(|&x| f(x)).collect()).collect()
        };
        MpModel {
            kind: model.kind(),
            hidden: model.dims().hidden,
            embedding: mat(&p.embedding),
            layers: p
                .layers
                .iter()
                .map(|l| {
                    l.blocks()
                        .iter()
                        .map(|b| Block {
                            w: mat(&b.weight),
                            b: b.bias.iter().map(|&x| f(x)).collect(),
                        })
                        .collect()
                })
                .collect(),
            head_w: p.head.weight.as_slice().iter().map(|&x| f(x)).collect(),
            head_b: f(p.head.bias[0]),
        }
    }

    /// Mutable references to every scalar, in the flat parameter order
    /// (embedding, each block's weight then bias, head weight, head bias).
    pub fn scalar_mut(&mut self, mut idx: usize) -> &mut Float {
        let emb: Vec<&mut Float> = self.embedding.iter_mut().flatten().collect();
        if idx < emb.len() {
            return emb.into_iter().nth(idx).unwrap();
        }
        idx -= emb.len();
        for layer in &mut self.layers {
            for block in layer {
                let n = block.w.iter().map(Vec::len).sum::<usize>();
                if idx < n {
                    return block.w.iter_mut().flatten().nth(idx).unwrap();
                }
                idx -= n;
                if idx < block.b.len() {
                    return &mut block.b[idx];
                }
                idx -= block.b.len();
            }
        }
        if idx < self.head_w.len() {
            return &mut self.head_w[idx];
        }
        assert_eq!(idx, self.head_w.len(), "parameter index out of range");
        &mut self.head_b
    }

    fn cell(&self, layer: usize, h: &[Float], c: &[Float], x: &[Float]) -> (Vec<Float>, Vec<Float>) {
        let d = self.hidden;
        let blocks = &self.layers[layer];
        let joint: Vec<Float> = h.iter().chain(x).cloned().collect();
        let one = f(1.0);
        match self.kind {
            CellKind::Srn => (blocks[0].apply(&joint).iter().map(tanh).collect(), Vec::new()),
            CellKind::Mgu => {
                let g: Vec<Float> = blocks[0].apply(&joint).iter().map(sigmoid).collect();
                let mut gated = joint.clone();
                for k in 0..d {
                    gated[k] = Float::with_val(PREC, &g[k] * &h[k]);
                }
                let cand: Vec<Float> = blocks[1].apply(&gated).iter().map(tanh).collect();
                let out = (0..d)
                    .map(|k| {
                        let keep = Float::with_val(PREC, &one - &g[k]) * &h[k];
                        keep + Float::with_val(PREC, &g[k] * &cand[k])
                    })
                    .collect();
                (out, Vec::new())
            }
            CellKind::Gru => {
                let z: Vec<Float> = blocks[0].apply(&joint).iter().map(sigmoid).collect();
                let r: Vec<Float> = blocks[1].apply(&joint).iter().map(sigmoid).collect();
                let mut gated = joint.clone();
                for k in 0..d {
                    gated[k] = Float::with_val(PREC, &r[k] * &h[k]);
                }
                let cand: Vec<Float> = blocks[2].apply(&gated).iter().map(tanh).collect();
                let out = (0..d)
                    .map(|k| {
                        let keep = Float::with_val(PREC, &one - &z[k]) * &h[k];
                        keep + Float::with_val(PREC, &z[k] * &cand[k])
                    })
                    .collect();
                (out, Vec::new())
            }
            CellKind::Lstm => {
                let fg: Vec<Float> = blocks[0].apply(&joint).iter().map(sigmoid).collect();
                let ig: Vec<Float> = blocks[1].apply(&joint).iter().map(sigmoid).collect();
                let og: Vec<Float> = blocks[2].apply(&joint).iter().map(sigmoid).collect();
                let cand: Vec<Float> = blocks[3].apply(&joint).iter().map(tanh).collect();
                let c_new: Vec<Float> = (0..d)
                    .map(|k| Float::with_val(PREC, &fg[k] * &c[k]) + Float::with_val(PREC, &ig[k] * &cand[k]))
                    .collect();
                let h_new = (0..d).map(|k| Float::with_val(PREC, &og[k] * tanh(&c_new[k]))).collect();
                (h_new, c_new)
            }
        }
    }

    /// Binary cross-entropy of one sequence.
    pub fn loss(&self, seq: &Sequence) -> Float {
        let d = self.hidden;
        let n = self.layers.len();
        let mut hs = vec![vec![f(0.0); d]; n];
        let mut cs = vec![vec![f(0.0); d]; n];
        for &t in seq.tokens() {
            let mut input = self.embedding[t].clone();
            for l in 0..n {
                let (h, c) = self.cell(l, &hs[l], &cs[l], &input);
                hs[l] = h;
                if !c.is_empty() {
                    cs[l] = c;
                }
                input = hs[l].clone();
            }
        }
        let mut z = self.head_b.clone();
        for (w, h) in self.head_w.iter().zip(&hs[n - 1]) {
            z += Float::with_val(PREC, w * h);
        }
        // -ln p = ln(1 + e^-z); -ln(1-p) = ln(1 + e^z)
        let signed = if seq.label() == 1 { Float::with_val(PREC, -&z) } else { z };
        Float::with_val(PREC, signed.exp() + 1.0).ln()
    }

    /// Central difference of the loss w.r.t. flat parameter `idx`.
    pub fn central_difference(&mut self, seq: &Sequence, idx: usize, eps: f64) -> f64 {
        let orig = self.scalar_mut(idx).clone();
        *self.scalar_mut(idx) = Float::with_val(PREC, &orig + eps);
        let plus = self.loss(seq);
        *self.scalar_mut(idx) = Float::with_val(PREC, &orig - eps);
        let minus = self.loss(seq);
        *self.scalar_mut(idx) = orig;
        Float::with_val(PREC, (plus - minus) / (2.0 * eps)).to_f64()
    }
}
