//! Recurrent cells (SRN, MGU, GRU, LSTM), stacked forward pass and the
//! sigmoid classifier head.
//!
//! Every gate and candidate is an affine map of the concatenation
//! `[h_{t-1}, x_t]` (the candidate of MGU and GRU uses `[g ⊙ h_{t-1}, x_t]`),
//! so a cell is just an ordered list of [`Affine`] blocks:
//!
//! | kind | blocks            |
//! |------|-------------------|
//! | SRN  | `W`               |
//! | MGU  | `f`, `h`          |
//! | GRU  | `z`, `r`, `h`     |
//! | LSTM | `f`, `i`, `o`, `c`|

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math::{dot, sigmoid, tanh, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CellKind {
    Srn,
    Mgu,
    Gru,
    Lstm,
}

impl CellKind {
    pub const ALL: [CellKind; 4] = [CellKind::Mgu, CellKind::Srn, CellKind::Gru, CellKind::Lstm];

    /// Number of sigmoid gates evaluated per step.
    pub fn gate_count(self) -> usize {
        match self {
            CellKind::Srn => 0,
            CellKind::Mgu => 1,
            CellKind::Gru => 2,
            CellKind::Lstm => 3,
        }
    }

    /// Names of the affine blocks, in storage order.
    pub fn block_names(self) -> &'static [&'static str] {
        match self {
            CellKind::Srn => &["W"],
            CellKind::Mgu => &["f", "h"],
            CellKind::Gru => &["z", "r", "h"],
            CellKind::Lstm => &["f", "i", "o", "c"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Srn => "SRN",
            CellKind::Mgu => "MGU",
            CellKind::Gru => "GRU",
            CellKind::Lstm => "LSTM",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        CellKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Config(format!("unknown cell kind {name:?}")))
    }

    fn has_cell_state(self) -> bool {
        self == CellKind::Lstm
    }
}

/// `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Affine {
            weight: Matrix::zeros(out, inp),
            bias: vec![0.0; out],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.bias.len()];
        self.weight.affine_into(x, &self.bias, &mut out);
        out
    }

    fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }
}

/// Parameters of one recurrent layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    kind: CellKind,
    hidden: usize,
    input: usize,
    blocks: Vec<Affine>,
}

impl CellParams {
    pub fn zeros(kind: CellKind, hidden: usize, input: usize) -> Self {
        let blocks = kind
            .block_names()
            .iter()
            .map(|_| Affine::zeros(hidden, hidden + input))
            .collect();
        CellParams {
            kind,
            hidden,
            input,
            blocks,
        }
    }

    /// Assembles a layer from explicit blocks, checking every shape.
    pub fn from_blocks(kind: CellKind, hidden: usize, input: usize, blocks: Vec<Affine>) -> Result<Self> {
        if blocks.len() != kind.block_names().len() {
            return Err(Error::shape("cell blocks", kind.block_names().len(), blocks.len()));
        }
        for b in &blocks {
            if b.weight.rows() != hidden || b.bias.len() != hidden {
                return Err(Error::shape("block rows", hidden, b.weight.rows().max(b.bias.len())));
            }
            if b.weight.cols() != hidden + input {
                return Err(Error::shape("block columns", hidden + input, b.weight.cols()));
            }
            if !b.is_finite() {
                return Err(Error::Input("non-finite cell parameter".into()));
            }
        }
        Ok(CellParams {
            kind,
            hidden,
            input,
            blocks,
        })
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn blocks(&self) -> &[Affine] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Affine] {
        &mut self.blocks
    }

    /// Looks a block up by its name (`"f"`, `"h"`, ...).
    pub fn block_mut(&mut self, name: &str) -> Option<&mut Affine> {
        let idx = self.kind.block_names().iter().position(|n| *n == name)?;
        self.blocks.get_mut(idx)
    }

    /// One recurrence step of this layer.
    pub fn step(&self, state: &LayerState, x: &[f64]) -> Result<LayerState> {
        if x.len() != self.input {
            return Err(Error::shape("cell input", self.input, x.len()));
        }
        if state.h.len() != self.hidden {
            return Err(Error::shape("hidden state", self.hidden, state.h.len()));
        }
        if self.kind.has_cell_state() && state.c.as_ref().map(Vec::len) != Some(self.hidden) {
            return Err(Error::Input("LSTM step needs a cell state of hidden width".into()));
        }
        let cache = self.step_cached(&state.h, state.c.as_deref(), x);
        Ok(LayerState {
            h: cache.h,
            c: cache.c,
        })
    }

    pub(crate) fn step_cached(&self, h_prev: &[f64], c_prev: Option<&[f64]>, x: &[f64]) -> StepCache {
        let d = self.hidden;
        let joint: Vec<f64> = h_prev.iter().chain(x).copied().collect();
        let sig = |a: &Affine, v: &[f64]| -> Vec<f64> { a.apply(v).into_iter().map(sigmoid).collect() };
        let th = |a: &Affine, v: &[f64]| -> Vec<f64> { a.apply(v).into_iter().map(tanh).collect() };
        match self.kind {
            CellKind::Srn => {
                let h = th(&self.blocks[0], &joint);
                StepCache {
                    joint,
                    gated_joint: Vec::new(),
                    acts: Vec::new(),
                    cand: Vec::new(),
                    c_prev: Vec::new(),
                    c: None,
                    h,
                }
            }
            CellKind::Mgu | CellKind::Gru => {
                // MGU: gate f drives both reset and update.
                // GRU: z updates, r resets.
                let gates: Vec<Vec<f64>> = self.blocks[..self.kind.gate_count()]
                    .iter()
                    .map(|b| sig(b, &joint))
                    .collect();
                let (update, reset) = match self.kind {
                    CellKind::Mgu => (&gates[0], &gates[0]),
                    _ => (&gates[0], &gates[1]),
                };
                let mut gated_joint = joint.clone();
                for (g, r) in gated_joint[..d].iter_mut().zip(reset) {
                    *g *= r;
                }
                let cand = th(self.blocks.last().unwrap(), &gated_joint);
                let h = (0..d)
                    .map(|i| (1.0 - update[i]) * h_prev[i] + update[i] * cand[i])
                    .collect();
                StepCache {
                    joint,
                    gated_joint,
                    acts: gates,
                    cand,
                    c_prev: Vec::new(),
                    c: None,
                    h,
                }
            }
            CellKind::Lstm => {
                let gates: Vec<Vec<f64>> = self.blocks[..3].iter().map(|b| sig(b, &joint)).collect();
                let cand = th(&self.blocks[3], &joint);
                let c_prev = c_prev.map_or_else(|| vec![0.0; d], <[f64]>::to_vec);
                let (f, i, o) = (&gates[0], &gates[1], &gates[2]);
                let c: Vec<f64> = (0..d).map(|k| f[k] * c_prev[k] + i[k] * cand[k]).collect();
                let h = (0..d).map(|k| o[k] * tanh(c[k])).collect();
                StepCache {
                    joint,
                    gated_joint: Vec::new(),
                    acts: gates,
                    cand,
                    c_prev,
                    c: Some(c),
                    h,
                }
            }
        }
    }

    /// Backward through one step. `dh`/`dc` are gradients w.r.t. this step's
    /// outputs; returns gradients w.r.t. `(h_prev, c_prev, x)` and accumulates
    /// parameter gradients into `grads`.
    pub(crate) fn step_backward(
        &self,
        cache: &StepCache,
        dh: &[f64],
        dc: Option<&[f64]>,
        grads: &mut CellParams,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.hidden;
        let mut djoint = vec![0.0; d + self.input];
        let h_prev = &cache.joint[..d];
        let mut dc_prev = Vec::new();

        // Pushes a pre-activation gradient through block `idx` applied to `input`.
        let mut through = |idx: usize, da: &[f64], input: &[f64], dinput: &mut [f64]| {
            let g = &mut grads.blocks[idx];
            g.weight.add_outer(da, input);
            for (b, v) in g.bias.iter_mut().zip(da) {
                *b += v;
            }
            self.blocks[idx].weight.add_transpose_mul(da, dinput);
        };

        match self.kind {
            CellKind::Srn => {
                let da: Vec<f64> = (0..d).map(|k| dh[k] * (1.0 - cache.h[k] * cache.h[k])).collect();
                through(0, &da, &cache.joint, &mut djoint);
            }
            CellKind::Mgu | CellKind::Gru => {
                let update = &cache.acts[0];
                let reset = &cache.acts[self.kind.gate_count() - 1];
                let cand = &cache.cand;
                let mut dupdate = vec![0.0; d];
                let mut dh_direct = vec![0.0; d];
                let mut dcand_pre = vec![0.0; d];
                for k in 0..d {
                    dupdate[k] = dh[k] * (cand[k] - h_prev[k]);
                    dh_direct[k] = dh[k] * (1.0 - update[k]);
                    dcand_pre[k] = dh[k] * update[k] * (1.0 - cand[k] * cand[k]);
                }
                let cand_idx = self.blocks.len() - 1;
                let mut dgated = vec![0.0; d + self.input];
                through(cand_idx, &dcand_pre, &cache.gated_joint, &mut dgated);
                let mut dreset = vec![0.0; d];
                for k in 0..d {
                    dreset[k] = dgated[k] * h_prev[k];
                    dh_direct[k] += dgated[k] * reset[k];
                }
                for (dj, dg) in djoint[d..].iter_mut().zip(&dgated[d..]) {
                    *dj += dg;
                }
                if self.kind == CellKind::Mgu {
                    for k in 0..d {
                        dupdate[k] += dreset[k];
                    }
                } else {
                    let da_r: Vec<f64> = (0..d).map(|k| dreset[k] * reset[k] * (1.0 - reset[k])).collect();
                    through(1, &da_r, &cache.joint, &mut djoint);
                }
                let da_u: Vec<f64> = (0..d).map(|k| dupdate[k] * update[k] * (1.0 - update[k])).collect();
                through(0, &da_u, &cache.joint, &mut djoint);
                for k in 0..d {
                    djoint[k] += dh_direct[k];
                }
            }
            CellKind::Lstm => {
                let (f, i, o) = (&cache.acts[0], &cache.acts[1], &cache.acts[2]);
                let c = cache.c.as_ref().expect("LSTM cache carries c");
                let cand = &cache.cand;
                let mut dct = dc.map_or_else(|| vec![0.0; d], <[f64]>::to_vec);
                let mut da = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
                dc_prev = vec![0.0; d];
                for k in 0..d {
                    let tc = tanh(c[k]);
                    let d_o = dh[k] * tc;
                    dct[k] += dh[k] * o[k] * (1.0 - tc * tc);
                    let d_f = dct[k] * cache.c_prev[k];
                    let d_i = dct[k] * cand[k];
                    let d_cand = dct[k] * i[k];
                    dc_prev[k] = dct[k] * f[k];
                    da[0][k] = d_f * f[k] * (1.0 - f[k]);
                    da[1][k] = d_i * i[k] * (1.0 - i[k]);
                    da[2][k] = d_o * o[k] * (1.0 - o[k]);
                    da[3][k] = d_cand * (1.0 - cand[k] * cand[k]);
                }
                for (idx, g) in da.iter().enumerate() {
                    through(idx, g, &cache.joint, &mut djoint);
                }
            }
        }
        let dx = djoint.split_off(d);
        (djoint, dc_prev, dx)
    }
}

/// Intermediate values of one step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    /// `[h_prev, x]`
    joint: Vec<f64>,
    /// `[g ⊙ h_prev, x]` for MGU/GRU
    gated_joint: Vec<f64>,
    /// gate activations in block order
    acts: Vec<Vec<f64>>,
    cand: Vec<f64>,
    c_prev: Vec<f64>,
    c: Option<Vec<f64>>,
    pub(crate) h: Vec<f64>,
}

/// Hidden (and, for LSTM, cell) vector of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub h: Vec<f64>,
    pub c: Option<Vec<f64>>,
}

impl LayerState {
    pub fn zeros(kind: CellKind, hidden: usize) -> Self {
        LayerState {
            h: vec![0.0; hidden],
            c: kind.has_cell_state().then(|| vec![0.0; hidden]),
        }
    }
}

/// Runs one step of `params` (of kind `kind`) from `state` on input `x`.
pub fn cell_step(kind: CellKind, params: &CellParams, state: &LayerState, x: &[f64]) -> Result<LayerState> {
    if params.kind != kind {
        return Err(Error::Config(format!(
            "parameters are for {} but {} was requested",
            params.kind.name(),
            kind.name()
        )));
    }
    params.step(state, x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// Embedding width (input width of the first layer).
    pub embed: usize,
    /// Hidden width of every layer.
    pub hidden: usize,
    pub layers: usize,
}

impl Dims {
    pub fn new(embed: usize, hidden: usize, layers: usize) -> Self {
        Dims {
            embed,
            hidden,
            layers,
        }
    }
}

/// All trainable tensors of a model. Gradients use the same structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// `vocab × embed` lookup table.
    pub embedding: Matrix,
    pub layers: Vec<CellParams>,
    /// `1 × hidden` weight and a single bias.
    pub head: Affine,
}

impl Params {
    pub fn zeros(kind: CellKind, vocab: usize, dims: Dims) -> Self {
        let layers = (0..dims.layers)
            .map(|l| {
                let input = if l == 0 { dims.embed } else { dims.hidden };
                CellParams::zeros(kind, dims.hidden, input)
            })
            .collect();
        Params {
            embedding: Matrix::zeros(vocab, dims.embed),
            layers,
            head: Affine::zeros(1, dims.hidden),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Params {
            embedding: Matrix::zeros(self.embedding.rows(), self.embedding.cols()),
            layers: self
                .layers
                .iter()
                .map(|l| CellParams::zeros(l.kind, l.hidden, l.input))
                .collect(),
            head: Affine::zeros(1, self.head.weight.cols()),
        }
    }

    /// Every tensor as a flat slice: embedding, then per layer each block's
    /// weight and bias, then head weight and bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![self.embedding.as_slice()];
        for layer in &self.layers {
            for b in &layer.blocks {
                out.push(b.weight.as_slice());
                out.push(&b.bias);
            }
        }
        out.push(self.head.weight.as_slice());
        out.push(&self.head.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.embedding.as_mut_slice()];
        for layer in &mut self.layers {
            for b in &mut layer.blocks {
                out.push(b.weight.as_mut_slice());
                out.push(&mut b.bias);
            }
        }
        out.push(self.head.weight.as_mut_slice());
        out.push(&mut self.head.bias);
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Scalar parameter by flat index (in [`Params::tensors`] order).
    pub fn get_flat(&self, mut idx: usize) -> Option<f64> {
        for t in self.tensors() {
            if idx < t.len() {
                return Some(t[idx]);
            }
            idx -= t.len();
        }
        None
    }

    pub fn set_flat(&mut self, mut idx: usize, value: f64) -> bool {
        for t in self.tensors_mut() {
            if idx < t.len() {
                t[idx] = value;
                return true;
            }
            idx -= t.len();
        }
        false
    }
}

/// Stacked recurrent classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnModel {
    kind: CellKind,
    dims: Dims,
    params: Params,
    train_embedding: bool,
}

/// Top-layer hidden states recorded while reading one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenTrace {
    /// `states[t]` is the hidden vector after consuming `symbols[t]`.
    pub states: Vec<Vec<f64>>,
    pub symbols: Vec<usize>,
    /// Classifier probability on the final top-layer state.
    pub prob: f64,
}

impl HiddenTrace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

impl RnnModel {
    /// Model whose every parameter is zero.
    pub fn zeros(kind: CellKind, vocab: usize, dims: Dims) -> Result<Self> {
        Self::from_params(kind, dims, Params::zeros(kind, vocab, dims), true)
    }

    /// Random initialisation: weights uniform in `±init_scale`, biases zero.
    /// When `dims.embed == vocab` the embedding is a frozen one-hot table,
    /// otherwise it is random and trainable.
    pub fn init<R: Rng + ?Sized>(kind: CellKind, vocab: usize, dims: Dims, init_scale: f64, rng: &mut R) -> Result<Self> {
        let mut params = Params::zeros(kind, vocab, dims);
        let one_hot = dims.embed == vocab;
        if one_hot {
            for v in 0..vocab {
                params.embedding.set(v, v, 1.0);
            }
        } else {
            for w in params.embedding.as_mut_slice() {
                *w = rng.gen_range(-init_scale..=init_scale);
            }
        }
        for layer in &mut params.layers {
            for b in &mut layer.blocks {
                for w in b.weight.as_mut_slice() {
                    *w = rng.gen_range(-init_scale..=init_scale);
                }
            }
        }
        for w in params.head.weight.as_mut_slice() {
            *w = rng.gen_range(-init_scale..=init_scale);
        }
        Self::from_params(kind, dims, params, !one_hot)
    }

    /// Assembles a model, checking that every tensor agrees with `dims`.
    pub fn from_params(kind: CellKind, dims: Dims, params: Params, train_embedding: bool) -> Result<Self> {
        if dims.layers == 0 {
            return Err(Error::Config("a model needs at least one layer".into()));
        }
        if dims.hidden == 0 || dims.embed == 0 {
            return Err(Error::Config("hidden and embedding widths must be positive".into()));
        }
        if params.embedding.rows() == 0 {
            return Err(Error::Config("vocabulary must not be empty".into()));
        }
        if params.embedding.cols() != dims.embed {
            return Err(Error::shape("embedding width", dims.embed, params.embedding.cols()));
        }
        if params.layers.len() != dims.layers {
            return Err(Error::shape("layer count", dims.layers, params.layers.len()));
        }
        for (l, layer) in params.layers.iter().enumerate() {
            let input = if l == 0 { dims.embed } else { dims.hidden };
            if layer.kind != kind {
                return Err(Error::Config(format!("layer {l} has kind {}", layer.kind.name())));
            }
            CellParams::from_blocks(kind, dims.hidden, input, layer.blocks.clone())?;
        }
        if params.head.weight.rows() != 1 || params.head.weight.cols() != dims.hidden || params.head.bias.len() != 1 {
            return Err(Error::shape("classifier width", dims.hidden, params.head.weight.cols()));
        }
        if !params.is_finite() {
            return Err(Error::Input("non-finite model parameter".into()));
        }
        Ok(RnnModel {
            kind,
            dims,
            params,
            train_embedding,
        })
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn vocab(&self) -> usize {
        self.params.embedding.rows()
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Mutable access for optimisers and tests; shapes must be preserved.
    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn train_embedding(&self) -> bool {
        self.train_embedding
    }

    pub fn set_train_embedding(&mut self, on: bool) {
        self.train_embedding = on;
    }

    /// Sets the classifier head directly.
    pub fn set_classifier(&mut self, weight: &[f64], bias: f64) -> Result<()> {
        if weight.len() != self.dims.hidden {
            return Err(Error::shape("classifier width", self.dims.hidden, weight.len()));
        }
        self.params.head.weight.as_mut_slice().copy_from_slice(weight);
        self.params.head.bias[0] = bias;
        Ok(())
    }

    pub fn classifier_logit(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.dims.hidden {
            return Err(Error::shape("hidden vector", self.dims.hidden, h.len()));
        }
        Ok(dot(self.params.head.weight.as_slice(), h) + self.params.head.bias[0])
    }

    pub fn classify_prob(&self, h: &[f64]) -> Result<f64> {
        self.classifier_logit(h).map(sigmoid)
    }

    /// 1 iff the classifier probability is strictly above one half.
    pub fn classify_vector(&self, h: &[f64]) -> Result<u8> {
        Ok(u8::from(self.classify_prob(h)? > 0.5))
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        match tokens.iter().find(|&&t| t >= self.vocab()) {
            Some(t) => Err(Error::Input(format!("token {t} outside vocabulary of {}", self.vocab()))),
            None => Ok(()),
        }
    }

    /// Runs the stack over `tokens`, recording the top layer.
    pub fn forward(&self, tokens: &[usize]) -> Result<HiddenTrace> {
        self.forward_layer(tokens, self.dims.layers - 1)
    }

    /// As [`RnnModel::forward`] but records layer `layer` (0-based). The
    /// probability always comes from the top layer.
    pub fn forward_layer(&self, tokens: &[usize], layer: usize) -> Result<HiddenTrace> {
        if layer >= self.dims.layers {
            return Err(Error::Config(format!(
                "layer {layer} requested from a {}-layer model",
                self.dims.layers
            )));
        }
        self.check_tokens(tokens)?;
        let mut states: Vec<LayerState> = (0..self.dims.layers)
            .map(|_| LayerState::zeros(self.kind, self.dims.hidden))
            .collect();
        let mut recorded = Vec::with_capacity(tokens.len());
        for &tok in tokens {
            let mut input = self.params.embedding.row(tok).to_vec();
            for (l, cell) in self.params.layers.iter().enumerate() {
                let cache = cell.step_cached(&states[l].h, states[l].c.as_deref(), &input);
                states[l] = LayerState {
                    h: cache.h,
                    c: cache.c,
                };
                input.clone_from(&states[l].h);
            }
            recorded.push(states[layer].h.clone());
        }
        let prob = self.classify_prob(&states[self.dims.layers - 1].h)?;
        Ok(HiddenTrace {
            states: recorded,
            symbols: tokens.to_vec(),
            prob,
        })
    }

    /// Label predicted by the network for a whole sequence.
    pub fn predict(&self, tokens: &[usize]) -> Result<u8> {
        Ok(u8::from(self.forward(tokens)?.prob > 0.5))
    }

    /// Forward pass keeping every step's cache: `caches[t][layer]`.
    pub(crate) fn forward_cached(&self, tokens: &[usize]) -> Result<(Vec<Vec<StepCache>>, f64)> {
        self.check_tokens(tokens)?;
        let layers = &self.params.layers;
        let mut caches: Vec<Vec<StepCache>> = Vec::with_capacity(tokens.len());
        for (t, &tok) in tokens.iter().enumerate() {
            let mut step: Vec<StepCache> = Vec::with_capacity(layers.len());
            for (l, cell) in layers.iter().enumerate() {
                let input: Vec<f64> = if l == 0 {
                    self.params.embedding.row(tok).to_vec()
                } else {
                    step[l - 1].h.clone()
                };
                let cache = if t == 0 {
                    let zero = LayerState::zeros(self.kind, self.dims.hidden);
                    cell.step_cached(&zero.h, zero.c.as_deref(), &input)
                } else {
                    let prev = &caches[t - 1][l];
                    cell.step_cached(&prev.h, prev.c.as_deref(), &input)
                };
                step.push(cache);
            }
            caches.push(step);
        }
        let top = &caches[tokens.len() - 1][layers.len() - 1].h;
        let logit = self.classifier_logit(top)?;
        Ok((caches, logit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn random_cell<R: Rng>(kind: CellKind, d: usize, din: usize, scale: f64, rng: &mut R) -> CellParams {
        let mut cell = CellParams::zeros(kind, d, din);
        for b in cell.blocks_mut() {
            for w in b.weight.as_mut_slice() {
                *w = rng.gen_range(-scale..scale);
            }
            for w in &mut b.bias {
                *w = rng.gen_range(-scale..scale);
            }
        }
        cell
    }

    #[test]
    fn gate_counts() {
        let counts: Vec<usize> = [CellKind::Srn, CellKind::Mgu, CellKind::Gru, CellKind::Lstm]
            .iter()
            .map(|k| k.gate_count())
            .collect();
        assert_eq!(counts, [0, 1, 2, 3]);
        for k in CellKind::ALL {
            assert_eq!(CellKind::from_name(k.name()).unwrap(), k);
            // every block except the candidate is a gate
            let blocks = k.block_names().len();
            assert_eq!(k.gate_count(), if k == CellKind::Srn { 0 } else { blocks - 1 });
        }
    }

    #[test]
    fn zero_mgu_step() {
        let cell = CellParams::zeros(CellKind::Mgu, 3, 2);
        let cache = cell.step_cached(&[0.0; 3], None, &[0.0; 2]);
        assert_eq!(cache.acts[0], vec![0.5; 3]);
        assert_eq!(cache.cand, vec![0.0; 3]);
        assert_eq!(cache.h, vec![0.0; 3]);
    }

    #[test]
    fn closed_mgu_gate_keeps_state() {
        let mut rng = seeded_rng(1);
        let mut cell = random_cell(CellKind::Mgu, 4, 2, 0.5, &mut rng);
        cell.block_mut("f").unwrap().bias = vec![-30.0; 4];
        let state = LayerState {
            h: vec![0.3, -0.2, 0.9, -0.7],
            c: None,
        };
        let next = cell_step(CellKind::Mgu, &cell, &state, &[1.0, 0.0]).unwrap();
        for (a, b) in next.h.iter().zip(&state.h) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn mgu_matches_written_equations() {
        let mut rng = seeded_rng(2);
        let cell = random_cell(CellKind::Mgu, 2, 1, 1.0, &mut rng);
        let h = [0.4, -0.6];
        let x = [1.0];
        let wf = &cell.blocks()[0];
        let wh = &cell.blocks()[1];
        let f: Vec<f64> = (0..2)
            .map(|r| sigmoid(wf.weight.get(r, 0) * h[0] + wf.weight.get(r, 1) * h[1] + wf.weight.get(r, 2) * x[0] + wf.bias[r]))
            .collect();
        let cand: Vec<f64> = (0..2)
            .map(|r| {
                (wh.weight.get(r, 0) * f[0] * h[0] + wh.weight.get(r, 1) * f[1] * h[1] + wh.weight.get(r, 2) * x[0] + wh.bias[r]).tanh()
            })
            .collect();
        let expect: Vec<f64> = (0..2).map(|k| (1.0 - f[k]) * h[k] + f[k] * cand[k]).collect();
        let got = cell.step(&LayerState { h: h.to_vec(), c: None }, &x).unwrap();
        for (a, b) in got.h.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn step_rejects_bad_shapes() {
        let cell = CellParams::zeros(CellKind::Gru, 3, 2);
        let st = LayerState::zeros(CellKind::Gru, 3);
        assert!(matches!(cell.step(&st, &[0.0; 3]), Err(Error::Shape { .. })));
        let short = LayerState { h: vec![0.0; 2], c: None };
        assert!(matches!(cell.step(&short, &[0.0; 2]), Err(Error::Shape { .. })));
        assert!(cell_step(CellKind::Lstm, &cell, &st, &[0.0; 2]).is_err());
    }

    #[test]
    fn outputs_stay_in_open_unit_interval() {
        let mut rng = seeded_rng(3);
        for kind in CellKind::ALL {
            let mut max_abs: f64 = 0.0;
            for _ in 0..1000 {
                let cell = random_cell(kind, 5, 3, 3.0, &mut rng);
                let h: Vec<f64> = (0..5).map(|_| rng.gen_range(-0.999..0.999)).collect();
                let c = (kind == CellKind::Lstm).then(|| (0..5).map(|_| rng.gen_range(-5.0..5.0)).collect());
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let next = cell.step(&LayerState { h, c }, &x).unwrap();
                max_abs = next.h.iter().fold(max_abs, |m, v| m.max(v.abs()));
            }
            assert!(max_abs < 1.0, "{kind:?}: {max_abs}");
        }
    }

    #[test]
    fn zero_model_traces_are_zero() {
        for kind in CellKind::ALL {
            let mut model = RnnModel::zeros(kind, 2, Dims::new(2, 4, 3)).unwrap();
            model.set_classifier(&[0.0; 4], 0.7).unwrap();
            let trace = model.forward(&[0, 1, 1, 0, 1]).unwrap();
            assert_eq!(trace.len(), 5);
            assert!(trace.states.iter().flatten().all(|&v| v == 0.0));
            assert_eq!(trace.prob, sigmoid(0.7));
        }
    }

    #[test]
    fn forward_checks_tokens() {
        let model = RnnModel::zeros(CellKind::Mgu, 2, Dims::new(2, 3, 1)).unwrap();
        assert!(matches!(model.forward(&[0, 2]), Err(Error::Input(_))));
        assert!(model.forward(&[]).is_err());
        let t = model.forward(&[1]).unwrap();
        assert_eq!(t.len(), 1);
        assert!((0.0..=1.0).contains(&t.prob));
    }

    #[test]
    fn classify_vector_threshold() {
        let mut model = RnnModel::zeros(CellKind::Srn, 2, Dims::new(2, 3, 1)).unwrap();
        assert_eq!(model.classify_vector(&[0.3, -0.1, 0.9]).unwrap(), 0);
        model.set_classifier(&[1.0, 0.0, 0.0], 0.0).unwrap();
        assert_eq!(model.classify_vector(&[2.0, 0.0, 0.0]).unwrap(), 1);
        assert!(matches!(model.classify_vector(&[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn forward_is_consistent_and_deterministic() {
        let mut rng = seeded_rng(4);
        for kind in CellKind::ALL {
            let model = RnnModel::init(kind, 3, Dims::new(3, 5, 2), 0.8, &mut rng).unwrap();
            for _ in 0..100 {
                let len = rng.gen_range(1..10);
                let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..3)).collect();
                let a = model.forward(&tokens).unwrap();
                let b = model.forward(&tokens).unwrap();
                assert_eq!(a, b);
                assert_eq!(a.len(), tokens.len());
                assert_eq!(a.symbols, tokens);
                let last = a.states.last().unwrap();
                assert_eq!(model.classify_vector(last).unwrap(), u8::from(a.prob > 0.5));
                let (caches, logit) = model.forward_cached(&tokens).unwrap();
                assert_eq!(caches.len(), tokens.len());
                assert_eq!(sigmoid(logit), a.prob);
            }
        }
    }

    #[test]
    fn lower_layer_can_be_recorded() {
        let mut rng = seeded_rng(5);
        let model = RnnModel::init(CellKind::Gru, 2, Dims::new(2, 4, 3), 0.5, &mut rng).unwrap();
        let top = model.forward(&[0, 1, 1]).unwrap();
        let bottom = model.forward_layer(&[0, 1, 1], 0).unwrap();
        assert_eq!(top.prob, bottom.prob);
        assert_ne!(top.states, bottom.states);
        assert!(model.forward_layer(&[0], 3).is_err());
    }

    #[test]
    fn flat_parameter_access() {
        let mut rng = seeded_rng(6);
        let mut model = RnnModel::init(CellKind::Lstm, 2, Dims::new(2, 3, 2), 0.5, &mut rng).unwrap();
        let n = model.params().len();
        // 2x2 embedding + layer0 4x(3x5+3) + layer1 4x(3x6+3) + head 3+1
        assert_eq!(n, 4 + 4 * 18 + 4 * 21 + 4);
        assert!(model.params_mut().set_flat(n - 1, 0.25));
        assert_eq!(model.params().head.bias[0], 0.25);
        assert_eq!(model.params().get_flat(n), None);
    }
}
