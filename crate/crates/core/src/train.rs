//! Backpropagation through time, Adam, gradient checking and the training loop.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::{Dataset, Sequence};
use crate::math::sigmoid;
use crate::rnn::{CellKind, Dims, Params, RnnModel};
use crate::{seeded_rng, Error, Result};

const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Weights start uniform in `±init_scale`.
    pub init_scale: f64,
    /// Stop once training accuracy reaches this value; `None` trains every epoch.
    pub early_stop_acc: Option<f64>,
    /// Global-norm gradient clipping; `None` disables it.
    pub clip_norm: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 16,
            seed: 0,
            init_scale: 0.1,
            early_stop_acc: Some(1.0),
            clip_norm: Some(5.0),
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be positive");
        }
        if matches!(self.early_stop_acc, Some(a) if !(a > 0.0 && a <= 1.0)) {
            return bad("early_stop_acc must lie in (0, 1]");
        }
        if matches!(self.clip_norm, Some(c) if c.is_nan() || c <= 0.0) {
            return bad("clip_norm must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.adam_eps > 0.0) {
            return bad("Adam moments must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }
}

/// Gradient of the loss w.r.t. every tensor of a model, same layout as [`Params`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet(pub Params);

impl GradientSet {
    pub fn zeros_for(model: &RnnModel) -> Self {
        GradientSet(model.params().zeros_like())
    }

    pub fn global_norm(&self) -> f64 {
        libm::sqrt(self.0.tensors().iter().flat_map(|t| t.iter()).map(|g| g * g).sum())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.0.tensors_mut() {
            for g in t {
                *g *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }

    pub fn get_flat(&self, idx: usize) -> Option<f64> {
        self.0.get_flat(idx)
    }

    pub fn set_flat(&mut self, idx: usize, value: f64) -> bool {
        self.0.set_flat(idx, value)
    }
}

fn bce(p: f64, label: u8) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    if label == 1 {
        -libm::log(p)
    } else {
        -libm::log(1.0 - p)
    }
}

/// Mean binary cross-entropy of `batch` without gradients.
pub fn loss(model: &RnnModel, batch: &[Sequence]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let mut total = 0.0;
    for (index, seq) in batch.iter().enumerate() {
        let p = model.forward(seq.tokens())?.prob;
        let l = bce(p, seq.label());
        if !l.is_finite() {
            return Err(Error::Numerical { index });
        }
        total += l;
    }
    Ok(total / batch.len() as f64)
}

/// Mean binary cross-entropy of `batch` and its exact gradient.
pub fn loss_and_grads(model: &RnnModel, batch: &[Sequence]) -> Result<(f64, GradientSet)> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let n = batch.len() as f64;
    let mut grads = GradientSet::zeros_for(model);
    let mut total = 0.0;
    for (index, seq) in batch.iter().enumerate() {
        let l = accumulate_sequence(model, seq, 1.0 / n, &mut grads.0)?;
        if !l.is_finite() {
            return Err(Error::Numerical { index });
        }
        total += l;
    }
    if !grads.is_finite() {
        return Err(Error::Numerical { index: 0 });
    }
    Ok((total / n, grads))
}

/// Adds `weight * d loss(seq) / d params` into `grads`; returns the loss.
fn accumulate_sequence(model: &RnnModel, seq: &Sequence, weight: f64, grads: &mut Params) -> Result<f64> {
    let tokens = seq.tokens();
    let (caches, logit) = model.forward_cached(tokens)?;
    let p = sigmoid(logit);
    let loss = bce(p, seq.label());
    let dlogit = weight * (p - f64::from(seq.label()));

    let params = model.params();
    let dims = model.dims();
    let layers = dims.layers;
    let last = tokens.len() - 1;
    let top_h = &caches[last][layers - 1].h;

    grads.head.weight.add_outer(&[dlogit], top_h);
    grads.head.bias[0] += dlogit;

    let mut carry_h: Vec<Vec<f64>> = vec![vec![0.0; dims.hidden]; layers];
    let mut carry_c: Vec<Option<Vec<f64>>> = vec![None; layers];
    for (k, w) in params.head.weight.as_slice().iter().enumerate() {
        carry_h[layers - 1][k] = dlogit * w;
    }

    for t in (0..tokens.len()).rev() {
        let mut from_above: Option<Vec<f64>> = None;
        for l in (0..layers).rev() {
            let mut dh = core::mem::take(&mut carry_h[l]);
            if let Some(above) = &from_above {
                for (a, b) in dh.iter_mut().zip(above) {
                    *a += b;
                }
            }
            let cell = &params.layers[l];
            let (dh_prev, dc_prev, dx) = cell.step_backward(&caches[t][l], &dh, carry_c[l].as_deref(), &mut grads.layers[l]);
            carry_h[l] = dh_prev;
            carry_c[l] = (model.kind() == CellKind::Lstm).then_some(dc_prev);
            from_above = Some(dx);
        }
        if let Some(dx) = from_above {
            for (g, v) in grads.embedding.row_mut(tokens[t]).iter_mut().zip(&dx) {
                *g += v;
            }
        }
    }
    Ok(loss)
}

/// Largest relative error between analytic and central-difference gradients
/// of the loss on `seq`, over every scalar parameter.
pub fn grad_check(model: &RnnModel, seq: &Sequence, eps: f64) -> Result<f64> {
    let (_, analytic) = loss_and_grads(model, core::slice::from_ref(seq))?;
    grad_check_against(model, seq, eps, &analytic)
}

/// As [`grad_check`] but against a caller-supplied gradient.
pub fn grad_check_against(model: &RnnModel, seq: &Sequence, eps: f64, analytic: &GradientSet) -> Result<f64> {
    if !(eps > 0.0 && eps < 1e-2) {
        return Err(Error::Config("grad_check eps must lie in (0, 1e-2)".into()));
    }
    let batch = core::slice::from_ref(seq);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for idx in 0..model.params().len() {
        let orig = model.params().get_flat(idx).expect("index in range");
        probe.params_mut().set_flat(idx, orig + eps);
        let plus = loss(&probe, batch)?;
        probe.params_mut().set_flat(idx, orig - eps);
        let minus = loss(&probe, batch)?;
        probe.params_mut().set_flat(idx, orig);
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.get_flat(idx).ok_or(Error::shape("gradient size", model.params().len(), idx))?;
        let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Adaptive moment estimation.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// Applies one update. Tensor 0 (the embedding) is skipped when the
    /// model's embedding is frozen.
    pub fn step(&mut self, model: &mut RnnModel, grads: &GradientSet) {
        self.step = self.step.saturating_add(1);
        let c1 = 1.0 - libm::pow(self.beta1, f64::from(self.step));
        let c2 = 1.0 - libm::pow(self.beta2, f64::from(self.step));
        let train_embedding = model.train_embedding();
        let mut offset = 0;
        for (ti, (p, g)) in model
            .params_mut()
            .tensors_mut()
            .into_iter()
            .zip(grads.0.tensors())
            .enumerate()
        {
            let n = p.len();
            if ti == 0 && !train_embedding {
                offset += n;
                continue;
            }
            for k in 0..n {
                let j = offset + k;
                self.m[j] = self.beta1 * self.m[j] + (1.0 - self.beta1) * g[k];
                self.v[j] = self.beta2 * self.v[j] + (1.0 - self.beta2) * g[k] * g[k];
                let mhat = self.m[j] / c1;
                let vhat = self.v[j] / c2;
                p[k] -= self.lr * mhat / (libm::sqrt(vhat) + self.eps);
            }
            offset += n;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean mini-batch loss over the epoch.
    pub loss: f64,
    pub train_acc: f64,
    pub valid_acc: f64,
}

/// Mean loss and accuracy of `model` on `seqs`.
pub fn evaluate(model: &RnnModel, seqs: &[Sequence]) -> Result<(f64, f64)> {
    if seqs.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty split".into()));
    }
    let mut total = 0.0;
    let mut correct = 0usize;
    for seq in seqs {
        let p = model.forward(seq.tokens())?.prob;
        total += bce(p, seq.label());
        correct += usize::from(u8::from(p > 0.5) == seq.label());
    }
    let n = seqs.len() as f64;
    Ok((total / n, correct as f64 / n))
}

/// Trains a fresh model on `dataset.train` with mini-batch Adam.
///
/// Returns the snapshot with the best validation accuracy (ties go to the
/// lower validation loss) and the per-epoch history. Training stops early
/// once training accuracy reaches `hp.early_stop_acc`, if set.
pub fn train_model(kind: CellKind, dataset: &Dataset, dims: Dims, hp: &HyperParams) -> Result<(RnnModel, Vec<EpochStats>)> {
    hp.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut rng = seeded_rng(hp.seed);
    let model = RnnModel::init(kind, dataset.alphabet.len(), dims, hp.init_scale, &mut rng)?;
    train_from(model, dataset, hp, &mut rng)
}

/// Continues training `model` in place of a fresh initialisation.
pub fn train_from(
    mut model: RnnModel,
    dataset: &Dataset,
    hp: &HyperParams,
    rng: &mut crate::SeededRng,
) -> Result<(RnnModel, Vec<EpochStats>)> {
    hp.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let valid: &[Sequence] = if dataset.validation.is_empty() {
        &dataset.train
    } else {
        &dataset.validation
    };
    let mut adam = Adam::new(model.params().len(), hp.learning_rate, hp.beta1, hp.beta2, hp.adam_eps);
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut history = Vec::with_capacity(hp.epochs);
    let (valid_loss, valid_acc) = evaluate(&model, valid)?;
    let mut best = (model.clone(), valid_acc, valid_loss);
    let mut batch: Vec<Sequence> = Vec::with_capacity(hp.batch_size);

    for epoch in 1..=hp.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(hp.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| dataset.train[i].clone()));
            let (l, mut grads) = match loss_and_grads(&model, &batch) {
                Ok(v) => v,
                Err(Error::Numerical { .. }) => return Err(Error::Diverged { epoch }),
                Err(e) => return Err(e),
            };
            if let Some(max) = hp.clip_norm {
                let norm = grads.global_norm();
                if norm > max {
                    grads.scale(max / norm);
                }
            }
            adam.step(&mut model, &grads);
            if !model.params().is_finite() {
                return Err(Error::Diverged { epoch });
            }
            epoch_loss += l;
            n_batches += 1;
        }
        let (_, train_acc) = evaluate(&model, &dataset.train)?;
        let (valid_loss, valid_acc) = evaluate(&model, valid)?;
        let epoch_loss = epoch_loss / n_batches as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.push(EpochStats {
            epoch,
            loss: epoch_loss,
            train_acc,
            valid_acc,
        });
        if valid_acc > best.1 || (valid_acc == best.1 && valid_loss < best.2) {
            best = (model.clone(), valid_acc, valid_loss);
        }
        if hp.early_stop_acc.is_some_and(|a| train_acc >= a) {
            break;
        }
    }
    Ok((best.0, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_task_0110, Alphabet};
    use rand::Rng;

    fn seq(tokens: &[usize], label: u8) -> Sequence {
        Sequence::new(tokens.to_vec(), label).unwrap()
    }

    #[test]
    fn zero_model_loss_is_ln2() {
        let model = RnnModel::zeros(CellKind::Mgu, 2, Dims::new(2, 3, 2)).unwrap();
        let batch = [seq(&[0, 1], 1), seq(&[1, 1, 0], 0)];
        let (l, _) = loss_and_grads(&model, &batch).unwrap();
        assert!((l - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn duplicating_batch_changes_nothing() {
        let mut rng = seeded_rng(1);
        let model = RnnModel::init(CellKind::Gru, 2, Dims::new(2, 3, 2), 0.5, &mut rng).unwrap();
        let batch = alloc::vec![seq(&[0, 1, 1], 1), seq(&[1, 0], 0), seq(&[0], 0)];
        let doubled: Vec<Sequence> = batch.iter().chain(&batch).cloned().collect();
        let (l1, g1) = loss_and_grads(&model, &batch).unwrap();
        let (l2, g2) = loss_and_grads(&model, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.0.tensors().iter().zip(g2.0.tensors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        // f64 central differences bottom out near 1e-11 absolute, so the
        // draws use nonzero biases to keep gradients well above that floor.
        let mut rng = seeded_rng(2);
        for kind in CellKind::ALL {
            for layers in 1..=3 {
                let mut model = RnnModel::init(kind, 3, Dims::new(2, 4, layers), 0.7, &mut rng).unwrap();
                randomize_biases(&mut model, 0.7, &mut rng);
                model.set_train_embedding(true);
                let len = rng.gen_range(3..=6);
                let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..3)).collect();
                let s = seq(&tokens, rng.gen_range(0..2));
                let err = grad_check(&model, &s, 1e-5).unwrap();
                assert!(err < 1e-4, "{kind:?} L={layers}: {err}");
            }
        }
    }

    fn randomize_biases<R: Rng>(model: &mut RnnModel, scale: f64, rng: &mut R) {
        let params = model.params_mut();
        for layer in &mut params.layers {
            for b in layer.blocks_mut() {
                for v in &mut b.bias {
                    *v = rng.gen_range(-scale..scale);
                }
            }
        }
        params.head.bias[0] = rng.gen_range(-scale..scale);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut rng = seeded_rng(3);
        let model = RnnModel::init(CellKind::Lstm, 2, Dims::new(2, 4, 2), 0.7, &mut rng).unwrap();
        let s = seq(&[0, 1, 1, 0], 1);
        let (_, mut grads) = loss_and_grads(&model, core::slice::from_ref(&s)).unwrap();
        // corrupt the largest-magnitude entry
        let (idx, val) = (0..model.params().len())
            .map(|i| (i, grads.get_flat(i).unwrap()))
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        grads.set_flat(idx, 2.0 * val);
        let err = grad_check_against(&model, &s, 1e-5, &grads).unwrap();
        assert!(err > 0.3, "{err}");
    }

    #[test]
    fn grad_check_rejects_bad_eps() {
        let model = RnnModel::zeros(CellKind::Srn, 2, Dims::new(2, 2, 1)).unwrap();
        let s = seq(&[0], 0);
        assert!(matches!(grad_check(&model, &s, 0.0), Err(Error::Config(_))));
        assert!(grad_check(&model, &s, 0.1).is_err());
    }

    #[test]
    fn small_step_reduces_single_example_loss() {
        let mut rng = seeded_rng(4);
        for kind in CellKind::ALL {
            let mut model = RnnModel::init(kind, 2, Dims::new(2, 4, 2), 0.5, &mut rng).unwrap();
            let batch = [seq(&[0, 1, 1, 0], 1)];
            let (before, grads) = loss_and_grads(&model, &batch).unwrap();
            let mut adam = Adam::new(model.params().len(), 1e-5, 0.9, 0.999, 1e-8);
            adam.step(&mut model, &grads);
            let after = loss(&model, &batch).unwrap();
            assert!(after < before, "{kind:?}: {after} >= {before}");
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let ds = gen_task_0110(40, 0, 1).unwrap();
        let hp = HyperParams {
            learning_rate: 0.0,
            epochs: 3,
            seed: 9,
            ..HyperParams::default()
        };
        let (trained, history) = train_model(CellKind::Mgu, &ds, Dims::new(2, 4, 1), &hp).unwrap();
        let mut rng = seeded_rng(9);
        let fresh = RnnModel::init(CellKind::Mgu, 2, Dims::new(2, 4, 1), hp.init_scale, &mut rng).unwrap();
        assert_eq!(trained, fresh);
        assert!(history.len() <= 3);
    }

    #[test]
    fn training_is_reproducible_and_bounded() {
        let ds = gen_task_0110(64, 0, 2).unwrap();
        let hp = HyperParams {
            learning_rate: 0.01,
            epochs: 4,
            seed: 5,
            ..HyperParams::default()
        };
        let a = train_model(CellKind::Gru, &ds, Dims::new(2, 4, 2), &hp).unwrap();
        let b = train_model(CellKind::Gru, &ds, Dims::new(2, 4, 2), &hp).unwrap();
        assert_eq!(a, b);
        assert!(a.1.len() <= hp.epochs);
        assert!(a.1.iter().enumerate().all(|(i, e)| e.epoch == i + 1));
    }

    #[test]
    fn rejects_bad_hyperparams_and_empty_data() {
        let ds = gen_task_0110(8, 0, 2).unwrap();
        let hp = HyperParams {
            early_stop_acc: Some(1.5),
            ..HyperParams::default()
        };
        assert!(train_model(CellKind::Srn, &ds, Dims::new(2, 2, 1), &hp).is_err());
        let empty = Dataset::new(Alphabet::binary(), "0110", 0, Vec::new(), Vec::new(), Vec::new()).unwrap();
        assert!(train_model(CellKind::Srn, &empty, Dims::new(2, 2, 1), &HyperParams::default()).is_err());
    }
}
