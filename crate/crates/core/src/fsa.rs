//! Automata compiled from clustered hidden states.
//!
//! States are clusters; an extra start state (index `n_states`) holds no
//! hidden point. For every symbol `s`, `N_s(i, j)` counts how often reading
//! `s` moved a sequence from cluster `i` (or the start) into cluster `j`. The
//! transition table keeps the most frequent successor per `(state, symbol)`,
//! and a cluster is accepting when the network's classifier labels the mean
//! of its hidden vectors positive.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::cluster::{cluster_pool_with, clustering_points, distinct_count, ClusterOptions, Clustering, Method, TracePool};
use crate::data::{Alphabet, Sequence};
use crate::rnn::RnnModel;
use crate::{seeded_rng, Error, Result};

/// Per-symbol transition counts; row `n_states` is the start state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTensor {
    n_symbols: usize,
    n_states: usize,
    counts: Vec<u64>,
}

impl CountTensor {
    pub fn zeros(n_symbols: usize, n_states: usize) -> Self {
        CountTensor {
            n_symbols,
            n_states,
            counts: vec![0; n_symbols * (n_states + 1) * n_states],
        }
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    fn offset(&self, symbol: usize, from: usize) -> usize {
        (symbol * (self.n_states + 1) + from) * self.n_states
    }

    /// Counts out of `from` (a state or the start row) on `symbol`.
    pub fn row(&self, symbol: usize, from: usize) -> &[u64] {
        let o = self.offset(symbol, from);
        &self.counts[o..o + self.n_states]
    }

    pub fn get(&self, symbol: usize, from: usize, to: usize) -> u64 {
        self.row(symbol, from)[to]
    }

    pub fn increment(&mut self, symbol: usize, from: usize, to: usize) {
        let o = self.offset(symbol, from);
        self.counts[o + to] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Counts every transition of every pooled sequence. The first point of a
/// sequence is a transition out of the start row.
pub fn build_counts(pool: &TracePool, clustering: &Clustering, n_symbols: usize) -> Result<CountTensor> {
    if clustering.assign.len() != pool.len() {
        return Err(Error::Structural(format!(
            "clustering covers {} points but the pool has {}",
            clustering.assign.len(),
            pool.len()
        )));
    }
    let k = clustering.k;
    let mut counts = CountTensor::zeros(n_symbols, k);
    let mut prev = k;
    for (p, &c) in pool.points().iter().zip(&clustering.assign) {
        if p.symbol >= n_symbols {
            return Err(Error::Input(format!("symbol {} outside alphabet of {n_symbols}", p.symbol)));
        }
        if c >= k {
            return Err(Error::Structural(format!("cluster id {c} outside 0..{k}")));
        }
        let from = if p.position == 1 { k } else { prev };
        counts.increment(p.symbol, from, c);
        prev = c;
    }
    Ok(counts)
}

/// Row-major `(n_states + 1) × n_symbols` table; `None` is an undefined move.
pub type TransitionTable = Vec<Option<usize>>;

/// Most frequent successor per `(state, symbol)`; ties go to the lowest state
/// and rows without observations stay undefined.
pub fn determinize(counts: &CountTensor) -> TransitionTable {
    let rows = counts.n_states + 1;
    let mut table = vec![None; rows * counts.n_symbols];
    for from in 0..rows {
        for s in 0..counts.n_symbols {
            let mut best: Option<(usize, u64)> = None;
            for (to, &n) in counts.row(s, from).iter().enumerate() {
                if n > 0 && best.is_none_or(|(_, b)| n > b) {
                    best = Some((to, n));
                }
            }
            table[from * counts.n_symbols + s] = best.map(|(to, _)| to);
        }
    }
    table
}

/// Mean of each cluster's original hidden vectors (`None` for an empty cluster).
pub fn cluster_centres(clustering: &Clustering, pool: &TracePool) -> Vec<Option<Vec<f64>>> {
    let d = pool.dim();
    let mut sums = vec![vec![0.0; d]; clustering.k];
    let mut counts = vec![0usize; clustering.k];
    for (p, &c) in pool.points().iter().zip(&clustering.assign) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(&p.h) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(mut s, n)| {
            (n > 0).then(|| {
                for v in &mut s {
                    *v /= n as f64;
                }
                s
            })
        })
        .collect()
}

/// Clusters whose hidden-space centre the classifier labels positive.
pub fn accepting_states(clustering: &Clustering, pool: &TracePool, model: &RnnModel) -> Result<Vec<usize>> {
    if clustering.assign.len() != pool.len() {
        return Err(Error::Structural("clustering does not cover the pool".into()));
    }
    let mut out = Vec::new();
    for (c, centre) in cluster_centres(clustering, pool).into_iter().enumerate() {
        if let Some(centre) = centre {
            if model.classify_vector(&centre)? == 1 {
                out.push(c);
            }
        }
    }
    Ok(out)
}

/// Deterministic automaton with an explicit start row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fsa {
    alphabet: Alphabet,
    n_states: usize,
    accepting: Vec<bool>,
    table: TransitionTable,
}

impl Fsa {
    /// `transitions` is row-major `(n_states + 1) × |alphabet|`, the last row
    /// being the start state; `accepting` lists real states.
    pub fn new(alphabet: Alphabet, n_states: usize, accepting: &[usize], transitions: TransitionTable) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::Structural("an automaton needs at least one state".into()));
        }
        let expected = (n_states + 1) * alphabet.len();
        if transitions.len() != expected {
            return Err(Error::shape("transition table", expected, transitions.len()));
        }
        if let Some(bad) = transitions.iter().flatten().find(|&&t| t >= n_states) {
            return Err(Error::Structural(format!("transition target {bad} is not a real state")));
        }
        let mut acc = vec![false; n_states];
        for &a in accepting {
            if a >= n_states {
                return Err(Error::Structural(format!("accepting state {a} is not a real state")));
            }
            acc[a] = true;
        }
        Ok(Fsa {
            alphabet,
            n_states,
            accepting: acc,
            table: transitions,
        })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// Index of the start state (`n_states`).
    pub fn start(&self) -> usize {
        self.n_states
    }

    pub fn is_accepting(&self, state: usize) -> bool {
        self.accepting.get(state).copied().unwrap_or(false)
    }

    /// Accepting states in ascending order.
    pub fn accepting(&self) -> Vec<usize> {
        (0..self.n_states).filter(|&s| self.accepting[s]).collect()
    }

    pub fn table(&self) -> &TransitionTable {
        &self.table
    }

    /// Raw table entry; `None` when undefined.
    pub fn transition(&self, state: usize, symbol: usize) -> Option<usize> {
        self.table[state * self.alphabet.len() + symbol]
    }

    /// Total transition function: undefined moves stay put at a real state
    /// and fall to state 0 from the start.
    pub fn step(&self, state: usize, symbol: usize) -> Result<usize> {
        if state > self.n_states {
            return Err(Error::Input(format!("state {state} outside 0..={}", self.n_states)));
        }
        if symbol >= self.alphabet.len() {
            return Err(Error::Input(format!("symbol {symbol} outside alphabet of {}", self.alphabet.len())));
        }
        Ok(match self.transition(state, symbol) {
            Some(next) => next,
            None if state == self.start() => 0,
            None => state,
        })
    }

    /// States visited from the start, one per token (start excluded).
    pub fn path(&self, tokens: &[usize]) -> Result<Vec<usize>> {
        let mut state = self.start();
        tokens
            .iter()
            .map(|&t| {
                state = self.step(state, t)?;
                Ok(state)
            })
            .collect()
    }

    pub fn classify(&self, tokens: &[usize]) -> Result<u8> {
        let mut state = self.start();
        for &t in tokens {
            state = self.step(state, t)?;
        }
        Ok(u8::from(self.is_accepting(state)))
    }
}

pub fn fsa_step(fsa: &Fsa, state: usize, symbol: usize) -> Result<usize> {
    fsa.step(state, symbol)
}

pub fn fsa_classify(fsa: &Fsa, seq: &Sequence) -> Result<u8> {
    fsa.classify(seq.tokens())
}

/// Anything that labels a token sequence.
pub trait Classifier {
    fn predict(&self, tokens: &[usize]) -> Result<u8>;
}

impl Classifier for Fsa {
    fn predict(&self, tokens: &[usize]) -> Result<u8> {
        self.classify(tokens)
    }
}

impl Classifier for RnnModel {
    fn predict(&self, tokens: &[usize]) -> Result<u8> {
        RnnModel::predict(self, tokens)
    }
}

impl Classifier for FsaEnsemble {
    fn predict(&self, tokens: &[usize]) -> Result<u8> {
        self.classify(tokens)
    }
}

/// Fraction of `split` whose label `classifier` reproduces.
pub fn accuracy<C: Classifier + ?Sized>(classifier: &C, split: &[Sequence]) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Input("accuracy of an empty split".into()));
    }
    let mut correct = 0usize;
    for seq in split {
        correct += usize::from(classifier.predict(seq.tokens())? == seq.label());
    }
    Ok(correct as f64 / split.len() as f64)
}

/// Odd-sized committee of automata over one alphabet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FsaEnsemble {
    members: Vec<Fsa>,
}

impl FsaEnsemble {
    pub fn new(members: Vec<Fsa>) -> Result<Self> {
        if members.len().is_multiple_of(2) {
            return Err(Error::Config(format!(
                "majority voting needs an odd number of members, got {}",
                members.len()
            )));
        }
        let alphabet = members[0].alphabet();
        if members.iter().any(|m| m.alphabet() != alphabet) {
            return Err(Error::Config("ensemble members disagree on the alphabet".into()));
        }
        Ok(FsaEnsemble { members })
    }

    pub fn members(&self) -> &[Fsa] {
        &self.members
    }

    /// 1 iff strictly more than half the members accept.
    pub fn classify(&self, tokens: &[usize]) -> Result<u8> {
        let mut votes = Vec::with_capacity(self.members.len());
        for m in &self.members {
            votes.push(m.classify(tokens)?);
        }
        majority(&votes)
    }
}

/// Majority of an odd number of binary votes.
pub fn majority(votes: &[u8]) -> Result<u8> {
    if votes.len().is_multiple_of(2) {
        return Err(Error::Config(format!("{} votes cannot form a strict majority", votes.len())));
    }
    let yes = votes.iter().filter(|&&v| v == 1).count();
    Ok(u8::from(2 * yes > votes.len()))
}

pub fn ensemble_classify(ens: &FsaEnsemble, seq: &Sequence) -> Result<u8> {
    ens.classify(seq.tokens())
}

/// Everything produced by one extraction run.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub fsa: Fsa,
    pub clustering: Clustering,
    pub counts: CountTensor,
}

/// Cluster, count, determinise and label accepting states.
pub fn extract<R: Rng + ?Sized>(
    model: &RnnModel,
    alphabet: &Alphabet,
    pool: &TracePool,
    k: usize,
    method: Method,
    opts: &ClusterOptions,
    rng: &mut R,
) -> Result<Extraction> {
    if alphabet.len() != model.vocab() {
        return Err(Error::shape("alphabet size", model.vocab(), alphabet.len()));
    }
    if pool.dim() != model.dims().hidden {
        return Err(Error::shape("pool dimension", model.dims().hidden, pool.dim()));
    }
    let clustering = cluster_pool_with(pool, k, method, opts, rng)?;
    let counts = build_counts(pool, &clustering, alphabet.len())?;
    let table = determinize(&counts);
    let accepting = accepting_states(&clustering, pool, model)?;
    let fsa = Fsa::new(alphabet.clone(), k, &accepting, table)?;
    Ok(Extraction {
        fsa,
        clustering,
        counts,
    })
}

pub fn build_fsa<R: Rng + ?Sized>(
    model: &RnnModel,
    alphabet: &Alphabet,
    pool: &TracePool,
    k: usize,
    method: Method,
    rng: &mut R,
) -> Result<Fsa> {
    extract(model, alphabet, pool, k, method, &ClusterOptions::default(), rng).map(|e| e.fsa)
}

/// Seed used for cluster count `k` inside a sweep seeded with `seed`.
pub fn k_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Outcome of a cluster-count sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinK {
    Reached(usize),
    NotReached,
}

impl MinK {
    /// Numeric value, with `sentinel` standing in for an unmet target.
    pub fn value(self, sentinel: usize) -> usize {
        match self {
            MinK::Reached(k) => k,
            MinK::NotReached => sentinel,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub min_k: MinK,
    /// `(k, accuracy)` for every swept k, in order.
    pub curve: Vec<(usize, f64)>,
}

/// Settings shared by every k of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpec {
    pub method: Method,
    pub options: ClusterOptions,
    pub target: f64,
    pub seed: u64,
}

/// Builds one automaton per `k` (each seeded with [`k_seed`]) and evaluates
/// it on `eval`; `min_k` is the first k whose accuracy reaches `target`.
pub fn sweep_k(
    model: &RnnModel,
    alphabet: &Alphabet,
    pool: &TracePool,
    ks: &[usize],
    eval: &[Sequence],
    spec: &SweepSpec,
) -> Result<Sweep> {
    check_ks(ks)?;
    let mut curve = Vec::with_capacity(ks.len());
    for &k in ks {
        curve.push((k, sweep_point(model, alphabet, pool, k, eval, spec)?));
    }
    Ok(Sweep {
        min_k: first_reaching(&curve, spec.target),
        curve,
    })
}

pub fn check_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() {
        return Err(Error::Config("no cluster counts to sweep".into()));
    }
    if ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("cluster counts must be strictly ascending".into()));
    }
    Ok(())
}

/// Accuracy of the automaton built with `k` clusters under `spec`.
pub fn sweep_point(
    model: &RnnModel,
    alphabet: &Alphabet,
    pool: &TracePool,
    k: usize,
    eval: &[Sequence],
    spec: &SweepSpec,
) -> Result<f64> {
    let fsa = sweep_fsa(model, alphabet, pool, k, spec)?.fsa;
    accuracy(&fsa, eval)
}

/// The extraction a sweep performs at `k`, reproducible on its own.
///
/// A sweep can ask for more clusters than the pool has distinct points
/// (sequences sharing a prefix share hidden states); the cluster count is
/// then capped at the distinct-point count so the curve has no gaps.
pub fn sweep_fsa(model: &RnnModel, alphabet: &Alphabet, pool: &TracePool, k: usize, spec: &SweepSpec) -> Result<Extraction> {
    let mut rng = seeded_rng(k_seed(spec.seed, k));
    let distinct = distinct_count(&clustering_points(pool, spec.method, &spec.options));
    let k = k.min(distinct.max(1));
    extract(model, alphabet, pool, k, spec.method, &spec.options, &mut rng)
}

pub fn first_reaching(curve: &[(usize, f64)], target: f64) -> MinK {
    curve
        .iter()
        .find(|(_, acc)| *acc >= target)
        .map_or(MinK::NotReached, |&(k, _)| MinK::Reached(k))
}
