//! Alphabets, labelled sequences and the synthetic binary tasks.
//!
//! Two tasks are provided over the alphabet `{"0", "1"}`:
//!
//! * `"0110"`: length-4 strings, positive iff the string is exactly `0110`.
//!   Validation always holds the 16 distinct length-4 strings once each.
//! * `"000"`: strings of random length, positive iff they contain three
//!   consecutive zeros.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::{seeded_rng, Error, Result, SeededRng};

/// Ordered set of distinct symbols; a symbol's position is its index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<String>,
}

impl Alphabet {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.is_empty() {
            return Err(Error::Config("alphabet must not be empty".into()));
        }
        for (i, s) in symbols.iter().enumerate() {
            if symbols[..i].contains(s) {
                return Err(Error::Config(format!("duplicate symbol {s:?} in alphabet")));
            }
        }
        Ok(Alphabet { symbols })
    }

    /// The alphabet `{"0", "1"}` shared by the synthetic tasks.
    pub fn binary() -> Self {
        Alphabet {
            symbols: alloc::vec!["0".to_string(), "1".to_string()],
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, index: usize) -> Option<&str> {
        self.symbols.get(index).map(String::as_str)
    }

    pub fn index(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Maps symbol strings to indices, failing on the first unknown one.
    pub fn encode<S: AsRef<str>>(&self, symbols: &[S]) -> Result<Vec<usize>> {
        symbols
            .iter()
            .map(|s| {
                self.index(s.as_ref())
                    .ok_or_else(|| Error::Input(format!("symbol {:?} not in alphabet", s.as_ref())))
            })
            .collect()
    }
}

/// A non-empty token sequence with a binary label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    tokens: Vec<usize>,
    label: u8,
}

impl Sequence {
    pub fn new(tokens: Vec<usize>, label: u8) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Input("sequence must contain at least one token".into()));
        }
        if label > 1 {
            return Err(Error::Input(format!("label must be 0 or 1, got {label}")));
        }
        Ok(Sequence { tokens, label })
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn label(&self) -> u8 {
        self.label
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub(crate) fn check_alphabet(&self, size: usize) -> Result<()> {
        match self.tokens.iter().find(|&&t| t >= size) {
            Some(t) => Err(Error::Input(format!(
                "token index {t} outside alphabet of size {size}"
            ))),
            None => Ok(()),
        }
    }
}

/// Which split of a dataset a sequence belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Split::ALL.into_iter().find(|s| s.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub alphabet: Alphabet,
    pub train: Vec<Sequence>,
    pub validation: Vec<Sequence>,
    pub test: Vec<Sequence>,
    pub task_name: String,
    pub seed: u64,
}

impl Dataset {
    /// Assembles a dataset, checking every token against the alphabet.
    pub fn new(
        alphabet: Alphabet,
        task_name: impl Into<String>,
        seed: u64,
        train: Vec<Sequence>,
        validation: Vec<Sequence>,
        test: Vec<Sequence>,
    ) -> Result<Self> {
        for seq in train.iter().chain(&validation).chain(&test) {
            seq.check_alphabet(alphabet.len())?;
        }
        Ok(Dataset {
            alphabet,
            train,
            validation,
            test,
            task_name: task_name.into(),
            seed,
        })
    }

    pub fn split(&self, split: Split) -> &[Sequence] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// Fraction of positive labels in a split (0 for an empty split).
    pub fn positive_rate(&self, split: Split) -> f64 {
        let seqs = self.split(split);
        if seqs.is_empty() {
            return 0.0;
        }
        seqs.iter().filter(|s| s.label() == 1).count() as f64 / seqs.len() as f64
    }
}

/// The built-in synthetic tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Exactly the string `0110`.
    Exact0110,
    /// Contains `000` as a substring.
    Contains000,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Exact0110 => "0110",
            Task::Contains000 => "000",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "0110" => Ok(Task::Exact0110),
            "000" => Ok(Task::Contains000),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }

    /// Ground-truth label of a binary token list (0 = symbol "0").
    pub fn label(self, tokens: &[usize]) -> u8 {
        let hit = match self {
            Task::Exact0110 => tokens == [0, 1, 1, 0],
            Task::Contains000 => tokens.windows(3).any(|w| w == [0, 0, 0]),
        };
        u8::from(hit)
    }
}

/// Labels `tokens` under the task called `task`.
pub fn label_oracle(task: &str, tokens: &[usize]) -> Result<u8> {
    let task = Task::from_name(task)?;
    if let Some(t) = tokens.iter().find(|&&t| t > 1) {
        return Err(Error::Input(format!("token {t} is not binary")));
    }
    Ok(task.label(tokens))
}

/// All `2^len` binary strings in lexicographic order.
pub fn enumerate_binary(len: usize) -> Vec<Vec<usize>> {
    (0..1usize << len)
        .map(|code| (0..len).rev().map(|bit| (code >> bit) & 1).collect())
        .collect()
}

fn random_binary(rng: &mut SeededRng, len: usize) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(0..2)).collect()
}

fn labelled(task: Task, tokens: Vec<usize>) -> Sequence {
    let label = task.label(&tokens);
    Sequence { tokens, label }
}

/// Task `"0110"`: `n_train` random length-4 strings (duplicates kept), the 16
/// distinct strings as validation, `n_test` random strings for testing.
pub fn gen_task_0110(n_train: usize, n_test: usize, seed: u64) -> Result<Dataset> {
    if n_train == 0 {
        return Err(Error::Config("n_train must be at least 1".into()));
    }
    let task = Task::Exact0110;
    let mut rng = seeded_rng(seed);
    let train = (0..n_train)
        .map(|_| labelled(task, random_binary(&mut rng, 4)))
        .collect();
    let validation = enumerate_binary(4)
        .into_iter()
        .map(|t| labelled(task, t))
        .collect();
    let test = (0..n_test)
        .map(|_| labelled(task, random_binary(&mut rng, 4)))
        .collect();
    Ok(Dataset {
        alphabet: Alphabet::binary(),
        train,
        validation,
        test,
        task_name: task.name().into(),
        seed,
    })
}

/// Like [`gen_task_0110`] but the training split is the 16 distinct strings
/// in order, repeated until `n_train` sequences are produced.
pub fn gen_task_0110_enumerated(n_train: usize, n_test: usize, seed: u64) -> Result<Dataset> {
    let mut ds = gen_task_0110(n_train.max(1), n_test, seed)?;
    ds.train = ds.validation.iter().cycle().take(n_train).cloned().collect();
    if ds.train.is_empty() {
        return Err(Error::Config("n_train must be at least 1".into()));
    }
    Ok(ds)
}

/// Task `"000"`: every split drawn independently with length uniform in
/// `len_range` (inclusive) and uniform tokens.
pub fn gen_task_000(
    n_train: usize,
    n_valid: usize,
    n_test: usize,
    len_range: (usize, usize),
    seed: u64,
) -> Result<Dataset> {
    let (min, max) = len_range;
    if min < 3 {
        return Err(Error::Config(format!(
            "minimum length {min} < 3 admits no positive for task \"000\""
        )));
    }
    if min > max {
        return Err(Error::Config(format!("empty length range {min}..={max}")));
    }
    let task = Task::Contains000;
    let mut rng = seeded_rng(seed);
    let mut draw = |n: usize| -> Vec<Sequence> {
        (0..n)
            .map(|_| {
                let len = rng.gen_range(min..=max);
                labelled(task, random_binary(&mut rng, len))
            })
            .collect()
    };
    let train = draw(n_train);
    let validation = draw(n_valid);
    let test = draw(n_test);
    Ok(Dataset {
        alphabet: Alphabet::binary(),
        train,
        validation,
        test,
        task_name: task.name().into(),
        seed,
    })
}
