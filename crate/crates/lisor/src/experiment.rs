//! End-to-end experiment runner.
//!
//! Layout under the output directory:
//!
//! ```text
//! config.json  dataset.jsonl  report.json  report.txt
//! <KIND>/ensemble.csv  <KIND>/ensemble.json
//! <KIND>/trial<t>/{model.json, train.csv, train.json, sweep.csv,
//!                  summary.json, fsa.json, fsa.dot, fsa.classes.json}
//! ```
//!
//! Trials are numbered from 1; trial `t` is seeded with `seed + t - 1`.

use std::path::{Path, PathBuf};

use lisor_core::cluster::{collect_traces, TracePool};
use lisor_core::data::{Dataset, Sequence, Split, Task};
use lisor_core::dot::{to_dot, DotOptions};
use lisor_core::fsa::{accuracy, first_reaching, sweep_fsa, sweep_point, Fsa, FsaEnsemble, MinK, Sweep, SweepSpec};
use lisor_core::rnn::{CellKind, RnnModel};
use lisor_core::train::train_model;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{FormatError, Result};
use crate::formats::tables::{self, CurveRow, EnsembleRow, TrainRow};
use crate::formats::{dataset, fsa as fsa_format, model, read_text, write_text};

/// Paths of every artifact of a run.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.jsonl")
    }

    pub fn kind_dir(&self, kind: CellKind) -> PathBuf {
        self.root.join(kind.name())
    }

    pub fn trial_dir(&self, kind: CellKind, trial: usize) -> PathBuf {
        self.kind_dir(kind).join(format!("trial{trial}"))
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_txt(&self) -> PathBuf {
        self.root.join("report.txt")
    }
}

/// Outcome of training one (kind, trial) job, stored as `train.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub kind: String,
    pub trial: usize,
    pub seed: u64,
    /// `ok`, `diverged` or `failed`.
    pub status: String,
    pub message: Option<String>,
    pub epochs_run: usize,
    pub rnn_train_acc: Option<f64>,
    pub rnn_valid_acc: Option<f64>,
    pub rnn_test_acc: Option<f64>,
}

impl TrainSummary {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Outcome of the cluster-count sweep of one trial, stored as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub kind: String,
    pub trial: usize,
    pub seed: u64,
    pub status: String,
    pub message: Option<String>,
    pub task: String,
    pub method: String,
    pub target: f64,
    /// Split the sweep accuracies are measured on.
    pub eval_split: String,
    pub min_k: Option<usize>,
    /// `min_k`, or the sentinel when the target was not reached.
    pub min_k_value: usize,
    pub sentinel: usize,
    /// Cluster count of the saved automaton.
    pub fsa_k: Option<usize>,
    pub fsa_eval_accuracy: Option<f64>,
    pub fsa_test_accuracy: Option<f64>,
    pub rnn_test_acc: Option<f64>,
}

/// Split used to measure automaton accuracy during a sweep.
///
/// For "0110" the 16-string validation set doubles as the exhaustive
/// evaluation set; otherwise automata learned on validation are tested on test.
pub fn eval_split(task: Task) -> Split {
    match task {
        Task::Exact0110 => Split::Validation,
        Task::Contains000 => Split::Test,
    }
}

pub fn sweep_spec(cfg: &ExperimentConfig, seed: u64) -> Result<SweepSpec> {
    Ok(SweepSpec {
        method: cfg.cluster_method()?,
        options: cfg.cluster_options(),
        target: cfg.target_accuracy,
        seed,
    })
}

fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value).expect("summary serialises"))
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| FormatError::json(e.line(), e))
}

/// Every (kind, trial) pair, kind-major, trials from 1.
pub fn jobs(cfg: &ExperimentConfig) -> Result<Vec<(CellKind, usize)>> {
    let kinds = cfg.cell_kinds()?;
    Ok(kinds
        .iter()
        .flat_map(|&k| (1..=cfg.n_trials).map(move |t| (k, t)))
        .collect())
}

/// Writes the config and dataset, returning the dataset.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Dataset> {
    let layout = Layout::new(&cfg.output_dir);
    let ds = cfg.dataset()?;
    write_text(&layout.config(), &cfg.to_json())?;
    dataset::save(&ds, &layout.dataset())?;
    Ok(ds)
}

/// Loads the run's dataset, regenerating it when absent.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let path = Layout::new(&cfg.output_dir).dataset();
    if path.exists() {
        dataset::load(&path)
    } else {
        prepare(cfg)
    }
}

/// Trains one job and writes `model.json`, `train.csv` and `train.json`.
pub fn train_job(cfg: &ExperimentConfig, ds: &Dataset, kind: CellKind, trial: usize) -> Result<TrainSummary> {
    let dir = Layout::new(&cfg.output_dir).trial_dir(kind, trial);
    let seed = cfg.trial_seed(trial - 1);
    let mut summary = TrainSummary {
        kind: kind.name().into(),
        trial,
        seed,
        status: "ok".into(),
        message: None,
        epochs_run: 0,
        rnn_train_acc: None,
        rnn_valid_acc: None,
        rnn_test_acc: None,
    };
    match train_model(kind, ds, cfg.dims(), &cfg.hyper_params(seed)) {
        Ok((trained, history)) => {
            let rows: Vec<TrainRow> = history.iter().map(TrainRow::from).collect();
            tables::save_train(&rows, &dir.join("train.csv"))?;
            model::save(&trained, &dir.join("model.json"))?;
            summary.epochs_run = history.len();
            summary.rnn_train_acc = Some(accuracy(&trained, &ds.train)?);
            if !ds.validation.is_empty() {
                summary.rnn_valid_acc = Some(accuracy(&trained, &ds.validation)?);
            }
            if !ds.test.is_empty() {
                summary.rnn_test_acc = Some(accuracy(&trained, &ds.test)?);
            }
        }
        Err(lisor_core::Error::Diverged { epoch }) => {
            summary.status = "diverged".into();
            summary.epochs_run = epoch;
            summary.message = Some(format!("training diverged at epoch {epoch}"));
        }
        Err(e) => {
            summary.status = "failed".into();
            summary.message = Some(e.to_string());
        }
    }
    save_json(&summary, &dir.join("train.json"))?;
    Ok(summary)
}

/// Trains every job in parallel; divergence is recorded and the run goes on.
pub fn run_train(cfg: &ExperimentConfig) -> Result<Vec<TrainSummary>> {
    let ds = prepare(cfg)?;
    jobs(cfg)?
        .par_iter()
        .map(|&(kind, trial)| train_job(cfg, &ds, kind, trial))
        .collect()
}

/// Accuracy curve over `ks`, computed in parallel.
pub fn sweep_parallel(
    model: &RnnModel,
    ds: &Dataset,
    pool: &TracePool,
    ks: &[usize],
    eval: &[Sequence],
    spec: &SweepSpec,
) -> Result<Sweep> {
    lisor_core::fsa::check_ks(ks)?;
    let accs: Vec<f64> = ks
        .par_iter()
        .map(|&k| sweep_point(model, &ds.alphabet, pool, k, eval, spec))
        .collect::<lisor_core::Result<_>>()?;
    let curve: Vec<(usize, f64)> = ks.iter().copied().zip(accs).collect();
    Ok(Sweep {
        min_k: first_reaching(&curve, spec.target),
        curve,
    })
}

/// Sweep result together with the automaton kept for a trial.
#[derive(Debug, Clone)]
pub struct Extracted {
    pub sweep: Sweep,
    /// Cluster count of `fsa`: `min_k`, else the most accurate k.
    pub k: usize,
    pub fsa: Fsa,
    pub eval_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// Sweeps `cfg.k_range` for one trained model.
pub fn extract_model(cfg: &ExperimentConfig, ds: &Dataset, model: &RnnModel, seed: u64) -> Result<Extracted> {
    let spec = sweep_spec(cfg, seed)?;
    let pool = collect_traces(model, &ds.validation)?;
    let eval = ds.split(eval_split(cfg.task_kind()?));
    let sweep = sweep_parallel(model, ds, &pool, &cfg.ks(), eval, &spec)?;
    let k = match sweep.min_k {
        MinK::Reached(k) => k,
        MinK::NotReached => {
            sweep
                .curve
                .iter()
                .fold((0, f64::NEG_INFINITY), |best, &(k, a)| if a > best.1 { (k, a) } else { best })
                .0
        }
    };
    let fsa = sweep_fsa(model, &ds.alphabet, &pool, k, &spec)?.fsa;
    let eval_accuracy = accuracy(&fsa, eval)?;
    let test_accuracy = if ds.test.is_empty() { None } else { Some(accuracy(&fsa, &ds.test)?) };
    Ok(Extracted {
        sweep,
        k,
        fsa,
        eval_accuracy,
        test_accuracy,
    })
}

/// Rendering options for saved automata.
pub fn dot_options(cfg: &ExperimentConfig) -> DotOptions {
    DotOptions {
        merge_edges: true,
        highlight_path: (cfg.task == Task::Exact0110.name()).then(|| vec![0, 1, 1, 0]),
        ..DotOptions::default()
    }
}

/// Writes `fsa.json`, `fsa.dot` and `fsa.classes.json` into `dir`.
pub fn save_fsa_bundle(fsa: &Fsa, opts: &DotOptions, dir: &Path) -> Result<()> {
    fsa_format::save(fsa, &dir.join("fsa.json"))?;
    let dot_path = dir.join("fsa.dot");
    write_text(&dot_path, &to_dot(fsa, opts)?)?;
    write_text(&fsa_format::classes_path(&dot_path), &fsa_format::classes_json(fsa, opts)?)
}

/// Extracts one trial from its checkpoint and writes its artifacts.
pub fn extract_job(cfg: &ExperimentConfig, ds: &Dataset, kind: CellKind, trial: usize) -> Result<TrialSummary> {
    let dir = Layout::new(&cfg.output_dir).trial_dir(kind, trial);
    let seed = cfg.trial_seed(trial - 1);
    let task = cfg.task_kind()?;
    let mut summary = TrialSummary {
        kind: kind.name().into(),
        trial,
        seed,
        status: "ok".into(),
        message: None,
        task: cfg.task.clone(),
        method: cfg.cluster_method()?.name().into(),
        target: cfg.target_accuracy,
        eval_split: eval_split(task).name().into(),
        min_k: None,
        min_k_value: cfg.sentinel(),
        sentinel: cfg.sentinel(),
        fsa_k: None,
        fsa_eval_accuracy: None,
        fsa_test_accuracy: None,
        rnn_test_acc: None,
    };
    let train_json = dir.join("train.json");
    let trained: Option<TrainSummary> = if train_json.exists() { Some(load_json(&train_json)?) } else { None };
    if let Some(t) = trained.as_ref().filter(|t| !t.ok()) {
        summary.status = t.status.clone();
        summary.message = t.message.clone();
        save_json(&summary, &dir.join("summary.json"))?;
        return Ok(summary);
    }
    let m = model::load(&dir.join("model.json"))?;
    let ex = extract_model(cfg, ds, &m, seed)?;
    let rows: Vec<CurveRow> = ex.sweep.curve.iter().map(|&(k, accuracy)| CurveRow { k, accuracy }).collect();
    tables::save_curve(&rows, &dir.join("sweep.csv"))?;
    save_fsa_bundle(&ex.fsa, &dot_options(cfg), &dir)?;
    summary.min_k = match ex.sweep.min_k {
        MinK::Reached(k) => Some(k),
        MinK::NotReached => None,
    };
    summary.min_k_value = ex.sweep.min_k.value(cfg.sentinel());
    summary.fsa_k = Some(ex.k);
    summary.fsa_eval_accuracy = Some(ex.eval_accuracy);
    summary.fsa_test_accuracy = ex.test_accuracy;
    summary.rnn_test_acc = match trained {
        Some(t) => t.rnn_test_acc,
        None if !ds.test.is_empty() => Some(accuracy(&m, &ds.test)?),
        None => None,
    };
    save_json(&summary, &dir.join("summary.json"))?;
    Ok(summary)
}

/// Extracts every job in parallel.
pub fn run_extract(cfg: &ExperimentConfig) -> Result<Vec<TrialSummary>> {
    let ds = load_dataset(cfg)?;
    jobs(cfg)?
        .par_iter()
        .map(|&(kind, trial)| extract_job(cfg, &ds, kind, trial))
        .collect()
}

/// Per-k mean member accuracy and majority-vote accuracy on the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub kind: String,
    pub members: Vec<usize>,
    pub rows: Vec<EnsembleRow>,
    /// Member accuracies per k, in `members` order.
    pub member_accuracy: Vec<Vec<f64>>,
}

/// Ensembles the automata every trial of `kind` builds at each swept k.
pub fn ensemble_models(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    models: &[(u64, RnnModel)],
    eval: &[Sequence],
) -> Result<(Vec<EnsembleRow>, Vec<Vec<f64>>)> {
    if models.len().is_multiple_of(2) {
        return Err(FormatError::field(
            "n_trials",
            format!("majority voting needs an odd number of members, got {}", models.len()),
        ));
    }
    let pools: Vec<TracePool> = models
        .iter()
        .map(|(_, m)| collect_traces(m, &ds.validation))
        .collect::<lisor_core::Result<_>>()?;
    let specs: Vec<SweepSpec> = models.iter().map(|(s, _)| sweep_spec(cfg, *s)).collect::<Result<_>>()?;
    let per_k: Vec<(EnsembleRow, Vec<f64>)> = cfg
        .ks()
        .par_iter()
        .map(|&k| {
            let fsas: Vec<Fsa> = models
                .iter()
                .zip(&pools)
                .zip(&specs)
                .map(|(((_, m), pool), spec)| sweep_fsa(m, &ds.alphabet, pool, k, spec).map(|e| e.fsa))
                .collect::<lisor_core::Result<_>>()?;
            let (mean, accs, ens) = ensemble_accuracy(fsas, eval)?;
            Ok((
                EnsembleRow {
                    k,
                    mean_accuracy: mean,
                    ensemble_accuracy: ens,
                },
                accs,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(per_k.into_iter().unzip())
}

/// Member accuracies, their mean, and the majority-vote accuracy.
pub fn ensemble_accuracy(fsas: Vec<Fsa>, eval: &[Sequence]) -> Result<(f64, Vec<f64>, f64)> {
    let accs: Vec<f64> = fsas.iter().map(|f| accuracy(f, eval)).collect::<lisor_core::Result<_>>()?;
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let ens = accuracy(&FsaEnsemble::new(fsas)?, eval)?;
    Ok((mean, accs, ens))
}

/// Ensembles the trials of `kind` and writes `ensemble.csv` and `ensemble.json`.
pub fn run_ensemble(cfg: &ExperimentConfig, kind: CellKind) -> Result<EnsembleReport> {
    let ds = load_dataset(cfg)?;
    let layout = Layout::new(&cfg.output_dir);
    let mut models = Vec::with_capacity(cfg.n_trials);
    for trial in 1..=cfg.n_trials {
        let m = model::load(&layout.trial_dir(kind, trial).join("model.json"))?;
        models.push((cfg.trial_seed(trial - 1), m));
    }
    if ds.test.is_empty() {
        return Err(FormatError::field("n_test", "the ensemble is evaluated on the test split, which is empty"));
    }
    let (rows, member_accuracy) = ensemble_models(cfg, &ds, &models, &ds.test)?;
    let report = EnsembleReport {
        kind: kind.name().into(),
        members: (1..=cfg.n_trials).collect(),
        rows,
        member_accuracy,
    };
    let dir = layout.kind_dir(kind);
    tables::save_ensemble(&report.rows, &dir.join("ensemble.csv"))?;
    save_json(&report, &dir.join("ensemble.json"))?;
    Ok(report)
}

/// Trials × kinds grid of min_k values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub task: String,
    pub method: String,
    pub target: f64,
    pub sentinel: usize,
    pub kinds: Vec<String>,
    pub n_trials: usize,
    /// `grid[t][c]`: min_k (sentinel when unreached) of trial t+1, kind c.
    pub grid: Vec<Vec<Option<usize>>>,
    /// Mean of each column's present cells.
    pub averages: Vec<Option<f64>>,
    /// RNN test accuracy, same shape as `grid`.
    pub rnn_test_acc: Vec<Vec<Option<f64>>>,
    /// Trials whose training diverged or failed.
    pub failed: Vec<String>,
    /// Expected artifacts that were not found.
    pub missing: Vec<String>,
}

impl Report {
    pub fn complete(&self) -> bool {
        self.missing.is_empty()
    }

    /// Plain-text rendering of the grid.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "task {}  method {}  target {}  (unreached = {})",
            self.task, self.method, self.target, self.sentinel
        );
        let _ = write!(out, "{:<8}", "trial");
        for k in &self.kinds {
            let _ = write!(out, "{k:>8}");
        }
        out.push('\n');
        for (t, row) in self.grid.iter().enumerate() {
            let _ = write!(out, "{:<8}", t + 1);
            for cell in row {
                match cell {
                    Some(v) => {
                        let _ = write!(out, "{v:>8}");
                    }
                    None => {
                        let _ = write!(out, "{:>8}", "-");
                    }
                }
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<8}", "average");
        for a in &self.averages {
            match a {
                Some(v) => {
                    let _ = write!(out, "{v:>8.1}");
                }
                None => {
                    let _ = write!(out, "{:>8}", "-");
                }
            }
        }
        out.push('\n');
        for f in &self.failed {
            let _ = writeln!(out, "failed: {f}");
        }
        for m in &self.missing {
            let _ = writeln!(out, "missing: {m}");
        }
        out
    }
}

/// Collects every trial summary into a [`Report`] and writes it.
pub fn run_report(cfg: &ExperimentConfig) -> Result<Report> {
    let layout = Layout::new(&cfg.output_dir);
    let kinds = cfg.cell_kinds()?;
    let mut grid = vec![vec![None; kinds.len()]; cfg.n_trials];
    let mut rnn = vec![vec![None; kinds.len()]; cfg.n_trials];
    let mut failed = Vec::new();
    let mut missing = Vec::new();
    for (c, &kind) in kinds.iter().enumerate() {
        for t in 1..=cfg.n_trials {
            let path = layout.trial_dir(kind, t).join("summary.json");
            if !path.exists() {
                missing.push(path.display().to_string());
                continue;
            }
            let s: TrialSummary = load_json(&path)?;
            if s.status != "ok" {
                failed.push(format!("{} trial {t}: {}", kind.name(), s.message.as_deref().unwrap_or(&s.status)));
            }
            grid[t - 1][c] = Some(s.min_k_value);
            rnn[t - 1][c] = s.rnn_test_acc;
        }
    }
    let averages = (0..kinds.len())
        .map(|c| {
            let cells: Vec<usize> = grid.iter().filter_map(|row| row[c]).collect();
            (!cells.is_empty()).then(|| cells.iter().sum::<usize>() as f64 / cells.len() as f64)
        })
        .collect();
    let report = Report {
        task: cfg.task.clone(),
        method: cfg.cluster_method()?.name().into(),
        target: cfg.target_accuracy,
        sentinel: cfg.sentinel(),
        kinds: kinds.iter().map(|k| k.name().to_string()).collect(),
        n_trials: cfg.n_trials,
        grid,
        averages,
        rnn_test_acc: rnn,
        failed,
        missing,
    };
    save_json(&report, &layout.report_json())?;
    write_text(&layout.report_txt(), &report.to_text())?;
    Ok(report)
}
