//! Experiment configuration: one JSON document, overridable from the
//! command line.

use std::path::{Path, PathBuf};

use clap::Args;
use lisor_core::cluster::{ClusterOptions, Method};
use lisor_core::data::{gen_task_000, gen_task_0110, Dataset, Task};
use lisor_core::rnn::{CellKind, Dims};
use lisor_core::train::HyperParams;
use serde::{Deserialize, Serialize};

use crate::error::FormatError;
use crate::formats::read_text;

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: String,
    pub kinds: Vec<String>,
    pub embed: usize,
    pub hidden: usize,
    pub layers: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub init_scale: f64,
    /// Training accuracy that ends training early; 0 disables early stopping.
    pub early_stop_acc: f64,
    /// Global-norm clipping threshold; 0 disables clipping.
    pub clip_norm: f64,
    pub method: String,
    pub restarts: usize,
    pub position_scale: f64,
    pub k_range: [usize; 2],
    pub n_trials: usize,
    pub target_accuracy: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl ExperimentConfig {
    /// Defaults for a task.
    pub fn for_task(task: Task) -> Self {
        let kinds = CellKind::ALL.iter().map(|k| k.name().to_string()).collect();
        match task {
            Task::Exact0110 => ExperimentConfig {
                task: task.name().into(),
                kinds,
                embed: 2,
                hidden: 10,
                layers: 3,
                learning_rate: 3e-3,
                epochs: 200,
                batch_size: 16,
                init_scale: 0.1,
                early_stop_acc: 0.0,
                clip_norm: 5.0,
                method: Method::KMeansPP.name().into(),
                restarts: 1,
                position_scale: 1.0,
                k_range: [2, 64],
                n_trials: 5,
                target_accuracy: 1.0,
                seed: 0,
                output_dir: PathBuf::from("runs/0110"),
                n_train: 1000,
                n_valid: 16,
                n_test: 100,
                min_len: 4,
                max_len: 4,
            },
            Task::Contains000 => ExperimentConfig {
                task: task.name().into(),
                epochs: 60,
                k_range: [2, 200],
                target_accuracy: 0.7,
                output_dir: PathBuf::from("runs/000"),
                n_train: 3000,
                n_valid: 500,
                n_test: 500,
                min_len: 4,
                max_len: 12,
                ..ExperimentConfig::for_task(Task::Exact0110)
            },
        }
    }

    /// File settings over task defaults, then command-line settings on top.
    pub fn resolve(file: Option<ConfigOverrides>, cli: &ConfigOverrides) -> Result<Self, FormatError> {
        let file = file.unwrap_or_default();
        let task_name = cli.task.as_deref().or(file.task.as_deref()).unwrap_or("0110");
        let task = Task::from_name(task_name).map_err(|e| FormatError::field("task", e.to_string()))?;
        let mut cfg = ExperimentConfig::for_task(task);
        file.apply(&mut cfg);
        cli.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` (if any) and applies `cli` on top.
    pub fn load(path: Option<&Path>, cli: &ConfigOverrides) -> Result<Self, FormatError> {
        let file = match path {
            Some(p) => Some(ConfigOverrides::from_json(&read_text(p)?)?),
            None => None,
        };
        Self::resolve(file, cli)
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        let field = |f: &str, m: String| Err(FormatError::field(f, m));
        self.task_kind()?;
        self.cell_kinds()?;
        self.cluster_method()?;
        if self.kinds.is_empty() {
            return field("kinds", "at least one cell kind is required".into());
        }
        let [lo, hi] = self.k_range;
        if lo < 2 || lo > hi {
            return field("k_range", format!("need 2 <= min <= max, got [{lo}, {hi}]"));
        }
        if self.n_trials == 0 {
            return field("n_trials", "must be at least 1".into());
        }
        if !(self.target_accuracy > 0.0 && self.target_accuracy <= 1.0) {
            return field("target_accuracy", format!("{} outside (0, 1]", self.target_accuracy));
        }
        if self.embed == 0 || self.hidden == 0 || self.layers == 0 {
            return field("dims", "embed, hidden and layers must be positive".into());
        }
        if self.restarts == 0 {
            return field("restarts", "must be at least 1".into());
        }
        if self.clip_norm.is_nan() || self.clip_norm < 0.0 {
            return field("clip_norm", format!("{} is negative", self.clip_norm));
        }
        if self.n_train == 0 {
            return field("n_train", "must be at least 1".into());
        }
        self.hyper_params(0).validate().map_err(|e| FormatError::field("hyperparameters", e.to_string()))?;
        if self.task_kind()? == Task::Contains000 && (self.min_len < 3 || self.min_len > self.max_len) {
            return field("min_len", format!("need 3 <= min_len <= max_len, got {}..{}", self.min_len, self.max_len));
        }
        Ok(())
    }

    pub fn task_kind(&self) -> Result<Task, FormatError> {
        Task::from_name(&self.task).map_err(|e| FormatError::field("task", e.to_string()))
    }

    pub fn cell_kinds(&self) -> Result<Vec<CellKind>, FormatError> {
        self.kinds
            .iter()
            .map(|k| CellKind::from_name(k).map_err(|e| FormatError::field("kinds", e.to_string())))
            .collect()
    }

    pub fn cluster_method(&self) -> Result<Method, FormatError> {
        Method::from_name(&self.method).map_err(|e| FormatError::field("method", e.to_string()))
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.embed, self.hidden, self.layers)
    }

    pub fn cluster_options(&self) -> ClusterOptions {
        ClusterOptions {
            restarts: self.restarts,
            position_scale: self.position_scale,
        }
    }

    pub fn hyper_params(&self, seed: u64) -> HyperParams {
        HyperParams {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            init_scale: self.init_scale,
            early_stop_acc: (self.early_stop_acc > 0.0).then_some(self.early_stop_acc),
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            ..HyperParams::default()
        }
    }

    /// Seed of the trial with 0-based index `i` (trial `i + 1`).
    pub fn trial_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_add(i as u64)
    }

    /// Cluster counts of the sweep, ascending.
    pub fn ks(&self) -> Vec<usize> {
        (self.k_range[0]..=self.k_range[1]).collect()
    }

    /// Value standing in for an unmet target.
    pub fn sentinel(&self) -> usize {
        self.k_range[1] + 1
    }

    /// The dataset shared by every trial, generated from the base seed.
    pub fn dataset(&self) -> Result<Dataset, FormatError> {
        Ok(match self.task_kind()? {
            Task::Exact0110 => gen_task_0110(self.n_train, self.n_test, self.seed)?,
            Task::Contains000 => gen_task_000(
                self.n_train,
                self.n_valid,
                self.n_test,
                (self.min_len, self.max_len),
                self.seed,
            )?,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

/// Partial settings, from a config file or the command line.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    /// Task name: "0110" or "000" [default: 0110]
    #[arg(long)]
    pub task: Option<String>,
    /// Cell kinds, comma separated [default: MGU,SRN,GRU,LSTM]
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<String>>,
    /// Embedding width; equal to the alphabet size means a frozen one-hot embedding [default: 2]
    #[arg(long)]
    pub embed: Option<usize>,
    /// Hidden units per layer [default: 10]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Stacked recurrent layers [default: 3]
    #[arg(long)]
    pub layers: Option<usize>,
    /// Adam learning rate [default: 0.003]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Training epochs [default: 200 for 0110, 60 for 000]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size [default: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial weights are uniform in +-init_scale [default: 0.1]
    #[arg(long)]
    pub init_scale: Option<f64>,
    /// Stop training once training accuracy reaches this, 0 disables [default: 0]
    #[arg(long)]
    pub early_stop_acc: Option<f64>,
    /// Global-norm gradient clipping, 0 disables [default: 5.0]
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Clustering method: kmeans++ (LISOR-k) or kmeans-x (LISOR-x) [default: kmeans++]
    #[arg(long)]
    pub method: Option<String>,
    /// k-means restarts per cluster count, best cost kept [default: 1]
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Multiplier on the kmeans-x position feature [default: 1.0]
    #[arg(long)]
    pub position_scale: Option<f64>,
    /// Swept cluster counts as MIN,MAX [default: 2,64 for 0110, 2,200 for 000]
    #[arg(long, value_delimiter = ',', value_name = "MIN,MAX")]
    pub k_range: Option<Vec<usize>>,
    /// Trials per cell kind [default: 5]
    #[arg(long)]
    pub n_trials: Option<usize>,
    /// Automaton accuracy defining min_k [default: 1.0 for 0110, 0.7 for 000]
    #[arg(long)]
    pub target_accuracy: Option<f64>,
    /// Base seed; trial t (from 1) uses seed + t - 1 [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: runs/<task>]
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Training sequences [default: 1000 for 0110, 3000 for 000]
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Validation sequences for 000; 0110 always uses the 16 length-4 strings [default: 500]
    #[arg(long)]
    pub n_valid: Option<usize>,
    /// Test sequences [default: 100 for 0110, 500 for 000]
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Shortest 000 sequence [default: 4]
    #[arg(long)]
    pub min_len: Option<usize>,
    /// Longest 000 sequence [default: 12]
    #[arg(long)]
    pub max_len: Option<usize>,
}

impl ConfigOverrides {
    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        serde_json::from_str(text).map_err(|e| FormatError::json(e.line(), e))
    }

    fn apply(&self, cfg: &mut ExperimentConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    cfg.$f = v.clone();
                }
            )*};
        }
        set!(
            task, kinds, embed, hidden, layers, learning_rate, epochs, batch_size, init_scale, early_stop_acc,
            clip_norm, method, restarts, position_scale, n_trials, target_accuracy, seed, output_dir, n_train,
            n_valid, n_test, min_len, max_len
        );
        if let Some(r) = &self.k_range {
            if let [lo, hi] = r[..] {
                cfg.k_range = [lo, hi];
            } else {
                cfg.k_range = [0, 0];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_defaults() {
        let a = ExperimentConfig::resolve(None, &ConfigOverrides::default()).unwrap();
        assert_eq!((a.task.as_str(), a.k_range, a.target_accuracy, a.n_trials), ("0110", [2, 64], 1.0, 5));
        let cli = ConfigOverrides {
            task: Some("000".into()),
            ..Default::default()
        };
        let b = ExperimentConfig::resolve(None, &cli).unwrap();
        assert_eq!((b.k_range, b.target_accuracy, b.n_train, b.n_test), ([2, 200], 0.7, 3000, 500));
        assert_eq!(b.sentinel(), 201);
        assert_eq!(b.ks().len(), 199);
    }

    #[test]
    fn cli_overrides_file() {
        let file = ConfigOverrides::from_json(r#"{"task":"000","hidden":7,"seed":3,"k_range":[2,10]}"#).unwrap();
        let cli = ConfigOverrides {
            seed: Some(9),
            ..Default::default()
        };
        let cfg = ExperimentConfig::resolve(Some(file), &cli).unwrap();
        assert_eq!((cfg.hidden, cfg.seed, cfg.k_range, cfg.trial_seed(2)), (7, 9, [2, 10], 11));
    }

    #[test]
    fn rejects_bad_settings() {
        let bad = |json: &str| {
            let file = ConfigOverrides::from_json(json)?;
            ExperimentConfig::resolve(Some(file), &ConfigOverrides::default())
        };
        assert!(bad(r#"{"k_range":[1,5]}"#).unwrap_err().to_string().contains("k_range"));
        assert!(bad(r#"{"k_range":[2]}"#).is_err());
        assert!(bad(r#"{"kinds":["TCN"]}"#).unwrap_err().to_string().contains("kinds"));
        assert!(bad(r#"{"task":"111"}"#).unwrap_err().to_string().contains("task"));
        assert!(bad(r#"{"method":"dbscan"}"#).is_err());
        assert!(bad(r#"{"unknown":1}"#).is_err());
    }

    #[test]
    fn full_config_roundtrips() {
        let cfg = ExperimentConfig::for_task(Task::Contains000);
        let back: ExperimentConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let as_overrides = ConfigOverrides::from_json(&cfg.to_json()).unwrap();
        assert_eq!(ExperimentConfig::resolve(Some(as_overrides), &ConfigOverrides::default()).unwrap(), cfg);
    }
}
