use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lisor::config::{ConfigOverrides, ExperimentConfig};
use lisor::experiment::{self, ensemble_accuracy, Layout};
use lisor::formats::{dataset, fsa as fsa_format, model, write_text};
use lisor_core::data::{Sequence, Split};
use lisor_core::dot::{to_dot, DotOptions};
use lisor_core::fsa::Fsa;
use lisor_core::rnn::{CellKind, Dims, RnnModel};
use lisor_core::seeded_rng;
use lisor_core::train::grad_check;
use rand::Rng;

/// Train recurrent networks on synthetic regular languages, extract
/// automata from their hidden states and compare them.
#[derive(Parser)]
#[command(name = "lisor", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the task dataset as JSON Lines.
    GenData {
        #[command(flatten)]
        exp: ExpArgs,
        /// Output file [default: <output_dir>/dataset.jsonl]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every (kind, trial) model of an experiment.
    Train {
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Sweep cluster counts and save the automaton of every trained model,
    /// or of a single checkpoint with --checkpoint.
    Extract {
        #[command(flatten)]
        exp: ExpArgs,
        /// Single checkpoint to extract instead of the experiment's models
        #[arg(long, requires = "dataset")]
        checkpoint: Option<PathBuf>,
        /// Dataset for --checkpoint
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output directory for --checkpoint [default: directory of the checkpoint]
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Majority-vote the automata of all trials at each swept k, or of an
    /// explicit list of automata with --fsa.
    Ensemble {
        #[command(flatten)]
        exp: ExpArgs,
        /// Cell kind whose trials are ensembled
        #[arg(long, default_value = "MGU")]
        kind: String,
        /// Automaton files to ensemble instead of the experiment's trials
        #[arg(long, num_args = 1.., requires = "dataset")]
        fsa: Vec<PathBuf>,
        /// Dataset for --fsa
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Split evaluated with --fsa: train, validation or test
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Aggregate min_k of every trial into a trials x kinds table.
    Report {
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Render an automaton file as Graphviz DOT.
    ExportDot {
        /// Automaton JSON
        #[arg(long)]
        fsa: PathBuf,
        /// Output DOT file; a <name>.classes.json sidecar is written next to it
        #[arg(long)]
        out: PathBuf,
        /// Collapse parallel edges into one
        #[arg(long)]
        merge: bool,
        /// Longest symbol list printed on a merged edge before a word class is used
        #[arg(long, default_value_t = 8)]
        max_label_symbols: usize,
        /// Comma-separated symbols whose path is drawn red
        #[arg(long, value_delimiter = ',')]
        highlight: Option<Vec<String>>,
    },
    /// Compare analytic gradients with central finite differences on random models.
    GradCheck {
        /// Cell kind
        #[arg(long, default_value = "MGU")]
        kind: String,
        /// Embedding width
        #[arg(long, default_value_t = 4)]
        embed: usize,
        /// Hidden units
        #[arg(long, default_value_t = 4)]
        hidden: usize,
        /// Layers
        #[arg(long, default_value_t = 1)]
        layers: usize,
        /// Sequence length
        #[arg(long, default_value_t = 5)]
        len: usize,
        /// Number of random models
        #[arg(long, default_value_t = 3)]
        models: usize,
        /// Weights uniform in +-init_scale
        #[arg(long, default_value_t = 0.5)]
        init_scale: f64,
        /// Finite-difference step
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// Largest accepted relative error
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct ExpArgs {
    /// Experiment config JSON; command-line flags override it. Without it,
    /// <output_dir>/config.json is used when present.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

impl ExpArgs {
    fn resolve(&self, reuse_saved: bool) -> Result<ExperimentConfig> {
        let cfg = ExperimentConfig::load(self.config.as_deref(), &self.overrides)?;
        if self.config.is_none() && reuse_saved {
            let saved = Layout::new(&cfg.output_dir).config();
            if saved.exists() {
                return ExperimentConfig::load(Some(&saved), &self.overrides)
                    .with_context(|| format!("reading {}", saved.display()));
            }
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// `Ok(false)` when the command ran but some artifact was not produced.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData { exp, out } => {
            let cfg = exp.resolve(false)?;
            let ds = cfg.dataset()?;
            let path = out.unwrap_or_else(|| Layout::new(&cfg.output_dir).dataset());
            dataset::save(&ds, &path)?;
            println!(
                "wrote {} (train {}, validation {}, test {})",
                path.display(),
                ds.train.len(),
                ds.validation.len(),
                ds.test.len()
            );
            Ok(true)
        }
        Command::Train { exp } => {
            let cfg = exp.resolve(false)?;
            let results = experiment::run_train(&cfg)?;
            for s in &results {
                match s.status.as_str() {
                    "ok" => println!(
                        "{} trial {}: {} epochs, train {:.3}, test {}",
                        s.kind,
                        s.trial,
                        s.epochs_run,
                        s.rnn_train_acc.unwrap_or(0.0),
                        s.rnn_test_acc.map_or("-".into(), |a| format!("{a:.3}"))
                    ),
                    _ => println!("{} trial {}: {}", s.kind, s.trial, s.message.as_deref().unwrap_or(&s.status)),
                }
            }
            Ok(results.iter().all(|s| s.ok()))
        }
        Command::Extract {
            exp,
            checkpoint: Some(checkpoint),
            dataset: Some(data),
            out_dir,
        } => {
            let cfg = exp.resolve(false)?;
            let m = model::load(&checkpoint)?;
            let ds = dataset::load(&data)?;
            let ex = experiment::extract_model(&cfg, &ds, &m, cfg.seed)?;
            let dir = out_dir.unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
            let rows: Vec<_> = ex
                .sweep
                .curve
                .iter()
                .map(|&(k, accuracy)| lisor::formats::tables::CurveRow { k, accuracy })
                .collect();
            lisor::formats::tables::save_curve(&rows, &dir.join("sweep.csv"))?;
            experiment::save_fsa_bundle(&ex.fsa, &experiment::dot_options(&cfg), &dir)?;
            println!(
                "min_k {} (sentinel {}), automaton with {} states, accuracy {:.3}",
                ex.sweep.min_k.value(cfg.sentinel()),
                cfg.sentinel(),
                ex.k,
                ex.eval_accuracy
            );
            Ok(true)
        }
        Command::Extract { exp, .. } => {
            let cfg = exp.resolve(true)?;
            let results = experiment::run_extract(&cfg)?;
            for s in &results {
                println!(
                    "{} trial {}: min_k {}{}",
                    s.kind,
                    s.trial,
                    s.min_k_value,
                    if s.status == "ok" { String::new() } else { format!(" ({})", s.status) }
                );
            }
            Ok(results.iter().all(|s| s.status == "ok"))
        }
        Command::Ensemble {
            exp,
            kind,
            fsa,
            dataset: data,
            split,
        } => {
            if !fsa.is_empty() {
                let data = data.expect("clap enforces --dataset");
                let ds = dataset::load(&data)?;
                let split = Split::from_name(&split).with_context(|| format!("unknown split {split:?}"))?;
                let eval: &[Sequence] = ds.split(split);
                let fsas: Vec<Fsa> = fsa
                    .iter()
                    .map(|p| fsa_format::load(p).with_context(|| format!("reading {}", p.display())))
                    .collect::<Result<_>>()?;
                if fsas.iter().any(|f| f.alphabet() != &ds.alphabet) {
                    bail!("automata and dataset disagree on the alphabet");
                }
                let (mean, accs, ens) = ensemble_accuracy(fsas, eval)?;
                for (p, a) in fsa.iter().zip(&accs) {
                    println!("{}: {a:.4}", p.display());
                }
                println!("mean {mean:.4}  ensemble {ens:.4}");
                return Ok(true);
            }
            let cfg = exp.resolve(true)?;
            let kind = CellKind::from_name(&kind)?;
            let report = experiment::run_ensemble(&cfg, kind)?;
            println!("k,mean_accuracy,ensemble_accuracy");
            for r in &report.rows {
                println!("{},{:.4},{:.4}", r.k, r.mean_accuracy, r.ensemble_accuracy);
            }
            Ok(true)
        }
        Command::Report { exp } => {
            let cfg = exp.resolve(true)?;
            let report = experiment::run_report(&cfg)?;
            print!("{}", report.to_text());
            Ok(report.complete())
        }
        Command::ExportDot {
            fsa,
            out,
            merge,
            max_label_symbols,
            highlight,
        } => {
            let automaton = fsa_format::load(&fsa)?;
            let highlight_path = match highlight {
                Some(symbols) => Some(automaton.alphabet().encode(&symbols)?),
                None => None,
            };
            let opts = DotOptions {
                merge_edges: merge,
                max_label_symbols,
                highlight_path,
            };
            write_text(&out, &to_dot(&automaton, &opts)?)?;
            write_text(&fsa_format::classes_path(&out), &fsa_format::classes_json(&automaton, &opts)?)?;
            println!("wrote {}", out.display());
            Ok(true)
        }
        Command::GradCheck {
            kind,
            embed,
            hidden,
            layers,
            len,
            models,
            init_scale,
            eps,
            tolerance,
            seed,
        } => {
            let kind = CellKind::from_name(&kind)?;
            if len == 0 {
                bail!("--len must be at least 1");
            }
            let mut rng = seeded_rng(seed);
            let mut worst: f64 = 0.0;
            for i in 0..models {
                let m = RnnModel::init(kind, 2, Dims::new(embed, hidden, layers), init_scale, &mut rng)?;
                let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..2)).collect();
                let seq = Sequence::new(tokens, rng.gen_range(0..=1))?;
                let err = grad_check(&m, &seq, eps)?;
                println!("model {i}: max relative error {err:.3e}");
                worst = worst.max(err);
            }
            println!("{} worst {worst:.3e} (tolerance {tolerance:.0e})", kind.name());
            Ok(worst < tolerance)
        }
    }
}
