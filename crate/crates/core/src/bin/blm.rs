use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blm_search::error::{Error, Result};
use blm_search::experiment::{
    cmd_analyze, cmd_evaluate, cmd_finetune, cmd_hpsearch, cmd_query_eval, cmd_search, expand_config_args,
    load_structure, run_pipeline, ExperimentConfig, Stage1Config, Stage3Config,
};
use blm_search::kg::{build_filter_index, generate_synthetic_kg, load_dataset, profile_relations, Split, SyntheticSpec, TripleStore};
use blm_search::paths::{generate_path_queries, train_paths, PathQuerySet};
use blm_search::predictor::SearchRecord;
use blm_search::scorer::{init_embeddings, EmbeddingStore, HyperParams};
use blm_search::search::{SearchAlgo, SearchConfig};
use blm_search::train::{train_structure, TrainOptions};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "blm",
    version,
    about = "Bilinear KG scoring structures: analysis, training and search",
    args_override_self = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Dataset directory with train.txt, valid.txt, test.txt.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// progressive, evolutionary or random.
    #[arg(long, default_value = "evolutionary")]
    algo: String,
    #[arg(long, default_value_t = 64)]
    budget: usize,
    /// Candidates generated per round.
    #[arg(long = "N", default_value_t = 128)]
    n: usize,
    /// Candidates trained per round.
    #[arg(long = "P", default_value_t = 8)]
    p: usize,
    /// Population / parent pool size.
    #[arg(long = "I", default_value_t = 8)]
    i: usize,
    /// Initial nonzero count (default k).
    #[arg(long)]
    b0: Option<usize>,
    /// Mutation probability (default 2/k^2).
    #[arg(long)]
    pm: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    #[arg(long, default_value_t = 1e-3)]
    lambda: f64,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    no_filter: bool,
    #[arg(long)]
    no_predictor: bool,
    /// Parallel training workers.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Score search candidates on a validation subset of this size.
    #[arg(long)]
    val_sample: Option<usize>,
    /// Reuse records from an existing records.jsonl under --out.
    #[arg(long)]
    resume: bool,
    /// key = value file whose entries act as flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Hyper-parameter JSON (as written by hpsearch) for search candidates.
    #[arg(long)]
    hp: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    stage1_trials: usize,
    #[arg(long, default_value_t = 64)]
    stage1_d: usize,
    #[arg(long)]
    stage1_probe: Option<String>,
    #[arg(long, default_value_t = 50)]
    stage3_trials: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [256, 512, 1024, 2048])]
    stage3_d_choices: Vec<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Degeneracy, expressiveness witnesses, SRF, orbit size and canonical key.
    Analyze {
        /// Builtin name or JSON file.
        structure: String,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Stage 1: random hyper-parameter trials on the probe structure.
    Hpsearch {
        #[command(flatten)]
        common: Common,
    },
    /// Stage 2: structure search.
    Search {
        #[command(flatten)]
        common: Common,
    },
    /// Stage 3: retrain top structures and report test metrics once.
    Finetune {
        /// Directory holding top_structures.json (default --out).
        #[arg(long)]
        from: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// All three stages.
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
    /// Train one structure on triples (or on path queries).
    Train {
        #[arg(long)]
        structure: String,
        /// Path-query JSON to train on instead of triples.
        #[arg(long)]
        paths: Option<PathBuf>,
        /// Sampled negatives per path query (default: full softmax).
        #[arg(long)]
        negatives: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Filtered MRR and Hits@k of a checkpoint.
    Evaluate {
        #[arg(long)]
        structure: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        common: Common,
    },
    /// Sample multi-hop path queries from training triples.
    Pathgen {
        #[arg(long, default_value_t = 2)]
        length: usize,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        common: Common,
    },
    /// Rank the answers of path queries.
    Queryeval {
        #[arg(long)]
        structure: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Classify relations as symmetric / anti-symmetric / general, with inverses.
    Profile {
        #[arg(long, default_value = "train")]
        split: String,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic dataset (symmetric, anti-symmetric and inverse-pair relations).
    Synth {
        /// JSON generator spec (default: 200 entities, about 3,000 triples).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

impl Common {
    fn hyperparams(&self) -> Result<HyperParams> {
        if let Some(path) = &self.hp {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            return Ok(serde_json::from_str(&text)?);
        }
        Ok(HyperParams {
            d: self.d,
            eta: self.eta,
            lambda: self.lambda,
            batch_size: self.batch,
            epochs: self.epochs,
            seed: self.seed,
        })
    }

    fn dataset(&self) -> Result<TripleStore> {
        let dir = self
            .data
            .as_ref()
            .ok_or_else(|| Error::Config("--data is required".into()))?;
        load_dataset(dir)
    }

    fn search(&self) -> Result<SearchConfig> {
        let algo: SearchAlgo = self.algo.parse()?;
        let mut cfg = SearchConfig::new(algo, self.k);
        cfg.n_candidates = self.n;
        cfg.top_p = self.p;
        cfg.top_i = self.i;
        cfg.b0 = self.b0.unwrap_or(self.k);
        if let Some(pm) = self.pm {
            cfg.p_m = pm;
        }
        cfg.budget = self.budget;
        cfg.seed = self.seed;
        cfg.hp = self.hyperparams()?;
        cfg.use_filter = !self.no_filter;
        cfg.use_predictor = !self.no_predictor;
        cfg.workers = self.workers;
        cfg.val_sample = self.val_sample;
        cfg.out_dir = Some(self.out.clone());
        cfg.resume = self.resume;
        Ok(cfg)
    }

    fn experiment(&self) -> Result<ExperimentConfig> {
        let search = self.search()?;
        let mut cfg = ExperimentConfig::new(self.data.clone().unwrap_or_default(), self.out.clone(), search);
        let probe = match &self.stage1_probe {
            Some(s) => load_structure(s)?,
            None => cfg.stage1.probe.clone(),
        };
        cfg.stage1 = Stage1Config { trials: self.stage1_trials, probe, d: self.stage1_d };
        cfg.stage3 = Stage3Config { trials: self.stage3_trials, d_choices: self.stage3_d_choices.clone() };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.to_path_buf(), source: e })?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    print_text(&serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Ignores a closed stdout (e.g. piped into `head`).
fn print_text(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn summary(report: &blm_search::train::EvalReport) -> serde_json::Value {
    serde_json::json!({
        "mrr": report.mrr,
        "h1": report.hits(1),
        "h3": report.hits(3),
        "h10": report.hits(10),
        "n_ranks": report.head_ranks.len() + report.tail_ranks.len(),
    })
}

fn checked_store(path: &Path, data: &TripleStore, k: usize) -> Result<EmbeddingStore> {
    let store = EmbeddingStore::load_checkpoint(path)?;
    if store.k != k || store.n_entities() != data.n_entities() || store.n_relations() != data.n_relations() {
        return Err(Error::Config(format!(
            "checkpoint {} does not match the dataset or k",
            path.display()
        )));
    }
    Ok(store)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze { structure, json, .. } => {
            let report = cmd_analyze(&load_structure(&structure)?);
            if json {
                print_json(&report)?;
            } else {
                print_text(&report.to_string());
            }
        }
        Command::Hpsearch { common } => {
            let cfg = common.experiment()?;
            let data = common.dataset()?;
            let filter = build_filter_index(&data);
            let (hp, trials) = cmd_hpsearch(&cfg, &data, &filter)?;
            for t in &trials {
                eprintln!("trial {}: val_mrr {:.4}", t.index, t.val_mrr);
            }
            write_json(&cfg.out_dir.join("hp.json"), &hp)?;
            print_json(&hp)?;
        }
        Command::Search { common } => {
            let cfg = common.experiment()?;
            let data = common.dataset()?;
            let filter = build_filter_index(&data);
            let outcome = cmd_search(&cfg, &data, &filter, &cfg.search.hp)?;
            print_json(&outcome.top)?;
        }
        Command::Finetune { from, common } => {
            let cfg = common.experiment()?;
            let data = common.dataset()?;
            let filter = build_filter_index(&data);
            let path = from.unwrap_or_else(|| cfg.out_dir.clone()).join("top_structures.json");
            let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            let top: Vec<SearchRecord> = serde_json::from_str(&text)?;
            let report = cmd_finetune(&cfg, &data, &filter, &top)?;
            print_json(&serde_json::json!({
                "structure": report.structure,
                "hyperparams": report.hyperparams,
                "val_mrr": report.val_mrr,
                "test": report.test,
            }))?;
        }
        Command::Pipeline { common } => {
            let cfg = common.experiment()?;
            let data = common.dataset()?;
            let filter = build_filter_index(&data);
            let report = run_pipeline(&cfg, &data, &filter)?;
            print_json(&report.test)?;
        }
        Command::Train { structure, paths, negatives, common } => {
            let a = load_structure(&structure)?;
            let data = common.dataset()?;
            let hp = common.hyperparams()?;
            let init = init_embeddings(data.n_entities(), data.n_relations(), a.k(), &hp)?;
            let ckpt = common.out.join("checkpoints").join("model.bin");
            if let Some(qpath) = paths {
                let queries = PathQuerySet::load(&qpath)?;
                let (store, losses) = train_paths(&a, init, &queries, &hp, negatives)?;
                store.save_checkpoint(&ckpt)?;
                print_json(&serde_json::json!({ "epoch_losses": losses, "checkpoint": ckpt }))?;
            } else {
                let filter = build_filter_index(&data);
                let opts = TrainOptions {
                    val_sample: common.val_sample,
                    curve_csv: Some(common.out.join("train_curve.csv")),
                    ..TrainOptions::default()
                };
                std::fs::create_dir_all(common.out.join("checkpoints"))
                    .map_err(|e| Error::Io { path: common.out.clone(), source: e })?;
                let (store, report) = train_structure(&a, init, &data, &filter, &hp, &opts)?;
                store.save_checkpoint(&ckpt)?;
                write_json(&common.out.join("train_report.json"), &report)?;
                print_json(&report)?;
            }
        }
        Command::Evaluate { structure, checkpoint, split, common } => {
            let a = load_structure(&structure)?;
            let data = common.dataset()?;
            let store = checked_store(&checkpoint, &data, a.k())?;
            let filter = build_filter_index(&data);
            let report = cmd_evaluate(&a, &store, &data, split.parse::<Split>()?, &filter)?;
            write_json(&common.out.join("eval_report.json"), &report)?;
            print_json(&summary(&report))?;
        }
        Command::Pathgen { length, count, split, common } => {
            let data = common.dataset()?;
            let set = generate_path_queries(&data, length, count, split.parse()?, common.seed)?;
            let path = common.out.join(format!("paths_l{length}.json"));
            write_json(&path, &set)?;
            eprintln!("{} queries written to {}", set.queries.len(), path.display());
        }
        Command::Queryeval { structure, checkpoint, queries, common } => {
            let a = load_structure(&structure)?;
            let data = common.dataset()?;
            let store = checked_store(&checkpoint, &data, a.k())?;
            let set = PathQuerySet::load(&queries)?;
            let report = cmd_query_eval(&a, &store, &data, &set)?;
            print_json(&summary(&report))?;
        }
        Command::Profile { split, common } => {
            let data = common.dataset()?;
            print_json(&profile_relations(&data, split.parse()?))?;
        }
        Command::Synth { spec, common } => {
            let spec = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                    serde_json::from_str(&text)?
                }
                None => SyntheticSpec::mixed_200(),
            };
            let store = generate_synthetic_kg(&spec, common.seed)?;
            store.save(&common.out)?;
            eprintln!(
                "{} entities, {} relations, {}/{}/{} triples written to {}",
                store.n_entities(),
                store.n_relations(),
                store.train.len(),
                store.valid.len(),
                store.test.len(),
                common.out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv = match expand_config_args(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
