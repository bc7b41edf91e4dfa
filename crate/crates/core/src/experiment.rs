//! The three-stage experiment (hyper-parameter probe, structure search,
//! fine-tuning), structure analysis and config-file handling.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{FilterIndex, Split, TripleStore};
use crate::paths::{evaluate_paths, PathAnswerIndex, PathQuerySet};
use crate::predictor::SearchRecord;
use crate::scorer::{init_embeddings, EmbeddingStore, HyperParams};
use crate::search::{candidate_seed, run_search, SearchConfig, SearchOutcome};
use crate::srf::{srf_features, SrfVector};
use crate::structure::{builtin_structure, find_witnesses, RelationPattern, StructureMatrix};
use crate::train::{evaluate, train_structure, EvalReport, TrainOptions};

/// Batch sizes drawn by the hyper-parameter stages.
pub const BATCH_CHOICES: [usize; 3] = [256, 512, 1024];

/// Dimensions drawn by the fine-tuning stage.
pub const PAPER_D_CHOICES: [usize; 4] = [256, 512, 1024, 2048];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Config {
    pub trials: usize,
    pub probe: StructureMatrix,
    pub d: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage3Config {
    pub trials: usize,
    pub d_choices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub search: SearchConfig,
    pub stage1: Stage1Config,
    pub stage3: Stage3Config,
}

impl ExperimentConfig {
    pub fn new(data: impl Into<PathBuf>, out_dir: impl Into<PathBuf>, search: SearchConfig) -> Self {
        let k = search.k;
        let probe = if k == 4 {
            builtin_structure("simple").expect("builtin")
        } else {
            StructureMatrix::diagonal(&(1..=k as i8).collect::<Vec<_>>()).expect("valid k")
        };
        ExperimentConfig {
            data: data.into(),
            out_dir: out_dir.into(),
            seed: search.seed,
            search,
            stage1: Stage1Config { trials: 10, probe, d: 64 },
            stage3: Stage3Config { trials: 50, d_choices: PAPER_D_CHOICES.to_vec() },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage1.trials == 0 || self.stage3.trials == 0 {
            return Err(Error::Config("trial counts must be at least 1".into()));
        }
        if self.stage3.d_choices.is_empty() {
            return Err(Error::Config("stage-3 dimension choices are empty".into()));
        }
        let k = self.search.k;
        for &d in self.stage3.d_choices.iter().chain([&self.stage1.d]) {
            if d == 0 || d % k != 0 {
                return Err(Error::Config(format!("dimension {d} is not divisible by k={k}")));
            }
        }
        if self.stage1.probe.k() != k {
            return Err(Error::Config("probe structure k differs from search k".into()));
        }
        self.search.validate()
    }
}

/// Builtin name (`complex`, ...), inline JSON, or a JSON file holding
/// `{"k", "entries"}` or a bare array of rows.
pub fn load_structure(arg: &str) -> Result<StructureMatrix> {
    if let Ok(a) = builtin_structure(arg) {
        return Ok(a);
    }
    let path = Path::new(arg);
    let inline = arg.trim_start().starts_with(['[', '{']);
    let text = if inline {
        arg.to_string()
    } else {
        std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?
    };
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let parsed = if value.is_array() {
        serde_json::from_value::<Vec<Vec<i64>>>(value)
            .map_err(Error::from)
            .and_then(|rows| StructureMatrix::from_rows(&rows))
    } else {
        serde_json::from_value::<StructureMatrix>(value).map_err(Error::from)
    };
    parsed.map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub structure: StructureMatrix,
    pub degenerate: bool,
    /// Two-sided null-space check, which can disagree with `degenerate`.
    pub degenerate_exact: bool,
    pub rank: usize,
    pub determinant: i128,
    pub covers_all_values: bool,
    pub symmetric_witness: Option<RelationPattern>,
    pub skew_witness: Option<RelationPattern>,
    pub fully_expressive: bool,
    pub srf: SrfVector,
    pub orbit_size: usize,
    pub canonical_key: String,
}

pub fn cmd_analyze(a: &StructureMatrix) -> AnalysisReport {
    let w = find_witnesses(a);
    AnalysisReport {
        structure: a.clone(),
        degenerate: a.is_degenerate(),
        degenerate_exact: a.is_degenerate_exact(),
        rank: a.rank(),
        determinant: a.determinant(),
        covers_all_values: a.covers_all_values(),
        fully_expressive: w.certified(),
        symmetric_witness: w.symmetric,
        skew_witness: w.skew,
        srf: srf_features(a),
        orbit_size: a.orbit_size(),
        canonical_key: a.canonical_key().to_hex(),
    }
}

impl fmt::Display for AnalysisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "structure (k={}):", self.structure.k())?;
        writeln!(f, "{}", self.structure)?;
        let yn = |b: bool| if b { "yes" } else { "no" };
        writeln!(f, "degenerate: {} (rank {})", yn(self.degenerate), self.rank)?;
        if self.degenerate != self.degenerate_exact {
            writeln!(f, "null-space check: degenerate {}", yn(self.degenerate_exact))?;
        }
        let show = |w: &Option<RelationPattern>| w.as_ref().map_or("none".to_string(), |p| p.to_string());
        match (&self.symmetric_witness, &self.skew_witness) {
            (Some(s), Some(k)) => writeln!(f, "fully expressive: yes; witnesses {s} / {k}")?,
            _ => writeln!(f, "fully expressive: no")?,
        }
        writeln!(f, "symmetric witness: {}", show(&self.symmetric_witness))?;
        writeln!(f, "skew witness: {}", show(&self.skew_witness))?;
        writeln!(f, "srf: {}", self.srf)?;
        writeln!(f, "orbit size: {}", self.orbit_size)?;
        write!(f, "canonical key: {}", self.canonical_key)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HpTrial {
    pub index: usize,
    pub hyperparams: HyperParams,
    pub val_mrr: f64,
    /// Set when training failed; such trials count as MRR 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// `eta` uniform in (0, 1], `lambda` log-uniform in [1e-5, 1e-1], batch size
/// from [`BATCH_CHOICES`].
pub fn sample_hyperparams(rng: &mut impl Rng, d: usize, epochs: usize, seed: u64) -> HyperParams {
    let eta = 1.0 - rng.gen::<f64>();
    let lambda = 10f64.powf(rng.gen_range(-5.0..=-1.0));
    let batch_size = *BATCH_CHOICES.choose(rng).expect("nonempty");
    HyperParams { d, eta, lambda, batch_size, epochs, seed }
}

fn jsonl_writer(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_line<T: Serialize>(w: &mut BufWriter<File>, path: &Path, value: &T) -> Result<()> {
    writeln!(w, "{}", serde_json::to_string(value)?).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn train_or_zero(
    a: &StructureMatrix,
    data: &TripleStore,
    filter: &FilterIndex,
    hp: &HyperParams,
    k: usize,
) -> Result<(Option<EmbeddingStore>, f64, Option<String>)> {
    let init = init_embeddings(data.n_entities(), data.n_relations(), k, hp)?;
    match train_structure(a, init, data, filter, hp, &TrainOptions::default()) {
        Ok((store, report)) => Ok((Some(store), report.val_mrr, None)),
        Err(Error::Numeric(msg)) => Ok((None, 0.0, Some(msg))),
        Err(e) => Err(e),
    }
}

/// Stage 1: random hyper-parameter draws on the probe structure; returns the
/// draw with the best validation MRR and every trial (also written to
/// `hpsearch.jsonl`).
pub fn cmd_hpsearch(
    cfg: &ExperimentConfig,
    data: &TripleStore,
    filter: &FilterIndex,
) -> Result<(HyperParams, Vec<HpTrial>)> {
    cfg.validate()?;
    let path = cfg.out_dir.join("hpsearch.jsonl");
    let mut log = jsonl_writer(&path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(candidate_seed(cfg.seed, usize::MAX, 1));
    let mut trials = Vec::with_capacity(cfg.stage1.trials);
    for index in 0..cfg.stage1.trials {
        let seed = candidate_seed(cfg.seed, usize::MAX - 1, index);
        let hp = sample_hyperparams(&mut rng, cfg.stage1.d, cfg.search.hp.epochs, seed);
        let (_, val_mrr, error) = train_or_zero(&cfg.stage1.probe, data, filter, &hp, cfg.search.k)?;
        let trial = HpTrial { index, hyperparams: hp, val_mrr, error };
        write_line(&mut log, &path, &trial)?;
        trials.push(trial);
    }
    let best = trials
        .iter()
        .fold(None::<&HpTrial>, |b, t| match b {
            Some(b) if b.val_mrr >= t.val_mrr => Some(b),
            _ => Some(t),
        })
        .expect("at least one trial");
    Ok((best.hyperparams.clone(), trials))
}

/// Stage 2: the configured search with `hp` for candidate training; outputs
/// go to the experiment directory.
pub fn cmd_search(
    cfg: &ExperimentConfig,
    data: &TripleStore,
    filter: &FilterIndex,
    hp: &HyperParams,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    let search = SearchConfig {
        hp: hp.clone(),
        out_dir: Some(cfg.out_dir.clone()),
        ..cfg.search.clone()
    };
    run_search(&search, data, filter)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneTrial {
    pub index: usize,
    pub structure: StructureMatrix,
    pub hyperparams: HyperParams,
    pub val_mrr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub mrr: f64,
    pub h1: f64,
    pub h3: f64,
    pub h10: f64,
}

impl From<&EvalReport> for TestMetrics {
    fn from(r: &EvalReport) -> Self {
        TestMetrics { mrr: r.mrr, h1: r.hits(1), h3: r.hits(3), h10: r.hits(10) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub structure: StructureMatrix,
    pub hyperparams: HyperParams,
    pub val_mrr: f64,
    pub test: TestMetrics,
    /// Always 1: only the winner is scored on the test split.
    pub test_evaluations: usize,
    pub trials: Vec<FinetuneTrial>,
}

impl FinalReport {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: FinalReport = serde_json::from_str(&text)?;
        if report.test_evaluations != 1 || report.trials.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: "final report must hold one test evaluation and at least one trial".into(),
            });
        }
        Ok(report)
    }
}

/// Stage 3: retrains sampled (structure, hyper-parameter) pairs at the
/// configured dimensions and reports test metrics for the best one only.
///
/// Trial 0 retrains the best searched structure with its search
/// hyper-parameters at the first dimension choice; later trials sample the
/// structure from `top` and draw fresh hyper-parameters.
pub fn cmd_finetune(
    cfg: &ExperimentConfig,
    data: &TripleStore,
    filter: &FilterIndex,
    top: &[SearchRecord],
) -> Result<FinalReport> {
    cfg.validate()?;
    let best = top
        .iter()
        .max_by(|x, y| x.val_mrr.total_cmp(&y.val_mrr))
        .ok_or_else(|| Error::Config("fine-tuning needs at least one searched structure".into()))?;
    let path = cfg.out_dir.join("finetune.jsonl");
    let mut log = jsonl_writer(&path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(candidate_seed(cfg.seed, usize::MAX - 2, 1));
    let epochs = cfg.search.hp.epochs;
    let mut trials = Vec::with_capacity(cfg.stage3.trials);
    let mut winner: Option<(usize, EmbeddingStore)> = None;
    let mut best_val = f64::NEG_INFINITY;
    for index in 0..cfg.stage3.trials {
        let seed = candidate_seed(cfg.seed, usize::MAX - 3, index);
        let (structure, hp) = if index == 0 {
            let hp = HyperParams { d: cfg.stage3.d_choices[0], seed, ..best.hyperparams.clone() };
            (best.structure.clone(), hp)
        } else {
            let structure = top.choose(&mut rng).expect("nonempty").structure.clone();
            let d = *cfg.stage3.d_choices.choose(&mut rng).expect("nonempty");
            (structure, sample_hyperparams(&mut rng, d, epochs, seed))
        };
        let (store, val_mrr, error) = train_or_zero(&structure, data, filter, &hp, cfg.search.k)?;
        if let Some(store) = store.filter(|_| val_mrr > best_val) {
            best_val = val_mrr;
            winner = Some((index, store));
        }
        let trial = FinetuneTrial { index, structure, hyperparams: hp, val_mrr, error };
        write_line(&mut log, &path, &trial)?;
        trials.push(trial);
    }
    let (w, store) = winner.ok_or_else(|| Error::Numeric("every fine-tuning trial diverged".into()))?;
    let chosen = trials[w].clone();
    let test = evaluate(&chosen.structure, &store, &data.test, filter)?;
    let ckpt_dir = cfg.out_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    store.save_checkpoint(&ckpt_dir.join("winner.bin"))?;
    let report = FinalReport {
        structure: chosen.structure,
        hyperparams: chosen.hyperparams,
        val_mrr: chosen.val_mrr,
        test: TestMetrics::from(&test),
        test_evaluations: 1,
        trials,
    };
    let out = cfg.out_dir.join("final_report.json");
    std::fs::write(&out, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&out, e))?;
    Ok(report)
}

/// All three stages.
pub fn run_pipeline(cfg: &ExperimentConfig, data: &TripleStore, filter: &FilterIndex) -> Result<FinalReport> {
    let (hp, _) = cmd_hpsearch(cfg, data, filter)?;
    let hp_path = cfg.out_dir.join("hp.json");
    std::fs::write(&hp_path, serde_json::to_string_pretty(&hp)?).map_err(|e| Error::io(&hp_path, e))?;
    let outcome = cmd_search(cfg, data, filter, &hp)?;
    cmd_finetune(cfg, data, filter, &outcome.top)
}

/// Ranks each query's terminal entity against all entities.
pub fn cmd_query_eval(
    a: &StructureMatrix,
    store: &EmbeddingStore,
    data: &TripleStore,
    queries: &PathQuerySet,
) -> Result<EvalReport> {
    let mut answers = PathAnswerIndex::new(data);
    evaluate_paths(a, store, queries, &mut answers)
}

/// Evaluates a split with filtered ranking.
pub fn cmd_evaluate(
    a: &StructureMatrix,
    store: &EmbeddingStore,
    data: &TripleStore,
    split: Split,
    filter: &FilterIndex,
) -> Result<EvalReport> {
    evaluate(a, store, data.split(split), filter)
}

/// Turns a config file into command-line flags.
///
/// Lines are `key = value`; `#` starts a comment; `[section]` prefixes later
/// keys as `section-key`. `true` / `false` values toggle bare flags.
pub fn config_file_args(text: &str, path: &Path) -> Result<Vec<String>> {
    let mut section = String::new();
    let mut args = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { path: path.to_path_buf(), line: n + 1, message };
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(format!("unterminated section '{line}'")))?;
            section = name.trim().to_string();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key = value, found '{line}'")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(err("empty key".into()));
        }
        let flag = if section.is_empty() {
            format!("--{key}")
        } else {
            format!("--{section}-{key}")
        };
        match value {
            "true" => args.push(flag),
            "false" => {}
            _ => {
                args.push(flag);
                args.push(value.to_string());
            }
        }
    }
    Ok(args)
}

/// `argv` with the flags from `--config FILE` (if any) inserted right after
/// the subcommand, so explicit flags win.
pub fn expand_config_args(argv: Vec<String>) -> Result<Vec<String>> {
    let Some(pos) = argv.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(argv);
    };
    let (path, drop) = match argv[pos].strip_prefix("--config=") {
        Some(p) => (p.to_string(), 1),
        None => (
            argv.get(pos + 1)
                .cloned()
                .ok_or_else(|| Error::Config("--config needs a file".into()))?,
            2,
        ),
    };
    let path = PathBuf::from(path);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file_args = config_file_args(&text, &path)?;
    let mut rest: Vec<String> = argv;
    rest.drain(pos..pos + drop);
    let insert_at = rest
        .iter()
        .skip(1)
        .position(|a| !a.starts_with('-'))
        .map_or(rest.len(), |i| i + 2);
    let mut out: Vec<String> = rest[..insert_at].to_vec();
    out.extend(file_args);
    out.extend_from_slice(&rest[insert_at..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{build_filter_index, generate_synthetic_kg, SyntheticSpec};
    use crate::search::SearchAlgo;

    #[test]
    fn analyze_reports() {
        let c = cmd_analyze(&builtin_structure("complex").unwrap()).to_string();
        assert!(c.contains("fully expressive: yes; witnesses [1,2,0,0] / [0,0,3,4]"), "{c}");
        let d = cmd_analyze(&builtin_structure("distmult").unwrap()).to_string();
        assert!(d.contains("skew witness: none"));
        let z = cmd_analyze(&StructureMatrix::zeros(4).unwrap()).to_string();
        assert!(z.contains("degenerate: yes (rank 0)"));
    }

    #[test]
    fn structure_files() {
        let dir = tempfile::tempdir().unwrap();
        let rows = dir.path().join("rows.json");
        std::fs::write(&rows, "[[1,0],[0,2]]").unwrap();
        assert_eq!(load_structure(rows.to_str().unwrap()).unwrap().entries(), &[1, 0, 0, 2]);
        let obj = dir.path().join("obj.json");
        std::fs::write(&obj, r#"{"k":2,"entries":[[0,1],[2,0]]}"#).unwrap();
        assert_eq!(load_structure(obj.to_str().unwrap()).unwrap().entries(), &[0, 1, 2, 0]);
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, "{not json").unwrap();
        assert_eq!(load_structure(bad.to_str().unwrap()).unwrap_err().exit_code(), 3);
        assert_eq!(load_structure("quate").unwrap(), builtin_structure("quate").unwrap());
        assert_eq!(load_structure("[[0,1],[2,0]]").unwrap().entries(), &[0, 1, 2, 0]);
        assert_eq!(load_structure("[[0,1],[2").unwrap_err().exit_code(), 3);
    }

    #[test]
    fn config_file_parsing() {
        let text = "k = 4\nno-filter = true\n# comment\n[stage3]\ntrials = 3 # inline\nd-choices = 64,128\n";
        let args = config_file_args(text, Path::new("x.cfg")).unwrap();
        assert_eq!(
            args,
            ["--k", "4", "--no-filter", "--stage3-trials", "3", "--stage3-d-choices", "64,128"]
        );
        assert!(config_file_args("oops\n", Path::new("x.cfg")).is_err());
    }

    #[test]
    fn config_flags_precede_explicit_ones() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "budget = 10\nseed = 3\n").unwrap();
        let argv: Vec<String> = ["blm", "search", "--config", file.to_str().unwrap(), "--budget", "20"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let out = expand_config_args(argv).unwrap();
        assert_eq!(out, ["blm", "search", "--budget", "10", "--seed", "3", "--budget", "20"]);
    }

    fn small_experiment(dir: &Path, seed: u64) -> ExperimentConfig {
        let mut search = SearchConfig::new(SearchAlgo::Evolutionary, 4);
        search.budget = 4;
        search.top_i = 2;
        search.top_p = 2;
        search.seed = seed;
        search.hp = HyperParams { d: 8, epochs: 2, batch_size: 512, ..HyperParams::default() };
        let mut cfg = ExperimentConfig::new("unused", dir, search);
        cfg.stage1 = Stage1Config { trials: 2, d: 8, ..cfg.stage1 };
        cfg.stage3 = Stage3Config { trials: 2, d_choices: vec![8] };
        cfg
    }

    #[test]
    fn pipeline_evaluates_test_once() {
        let data = generate_synthetic_kg(&SyntheticSpec::mixed_200(), 0).unwrap();
        let filter = build_filter_index(&data);
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_experiment(dir.path(), 1);
        let (hp, trials) = cmd_hpsearch(&cfg, &data, &filter).unwrap();
        let best = trials.iter().map(|t| t.val_mrr).fold(f64::NEG_INFINITY, f64::max);
        assert!(trials.iter().any(|t| t.hyperparams == hp && t.val_mrr == best));
        assert_eq!(cmd_hpsearch(&cfg, &data, &filter).unwrap().0, hp);
        let report = run_pipeline(&cfg, &data, &filter).unwrap();
        assert_eq!(report.test_evaluations, 1);
        let loaded = FinalReport::load(&dir.path().join("final_report.json")).unwrap();
        assert_eq!(loaded, report);
        let records = crate::search::load_records(&dir.path().join("records.jsonl")).unwrap();
        assert_eq!(records.len(), 4);
    }
}
