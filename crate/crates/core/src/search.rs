//! Structure search: progressive, evolutionary and uniform random.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{FilterIndex, TripleStore};
use crate::predictor::{predictor_fit_with, rank_indices, PredictorConfig, SearchRecord};
use crate::scorer::{init_embeddings, HyperParams};
use crate::srf::{srf_features, SrfVector};
use crate::structure::{CanonicalKey, StructureMatrix};
use crate::train::{train_structure, TrainOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchAlgo {
    Progressive,
    Evolutionary,
    Random,
}

impl FromStr for SearchAlgo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "progressive" | "autoblm" => Ok(SearchAlgo::Progressive),
            "evolutionary" | "autoblm+" => Ok(SearchAlgo::Evolutionary),
            "random" => Ok(SearchAlgo::Random),
            other => Err(Error::Config(format!("unknown search algorithm '{other}'"))),
        }
    }
}

impl fmt::Display for SearchAlgo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchAlgo::Progressive => "progressive",
            SearchAlgo::Evolutionary => "evolutionary",
            SearchAlgo::Random => "random",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub algo: SearchAlgo,
    pub k: usize,
    /// Candidates generated per round.
    pub n_candidates: usize,
    /// Candidates kept per round after predictor ranking.
    pub top_p: usize,
    /// Population size / number of top parents.
    pub top_i: usize,
    /// Nonzero entries of initial structures.
    pub b0: usize,
    /// Per-entry mutation probability.
    pub p_m: f64,
    /// Maximum number of trained structures.
    pub budget: usize,
    pub seed: u64,
    pub hp: HyperParams,
    pub use_filter: bool,
    pub use_predictor: bool,
    pub workers: usize,
    pub predictor: PredictorConfig,
    /// Score candidates on this many validation triples instead of all.
    pub val_sample: Option<usize>,
    /// Where `records.jsonl`, `curve.csv` and `top_structures.json` go.
    pub out_dir: Option<PathBuf>,
    /// Reuse matching records from an existing `records.jsonl`.
    pub resume: bool,
}

impl SearchConfig {
    pub fn new(algo: SearchAlgo, k: usize) -> Self {
        SearchConfig {
            algo,
            k,
            n_candidates: 128,
            top_p: 8,
            top_i: 8,
            b0: k,
            p_m: 2.0 / (k * k) as f64,
            budget: 64,
            seed: 0,
            hp: HyperParams::default(),
            use_filter: true,
            use_predictor: true,
            workers: 1,
            predictor: PredictorConfig::default(),
            val_sample: None,
            out_dir: None,
            resume: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k;
        let fail = |m: String| Err(Error::Config(m));
        if !(2..=crate::structure::MAX_K).contains(&k) {
            return fail(format!("k={k} outside 2..={}", crate::structure::MAX_K));
        }
        if self.top_p == 0 || self.top_p > self.n_candidates {
            return fail(format!("P={} must be in 1..=N={}", self.top_p, self.n_candidates));
        }
        if self.top_i == 0 || self.budget < self.top_i {
            return fail(format!("budget={} must be >= I={} >= 1", self.budget, self.top_i));
        }
        if self.b0 < k || self.b0 > k * k {
            return fail(format!("b0={} must be in {k}..={}", self.b0, k * k));
        }
        if !(self.p_m > 0.0 && self.p_m <= 1.0) {
            return fail(format!("p_m={} outside (0, 1]", self.p_m));
        }
        if self.workers == 0 {
            return fail("workers must be positive".into());
        }
        self.hp.validate(k).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Structures chosen by a search plus everything it trained.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    /// Best structures, highest validation MRR first.
    pub top: Vec<SearchRecord>,
    /// Every trained structure in training order.
    pub records: Vec<SearchRecord>,
    /// `(wall_clock_seconds, best_val_mrr_so_far)` after each record.
    pub curve: Vec<(f64, f64)>,
}

impl SearchOutcome {
    pub fn best(&self) -> Option<&SearchRecord> {
        self.top.first()
    }
}

/// Number of trained structures needed before the best validation MRR first
/// reaches `threshold`.
pub fn structures_to_reach(records: &[SearchRecord], threshold: f64) -> Option<usize> {
    let mut best = f64::NEG_INFINITY;
    records.iter().enumerate().find_map(|(i, r)| {
        best = best.max(r.val_mrr);
        (best >= threshold).then_some(i + 1)
    })
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for candidate `index` of `round`.
pub fn candidate_seed(master: u64, round: usize, index: usize) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(round as u64)) ^ index as u64)
}

fn random_value(k: usize, rng: &mut impl Rng) -> i8 {
    let m = rng.gen_range(1..=k as i8);
    if rng.gen_bool(0.5) {
        m
    } else {
        -m
    }
}

/// `b0` distinct cells with uniform values in `{+-1, .., +-k}`, zeros elsewhere.
pub fn sample_initial(k: usize, b0: usize, rng: &mut impl Rng) -> Result<StructureMatrix> {
    if b0 > k * k {
        return Err(Error::invalid(format!("b0={b0} exceeds k^2={}", k * k)));
    }
    let mut a = StructureMatrix::zeros(k)?;
    for cell in sample(rng, k * k, b0).into_iter() {
        a.set(cell / k, cell % k, random_value(k, rng))?;
    }
    Ok(a)
}

/// Sets one uniformly chosen zero cell to a uniform nonzero value; `None`
/// when the parent has no zero cell.
pub fn progressive_step(parent: &StructureMatrix, rng: &mut impl Rng) -> Option<StructureMatrix> {
    let k = parent.k();
    let zeros: Vec<usize> = (0..k * k).filter(|&c| parent.entries()[c] == 0).collect();
    let &cell = zeros.choose(rng)?;
    let mut child = parent.clone();
    child
        .set(cell / k, cell % k, random_value(k, rng))
        .expect("value in range");
    Some(child)
}

/// Each entry independently, with probability `p_m`, becomes a uniformly
/// chosen different value of `{0, +-1, .., +-k}`.
pub fn mutate(a: &StructureMatrix, p_m: f64, rng: &mut impl Rng) -> Result<StructureMatrix> {
    if !(p_m > 0.0 && p_m <= 1.0) {
        return Err(Error::invalid(format!("p_m={p_m} outside (0, 1]")));
    }
    let k = a.k() as i8;
    let mut entries = a.entries().to_vec();
    for v in &mut entries {
        if rng.gen::<f64>() < p_m {
            // 2k choices after skipping the current value.
            let mut new = rng.gen_range(-k..k);
            if new >= *v {
                new += 1;
            }
            *v = new;
        }
    }
    StructureMatrix::new(a.k(), entries)
}

/// Each entry copied from either parent with probability one half.
pub fn crossover(a1: &StructureMatrix, a2: &StructureMatrix, rng: &mut impl Rng) -> Result<StructureMatrix> {
    if a1.k() != a2.k() {
        return Err(Error::invalid(format!("crossover of k={} and k={}", a1.k(), a2.k())));
    }
    let entries = a1
        .entries()
        .iter()
        .zip(a2.entries())
        .map(|(&x, &y)| if rng.gen_bool(0.5) { x } else { y })
        .collect();
    StructureMatrix::new(a1.k(), entries)
}

/// Every entry uniform over `{0, +-1, .., +-k}`.
pub fn sample_uniform(k: usize, rng: &mut impl Rng) -> StructureMatrix {
    let entries = (0..k * k).map(|_| rng.gen_range(-(k as i8)..=k as i8)).collect();
    StructureMatrix::new(k, entries).expect("values in range")
}

/// Canonical keys of trained structures plus the records themselves.
#[derive(Clone, Debug, Default)]
pub struct SearchState {
    pub history: HashSet<CanonicalKey>,
    pub records: Vec<SearchRecord>,
}

impl SearchState {
    pub fn budget_used(&self) -> usize {
        self.records.len()
    }
}

struct Outputs {
    dir: PathBuf,
    records: BufWriter<File>,
    curve: BufWriter<File>,
}

impl Outputs {
    fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: &str| -> Result<BufWriter<File>> {
            let path = dir.join(name);
            Ok(BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?))
        };
        let mut curve = open("curve.csv")?;
        writeln!(curve, "wall_clock_seconds,best_val_mrr_so_far").map_err(|e| Error::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            records: open("records.jsonl")?,
            curve,
        })
    }

    fn push(&mut self, record: &SearchRecord, seconds: f64, best: f64) -> Result<()> {
        let line = serde_json::to_string(record)?;
        let err = |e| Error::io(&self.dir, e);
        writeln!(self.records, "{line}").map_err(err)?;
        self.records.flush().map_err(err)?;
        writeln!(self.curve, "{seconds},{best}").map_err(err)?;
        self.curve.flush().map_err(err)
    }
}

/// Reads `records.jsonl`.
pub fn load_records(path: &Path) -> Result<Vec<SearchRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SearchRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        if rec.srf != srf_features(&rec.structure) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: "srf does not match structure".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Runs one search; see [`progressive_search`], [`evolutionary_search`] and
/// [`random_search`].
pub struct SearchRunner<'a> {
    cfg: SearchConfig,
    data: &'a TripleStore,
    filter: &'a FilterIndex,
    rng: ChaCha8Rng,
    state: SearchState,
    curve: Vec<(f64, f64)>,
    start: Instant,
    outputs: Option<Outputs>,
    resumed: HashMap<(usize, usize), SearchRecord>,
    pool: rayon::ThreadPool,
}

impl<'a> SearchRunner<'a> {
    pub fn new(cfg: SearchConfig, data: &'a TripleStore, filter: &'a FilterIndex) -> Result<Self> {
        cfg.validate()?;
        if data.train.is_empty() || data.valid.is_empty() {
            return Err(Error::Config("search needs nonempty train and valid splits".into()));
        }
        let mut resumed = HashMap::new();
        if let (true, Some(dir)) = (cfg.resume, cfg.out_dir.as_ref()) {
            let path = dir.join("records.jsonl");
            if path.exists() {
                for r in load_records(&path)? {
                    resumed.insert((r.round, r.index), r);
                }
            }
        }
        let outputs = cfg.out_dir.as_deref().map(Outputs::create).transpose()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(SearchRunner {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            data,
            filter,
            state: SearchState::default(),
            curve: Vec::new(),
            start: Instant::now(),
            outputs,
            resumed,
            pool,
        })
    }

    pub fn state(&self) -> &SearchState {
        &self.state
    }

    pub fn run(mut self) -> Result<SearchOutcome> {
        let top = match self.cfg.algo {
            SearchAlgo::Progressive => self.progressive()?,
            SearchAlgo::Evolutionary => self.evolutionary()?,
            SearchAlgo::Random => self.random()?,
        };
        if let Some(out) = &self.outputs {
            let path = out.dir.join("top_structures.json");
            std::fs::write(&path, serde_json::to_string_pretty(&top)?).map_err(|e| Error::io(&path, e))?;
        }
        Ok(SearchOutcome {
            top,
            records: self.state.records,
            curve: self.curve,
        })
    }

    fn remaining(&self) -> usize {
        self.cfg.budget - self.state.budget_used()
    }

    fn accepts(&self, a: &StructureMatrix, round_keys: &mut HashSet<CanonicalKey>) -> bool {
        if !self.cfg.use_filter {
            return true;
        }
        if a.is_degenerate() {
            return false;
        }
        let key = a.canonical_key();
        !self.state.history.contains(&key) && round_keys.insert(key)
    }

    /// Up to `n` candidates from `make`, giving up after `attempts` draws.
    fn collect(
        &mut self,
        n: usize,
        attempts: usize,
        round_keys: &mut HashSet<CanonicalKey>,
        mut make: impl FnMut(&mut ChaCha8Rng) -> Option<StructureMatrix>,
    ) -> Vec<StructureMatrix> {
        let mut out = Vec::new();
        for _ in 0..attempts {
            if out.len() == n {
                break;
            }
            let Some(c) = make(&mut self.rng) else { continue };
            if self.accepts(&c, round_keys) {
                out.push(c);
            }
        }
        out
    }

    fn candidates(
        &mut self,
        make: impl FnMut(&mut ChaCha8Rng) -> Option<StructureMatrix>,
    ) -> Vec<StructureMatrix> {
        let n = self.cfg.n_candidates;
        self.collect(n, 10 * n, &mut HashSet::new(), make)
    }

    /// Keeps the `P` candidates with the best predicted MRR (or the first `P`
    /// without a predictor), capped by the remaining budget.
    fn select(&mut self, candidates: Vec<StructureMatrix>, round: usize) -> Result<Vec<StructureMatrix>> {
        let keep = self.cfg.top_p.min(self.remaining());
        if !self.cfg.use_predictor || self.state.records.is_empty() || candidates.len() <= keep {
            return Ok(candidates.into_iter().take(keep).collect());
        }
        let seed = candidate_seed(self.cfg.seed ^ 0x5052_4544, round, 0);
        let predictor = predictor_fit_with(&self.state.records, &self.cfg.predictor, seed)?;
        let features: Vec<SrfVector> = candidates.iter().map(srf_features).collect();
        Ok(rank_indices(&predictor, &features, keep)?
            .into_iter()
            .map(|i| candidates[i].clone())
            .collect())
    }

    /// Trains `structures` (round `round`) and appends their records.
    fn train_round(&mut self, round: usize, structures: Vec<StructureMatrix>) -> Result<Vec<SearchRecord>> {
        let structures: Vec<StructureMatrix> = structures.into_iter().take(self.remaining()).collect();
        let data = self.data;
        let filter = self.filter;
        let cfg = &self.cfg;
        let resumed = &self.resumed;
        let opts = TrainOptions {
            val_sample: cfg.val_sample,
            ..TrainOptions::default()
        };
        let train_one = |(index, a): (usize, &StructureMatrix)| -> Result<SearchRecord> {
            if let Some(r) = resumed.get(&(round, index)).filter(|r| &r.structure == a) {
                return Ok(r.clone());
            }
            let hp = HyperParams {
                seed: candidate_seed(cfg.seed, round, index),
                ..cfg.hp.clone()
            };
            let init = init_embeddings(data.n_entities(), data.n_relations(), cfg.k, &hp)?;
            let (_, report) = train_structure(a, init, data, filter, &hp, &opts)?;
            Ok(SearchRecord {
                structure: a.clone(),
                srf: srf_features(a),
                val_mrr: report.val_mrr,
                hyperparams: hp,
                round,
                index,
                wall_clock_seconds: report.wall_clock_seconds,
            })
        };
        let records: Vec<SearchRecord> = if cfg.workers == 1 {
            structures.iter().enumerate().map(train_one).collect::<Result<_>>()?
        } else {
            self.pool
                .install(|| structures.par_iter().enumerate().map(train_one).collect::<Result<_>>())?
        };
        for r in &records {
            self.state.history.insert(r.structure.canonical_key());
            self.state.records.push(r.clone());
            let best = self
                .curve
                .last()
                .map_or(r.val_mrr, |&(_, b)| b.max(r.val_mrr));
            let seconds = self.start.elapsed().as_secs_f64();
            self.curve.push((seconds, best));
            if let Some(out) = self.outputs.as_mut() {
                out.push(r, seconds, best)?;
            }
        }
        Ok(records)
    }

    /// Samples `I` initial structures at `b0` nonzeros. Few sparse structures
    /// survive the filter, so an exhausted tier moves on to `b0 + 1`, `b0 + 2`,
    /// ...: only until the first nonempty tier when `fill` is false, until
    /// `I` structures are found otherwise.
    fn initial_round(&mut self, fill: bool) -> Result<Vec<SearchRecord>> {
        let (k, n) = (self.cfg.k, self.cfg.top_i);
        let attempts = 10 * self.cfg.n_candidates * n;
        let mut round_keys = HashSet::new();
        let mut initial = Vec::new();
        for b in self.cfg.b0..=k * k {
            let found = self.collect(n - initial.len(), attempts, &mut round_keys, |rng| {
                sample_initial(k, b, rng).ok()
            });
            initial.extend(found);
            if initial.len() == n || (!fill && !initial.is_empty()) {
                break;
            }
        }
        self.train_round(0, initial)
    }

    fn progressive(&mut self) -> Result<Vec<SearchRecord>> {
        let k = self.cfg.k;
        let mut tiers: BTreeMap<usize, Vec<SearchRecord>> = BTreeMap::new();
        let initial = self.initial_round(false)?;
        let Some(first) = initial.first() else {
            return Ok(Vec::new());
        };
        let mut b = first.structure.nnz();
        tiers.insert(b, initial);
        let mut round = 0;
        while self.remaining() > 0 && b < k * k {
            b += 1;
            let Some((&parent_b, parents)) = tiers.iter().rev().find(|(_, t)| !t.is_empty()) else {
                break;
            };
            let mut parents = parents.clone();
            parents.sort_by(|x, y| y.val_mrr.total_cmp(&x.val_mrr));
            parents.truncate(self.cfg.top_i);
            let steps = b - parent_b;
            let candidates = self.candidates(|rng| {
                let mut child = parents.choose(rng)?.structure.clone();
                for _ in 0..steps {
                    child = progressive_step(&child, rng)?;
                }
                Some(child)
            });
            if candidates.is_empty() {
                tiers.insert(b, Vec::new());
                continue;
            }
            round += 1;
            let chosen = self.select(candidates, round)?;
            let trained = self.train_round(round, chosen)?;
            tiers.insert(b, trained);
        }
        Ok(top_records(&self.state.records, self.cfg.top_i))
    }

    fn evolutionary(&mut self) -> Result<Vec<SearchRecord>> {
        let mut population = self.initial_round(true)?;
        let p_m = self.cfg.p_m;
        let mut round = 0;
        let mut empty_rounds = 0;
        while self.remaining() > 0 && !population.is_empty() && empty_rounds < 10 {
            round += 1;
            let parents: Vec<StructureMatrix> = population.iter().map(|r| r.structure.clone()).collect();
            let candidates = self.candidates(|rng| {
                if rng.gen_bool(0.5) {
                    mutate(parents.choose(rng)?, p_m, rng).ok()
                } else {
                    let a1 = parents.choose(rng)?;
                    let a2 = parents.choose(rng)?;
                    crossover(a1, a2, rng).ok()
                }
            });
            if candidates.is_empty() {
                empty_rounds += 1;
                continue;
            }
            empty_rounds = 0;
            let chosen = self.select(candidates, round)?;
            for rec in self.train_round(round, chosen)? {
                let (worst, worst_mrr) = population
                    .iter()
                    .enumerate()
                    .map(|(i, r)| (i, r.val_mrr))
                    .min_by(|x, y| x.1.total_cmp(&y.1))
                    .expect("nonempty population");
                if rec.val_mrr > worst_mrr {
                    population[worst] = rec;
                }
            }
        }
        Ok(top_records(&population, population.len()))
    }

    fn random(&mut self) -> Result<Vec<SearchRecord>> {
        let k = self.cfg.k;
        let mut round = 0;
        let mut empty_rounds = 0;
        while self.remaining() > 0 && empty_rounds < 10 {
            let n = self.cfg.top_p.min(self.remaining());
            let candidates = self.collect(n, 10 * self.cfg.n_candidates, &mut HashSet::new(), |rng| {
                Some(sample_uniform(k, rng))
            });
            if candidates.is_empty() {
                empty_rounds += 1;
                continue;
            }
            empty_rounds = 0;
            self.train_round(round, candidates)?;
            round += 1;
        }
        Ok(top_records(&self.state.records, self.cfg.top_i))
    }
}

/// Highest validation MRR first; ties keep training order.
pub fn top_records(records: &[SearchRecord], n: usize) -> Vec<SearchRecord> {
    let mut sorted = records.to_vec();
    sorted.sort_by(|x, y| y.val_mrr.total_cmp(&x.val_mrr));
    sorted.truncate(n);
    sorted
}

pub fn progressive_search(cfg: &SearchConfig, data: &TripleStore, filter: &FilterIndex) -> Result<SearchOutcome> {
    let cfg = SearchConfig { algo: SearchAlgo::Progressive, ..cfg.clone() };
    SearchRunner::new(cfg, data, filter)?.run()
}

pub fn evolutionary_search(cfg: &SearchConfig, data: &TripleStore, filter: &FilterIndex) -> Result<SearchOutcome> {
    let cfg = SearchConfig { algo: SearchAlgo::Evolutionary, ..cfg.clone() };
    SearchRunner::new(cfg, data, filter)?.run()
}

pub fn random_search(cfg: &SearchConfig, data: &TripleStore, filter: &FilterIndex) -> Result<SearchOutcome> {
    let cfg = SearchConfig { algo: SearchAlgo::Random, ..cfg.clone() };
    SearchRunner::new(cfg, data, filter)?.run()
}

/// Runs whichever algorithm `cfg.algo` names.
pub fn run_search(cfg: &SearchConfig, data: &TripleStore, filter: &FilterIndex) -> Result<SearchOutcome> {
    SearchRunner::new(cfg.clone(), data, filter)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{build_filter_index, generate_synthetic_kg, SyntheticSpec};
    use crate::structure::builtin_structure;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn initial_samples_have_b0_nonzeros() {
        let mut r = rng(1);
        for b0 in [4, 7, 16] {
            let a = sample_initial(4, b0, &mut r).unwrap();
            assert_eq!(a.nnz(), b0);
            assert!(a.entries().iter().all(|v| v.abs() <= 4));
        }
        assert!(sample_initial(4, 17, &mut r).is_err());
    }

    #[test]
    fn progressive_step_adds_one_entry() {
        let mut r = rng(2);
        let parent = builtin_structure("distmult").unwrap();
        for _ in 0..50 {
            let child = progressive_step(&parent, &mut r).unwrap();
            assert_eq!(child.nnz(), 5);
            let diff = (0..16).filter(|&c| child.entries()[c] != parent.entries()[c]).count();
            assert_eq!(diff, 1);
        }
        let full = StructureMatrix::new(2, vec![1, 2, -1, 2]).unwrap();
        assert!(progressive_step(&full, &mut r).is_none());
    }

    #[test]
    fn mutation_changes_values() {
        let mut r = rng(3);
        let a = builtin_structure("complex").unwrap();
        let mut changed = 0;
        for _ in 0..2000 {
            let m = mutate(&a, 0.125, &mut r).unwrap();
            changed += (0..16).filter(|&c| m.entries()[c] != a.entries()[c]).count();
        }
        let mean = changed as f64 / 2000.0;
        assert!((mean - 2.0).abs() < 0.15, "{mean}");
        let all = mutate(&a, 1.0, &mut r).unwrap();
        assert!((0..16).all(|c| all.entries()[c] != a.entries()[c]));
        assert!(mutate(&a, 0.0, &mut r).is_err());
    }

    #[test]
    fn crossover_picks_parent_entries() {
        let mut r = rng(4);
        let a = builtin_structure("quate").unwrap();
        assert_eq!(crossover(&a, &a, &mut r).unwrap(), a);
        let ones = StructureMatrix::new(4, vec![1; 16]).unwrap();
        let neg = StructureMatrix::new(4, vec![-1; 16]).unwrap();
        let c = crossover(&ones, &neg, &mut r).unwrap();
        assert!(c.entries().iter().all(|v| v.abs() == 1));
        assert!(crossover(&a, &StructureMatrix::zeros(3).unwrap(), &mut r).is_err());
    }

    #[test]
    fn uniform_sampler_frequencies() {
        let mut r = rng(5);
        let mut counts = [0usize; 9];
        let samples = 10_000;
        for _ in 0..samples {
            let a = sample_uniform(4, &mut r);
            counts[(a.entries()[0] + 4) as usize] += 1;
        }
        let p = 1.0 / 9.0;
        let sigma = (samples as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - samples as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = SearchConfig::new(SearchAlgo::Evolutionary, 4);
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.p_m, 0.125);
        cfg.top_p = 200;
        assert!(cfg.validate().is_err());
        cfg.top_p = 8;
        cfg.budget = 4;
        assert!(cfg.validate().is_err());
        cfg.budget = 64;
        cfg.b0 = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn threshold_counting() {
        let mk = |m: f64| SearchRecord {
            structure: builtin_structure("distmult").unwrap(),
            srf: srf_features(&builtin_structure("distmult").unwrap()),
            val_mrr: m,
            hyperparams: HyperParams::default(),
            round: 0,
            index: 0,
            wall_clock_seconds: 0.0,
        };
        let recs = vec![mk(0.1), mk(0.3), mk(0.2), mk(0.5)];
        assert_eq!(structures_to_reach(&recs, 0.25), Some(2));
        assert_eq!(structures_to_reach(&recs, 0.5), Some(4));
        assert_eq!(structures_to_reach(&recs, 0.6), None);
    }

    fn tiny_cfg(algo: SearchAlgo) -> SearchConfig {
        SearchConfig {
            n_candidates: 128,
            top_p: 2,
            top_i: 2,
            budget: 6,
            hp: HyperParams {
                d: 8,
                eta: 0.1,
                lambda: 0.0,
                batch_size: 512,
                epochs: 2,
                seed: 0,
            },
            ..SearchConfig::new(algo, 4)
        }
    }

    #[test]
    fn searches_respect_budget_and_filter() {
        let data = generate_synthetic_kg(&SyntheticSpec::mixed_200(), 0).unwrap();
        let filter = build_filter_index(&data);
        for algo in [SearchAlgo::Progressive, SearchAlgo::Evolutionary, SearchAlgo::Random] {
            let out = run_search(&tiny_cfg(algo), &data, &filter).unwrap();
            assert_eq!(out.records.len(), 6, "{algo}");
            assert_eq!(out.top.len(), 2);
            let keys: HashSet<_> = out.records.iter().map(|r| r.structure.canonical_key()).collect();
            assert_eq!(keys.len(), 6);
            assert!(out.records.iter().all(|r| !r.structure.is_degenerate()));
            assert!(out.top[0].val_mrr >= out.top[1].val_mrr);
        }
        let out = run_search(&tiny_cfg(SearchAlgo::Progressive), &data, &filter).unwrap();
        for w in out.records.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if a.round == b.round {
                assert_eq!(a.structure.nnz(), b.structure.nnz());
            } else {
                assert!(a.structure.nnz() < b.structure.nnz());
            }
        }
    }

    #[test]
    fn budget_equal_to_population_returns_initial_tier() {
        let data = generate_synthetic_kg(&SyntheticSpec::mixed_200(), 0).unwrap();
        let filter = build_filter_index(&data);
        let cfg = SearchConfig { budget: 2, ..tiny_cfg(SearchAlgo::Progressive) };
        let out = run_search(&cfg, &data, &filter).unwrap();
        assert_eq!(out.records.len(), 2);
        assert!(out.records.iter().all(|r| r.round == 0 && r.structure.nnz() == 4));
    }
}
