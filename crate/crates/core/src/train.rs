//! Full-softmax training with AdaGrad and filtered link-prediction metrics.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{FilterIndex, Split, Triple, TripleStore};
use crate::scorer::{
    apply_into, apply_transpose_into, relation_grad_into, row, EmbeddingStore, HyperParams,
};
use crate::structure::{StructureMatrix, Term};

/// AdaGrad denominator offset.
pub const ADAGRAD_EPS: f64 = 1e-10;

/// Hits@k cut-offs reported by [`evaluate`].
pub const HITS_AT: [usize; 3] = [1, 3, 10];

/// Dense gradients with the shapes of an [`EmbeddingStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub entity: Array2<f64>,
    pub relation: Array2<f64>,
}

impl Gradients {
    pub fn zeros_like(store: &EmbeddingStore) -> Self {
        Gradients {
            entity: Array2::zeros(store.entity.raw_dim()),
            relation: Array2::zeros(store.relation.raw_dim()),
        }
    }
}

/// Running sums of squared gradients.
pub type Accumulators = Gradients;

fn row_mut(table: &mut Array2<f64>, i: usize) -> &mut [f64] {
    table
        .row_mut(i)
        .into_slice()
        .expect("embedding tables are standard layout")
}

/// Adds `-log softmax(logits)[target]` for every row and overwrites `logits`
/// with `softmax - onehot(target)`.
pub(crate) fn softmax_xent_rows(logits: &mut Array2<f64>, targets: &[usize]) -> f64 {
    let mut loss = 0.0;
    for (mut row, &target) in logits.rows_mut().into_iter().zip(targets) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let true_logit = row[target];
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let log_sum = sum.ln() + max;
        loss += log_sum - true_logit;
        row.mapv_inplace(|v| v / sum);
        row[target] -= 1.0;
    }
    loss
}

/// Full multi-class log-loss over tails and heads plus the squared-l2 term on
/// every batch participant, and its gradients.
pub fn batch_loss(
    a: &StructureMatrix,
    store: &EmbeddingStore,
    batch: &[Triple],
    lambda: f64,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::invalid("batch must be nonempty"));
    }
    store.check_structure(a)?;
    for t in batch {
        store.check_ids(&[t.h, t.t], &[t.r])?;
    }
    let mut grads = Gradients::zeros_like(store);
    let loss = batch_loss_into(&a.terms(), store, batch, lambda, &mut grads);
    Ok((loss, grads))
}

/// Accumulates into `grads` (assumed zeroed by the caller) and returns the loss.
fn batch_loss_into(
    terms: &[Term],
    store: &EmbeddingStore,
    batch: &[Triple],
    lambda: f64,
    grads: &mut Gradients,
) -> f64 {
    let b = batch.len();
    let d = store.dim();
    let width = store.chunk_width();
    // Rows 0..b: tail queries G(r)^T h; rows b..2b: head queries G(r) t.
    let mut queries = Array2::<f64>::zeros((2 * b, d));
    for (i, tr) in batch.iter().enumerate() {
        let r = row(&store.relation, tr.r);
        apply_transpose_into(terms, width, r, row(&store.entity, tr.h), row_mut(&mut queries, i));
        apply_into(terms, width, r, row(&store.entity, tr.t), row_mut(&mut queries, b + i));
    }
    let mut logits = queries.dot(&store.entity.t());
    let targets: Vec<usize> = batch.iter().map(|t| t.t).chain(batch.iter().map(|t| t.h)).collect();
    let mut loss = softmax_xent_rows(&mut logits, &targets);

    grads.entity += &logits.t().dot(&queries);
    let query_grads = logits.dot(&store.entity);
    for (i, tr) in batch.iter().enumerate() {
        let r = row(&store.relation, tr.r);
        let h = row(&store.entity, tr.h);
        let t = row(&store.entity, tr.t);
        let gq = query_grads.row(i);
        let gq = gq.as_slice().expect("standard layout");
        let gw = query_grads.row(b + i);
        let gw = gw.as_slice().expect("standard layout");
        apply_into(terms, width, r, gq, row_mut(&mut grads.entity, tr.h));
        apply_transpose_into(terms, width, r, gw, row_mut(&mut grads.entity, tr.t));
        let gr = row_mut(&mut grads.relation, tr.r);
        relation_grad_into(terms, width, h, gq, gr);
        relation_grad_into(terms, width, gw, t, gr);
    }
    if lambda != 0.0 {
        let mut reg = |table: &Array2<f64>, gtable: &mut Array2<f64>, id: usize| {
            let v = row(table, id);
            loss += lambda * v.iter().map(|x| x * x).sum::<f64>();
            for (g, x) in row_mut(gtable, id).iter_mut().zip(v) {
                *g += 2.0 * lambda * x;
            }
        };
        for tr in batch {
            reg(&store.entity, &mut grads.entity, tr.h);
            reg(&store.relation, &mut grads.relation, tr.r);
            reg(&store.entity, &mut grads.entity, tr.t);
        }
    }
    loss
}

pub fn init_accumulators(store: &EmbeddingStore) -> Accumulators {
    Gradients::zeros_like(store)
}

/// `G += g^2; theta -= eta * g / (sqrt(G) + eps)`, elementwise.
pub fn adagrad_step(
    store: &mut EmbeddingStore,
    acc: &mut Accumulators,
    grads: &Gradients,
    eta: f64,
) -> Result<()> {
    if acc.entity.raw_dim() != store.entity.raw_dim()
        || acc.relation.raw_dim() != store.relation.raw_dim()
        || grads.entity.raw_dim() != store.entity.raw_dim()
        || grads.relation.raw_dim() != store.relation.raw_dim()
    {
        return Err(Error::invalid("accumulator or gradient shape does not match the store"));
    }
    for (theta, g_acc, g) in [
        (&mut store.entity, &mut acc.entity, &grads.entity),
        (&mut store.relation, &mut acc.relation, &grads.relation),
    ] {
        ndarray::Zip::from(theta).and(g_acc).and(g).for_each(|p, s, &g| {
            if g != 0.0 {
                *s += g * g;
                *p -= eta * g / (s.sqrt() + ADAGRAD_EPS);
            }
        });
    }
    Ok(())
}

/// Link-prediction metrics over head and tail ranks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mrr: f64,
    pub h_at: BTreeMap<usize, f64>,
    pub head_ranks: Vec<usize>,
    pub tail_ranks: Vec<usize>,
}

impl EvalReport {
    pub fn from_ranks(head_ranks: Vec<usize>, tail_ranks: Vec<usize>) -> Self {
        let all: Vec<usize> = head_ranks.iter().chain(&tail_ranks).copied().collect();
        let n = all.len().max(1) as f64;
        let mrr = all.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
        let h_at = HITS_AT
            .iter()
            .map(|&k| (k, all.iter().filter(|&&r| r <= k).count() as f64 / n))
            .collect();
        EvalReport {
            mrr,
            h_at,
            head_ranks,
            tail_ranks,
        }
    }

    pub fn hits(&self, k: usize) -> f64 {
        self.h_at.get(&k).copied().unwrap_or(0.0)
    }
}

/// `1 + |{e : scores[e] >= scores[target], e not in known}|`, where `known`
/// (sorted) holds every entity forming a true triple, including `target`.
pub fn filtered_rank(scores: &[f64], target: usize, known: &[usize]) -> usize {
    let s = scores[target];
    let above = scores.iter().filter(|&&v| v >= s).count();
    let known_above = known.iter().filter(|&&e| e != target && scores[e] >= s).count();
    // `target` itself is always counted in `above`.
    above - known_above
}

/// Unfiltered rank: `1 + |{e != target : scores[e] >= scores[target]}|`.
pub fn raw_rank(scores: &[f64], target: usize) -> usize {
    let s = scores[target];
    scores.iter().filter(|&&v| v >= s).count()
}

const EVAL_CHUNK: usize = 256;

/// Filtered head and tail ranks for every triple.
pub fn evaluate(
    a: &StructureMatrix,
    store: &EmbeddingStore,
    triples: &[Triple],
    filter: &FilterIndex,
) -> Result<EvalReport> {
    store.check_structure(a)?;
    for t in triples {
        store.check_ids(&[t.h, t.t], &[t.r])?;
    }
    let terms = a.terms();
    let width = store.chunk_width();
    let ranks: Vec<(usize, usize)> = triples
        .par_chunks(EVAL_CHUNK)
        .flat_map_iter(|chunk| {
            let b = chunk.len();
            let mut queries = Array2::<f64>::zeros((2 * b, store.dim()));
            for (i, tr) in chunk.iter().enumerate() {
                let r = row(&store.relation, tr.r);
                apply_transpose_into(&terms, width, r, row(&store.entity, tr.h), row_mut(&mut queries, i));
                apply_into(&terms, width, r, row(&store.entity, tr.t), row_mut(&mut queries, b + i));
            }
            let scores = queries.dot(&store.entity.t());
            chunk
                .iter()
                .enumerate()
                .map(|(i, tr)| {
                    let tail_scores = scores.row(i);
                    let head_scores = scores.row(b + i);
                    let tail = filtered_rank(
                        tail_scores.as_slice().expect("standard layout"),
                        tr.t,
                        filter.tails_of(tr.h, tr.r),
                    );
                    let head = filtered_rank(
                        head_scores.as_slice().expect("standard layout"),
                        tr.h,
                        filter.heads_of(tr.r, tr.t),
                    );
                    (head, tail)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let (head, tail) = ranks.into_iter().unzip();
    Ok(EvalReport::from_ranks(head, tail))
}

pub fn evaluate_split(
    a: &StructureMatrix,
    store: &EmbeddingStore,
    data: &TripleStore,
    split: Split,
    filter: &FilterIndex,
) -> Result<EvalReport> {
    evaluate(a, store, data.split(split), filter)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_train_loss: f64,
    pub val_mrr: f64,
    pub val_h1: f64,
    pub val_h10: f64,
    pub epochs_run: usize,
    /// Mean per-triple training loss of every epoch.
    pub epoch_losses: Vec<f64>,
    pub wall_clock_seconds: f64,
}

/// Optional behaviour of [`train_structure`]; everything is off by default.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Evaluate on a seeded subset of this many validation triples.
    pub val_sample: Option<usize>,
    /// Evaluate after every epoch and stop after this many epochs without
    /// improvement.
    pub patience: Option<usize>,
    /// Evaluate after every epoch.
    pub eval_every_epoch: bool,
    /// Append `epoch,loss,val_mrr,seconds` rows here.
    pub curve_csv: Option<PathBuf>,
}

fn validation_subset(data: &TripleStore, opts: &TrainOptions, seed: u64) -> Vec<Triple> {
    let mut valid = data.valid.clone();
    if let Some(n) = opts.val_sample.filter(|&n| n < valid.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        valid.shuffle(&mut rng);
        valid.truncate(n);
    }
    valid
}

/// Trains embeddings for a fixed structure, then scores the validation split.
pub fn train_structure(
    a: &StructureMatrix,
    init: EmbeddingStore,
    data: &TripleStore,
    filter: &FilterIndex,
    hp: &HyperParams,
    opts: &TrainOptions,
) -> Result<(EmbeddingStore, TrainReport)> {
    hp.validate(a.k())?;
    init.check_structure(a)?;
    if init.dim() != hp.d {
        return Err(Error::invalid(format!(
            "embedding dimension {} does not match d={}",
            init.dim(),
            hp.d
        )));
    }
    if data.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    data.validate()?;
    if init.n_entities() < data.n_entities() || init.n_relations() < data.n_relations() {
        return Err(Error::invalid("embedding tables are smaller than the vocabularies"));
    }
    let start = Instant::now();
    let terms = a.terms();
    let valid = validation_subset(data, opts, hp.seed);
    let mut store = init;
    let mut acc = init_accumulators(&store);
    let mut grads = Gradients::zeros_like(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(2);
    let mut order = data.train.clone();
    let mut csv = match &opts.curve_csv {
        Some(path) => Some(std::io::BufWriter::new(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?,
        )),
        None => None,
    };
    let mut epoch_losses = Vec::with_capacity(hp.epochs);
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut last_eval: Option<EvalReport> = None;
    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, batch) in order.chunks(hp.batch_size).enumerate() {
            grads.entity.fill(0.0);
            grads.relation.fill(0.0);
            let loss = batch_loss_into(&terms, &store, batch, hp.lambda, &mut grads);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss for structure {a:?} at epoch {epoch}, batch {bi}"
                )));
            }
            total += loss;
            adagrad_step(&mut store, &mut acc, &grads, hp.eta)?;
        }
        epoch_losses.push(total / order.len() as f64);
        if opts.eval_every_epoch || opts.patience.is_some() || csv.is_some() {
            let report = evaluate(a, &store, &valid, filter)?;
            if let (Some(w), Some(path)) = (csv.as_mut(), opts.curve_csv.as_ref()) {
                writeln!(
                    w,
                    "{},{},{},{}",
                    epoch + 1,
                    epoch_losses[epoch],
                    report.mrr,
                    start.elapsed().as_secs_f64()
                )
                .map_err(|e| Error::io(path, e))?;
            }
            let mrr = report.mrr;
            last_eval = Some(report);
            if mrr > best {
                best = mrr;
                stale = 0;
            } else {
                stale += 1;
            }
            if opts.patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
    }
    if let (Some(w), Some(path)) = (csv.as_mut(), opts.curve_csv.as_ref()) {
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    let report = match last_eval {
        Some(r) => r,
        None => evaluate(a, &store, &valid, filter)?,
    };
    let train_report = TrainReport {
        final_train_loss: *epoch_losses.last().expect("at least one epoch"),
        val_mrr: report.mrr,
        val_h1: report.hits(1),
        val_h10: report.hits(10),
        epochs_run: epoch_losses.len(),
        epoch_losses,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((store, train_report))
}

/// Scores of every entity as tail (`[.., 0]`) and head (`[.., 1]`) for each
/// triple; used by tests and diagnostics.
pub fn score_matrix(
    a: &StructureMatrix,
    store: &EmbeddingStore,
    triples: &[Triple],
) -> Result<(Array2<f64>, Array2<f64>)> {
    store.check_structure(a)?;
    let terms = a.terms();
    let width = store.chunk_width();
    let b = triples.len();
    let mut queries = Array2::<f64>::zeros((2 * b, store.dim()));
    for (i, tr) in triples.iter().enumerate() {
        store.check_ids(&[tr.h, tr.t], &[tr.r])?;
        let r = row(&store.relation, tr.r);
        apply_transpose_into(&terms, width, r, row(&store.entity, tr.h), row_mut(&mut queries, i));
        apply_into(&terms, width, r, row(&store.entity, tr.t), row_mut(&mut queries, b + i));
    }
    let scores = queries.dot(&store.entity.t());
    let (tails, heads) = scores.view().split_at(Axis(0), b);
    Ok((tails.to_owned(), heads.to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{build_filter_index, Vocab};
    use crate::scorer::{init_embeddings, score_triple};
    use crate::structure::builtin_structure;

    fn toy_store(n_e: usize, n_r: usize, triples: Vec<Triple>) -> TripleStore {
        TripleStore {
            entities: Vocab::from_names((0..n_e).map(|i| format!("e{i}"))).unwrap(),
            relations: Vocab::from_names((0..n_r).map(|i| format!("r{i}"))).unwrap(),
            train: triples,
            ..TripleStore::default()
        }
    }

    fn hp(d: usize, seed: u64) -> HyperParams {
        HyperParams {
            d,
            eta: 0.1,
            lambda: 0.0,
            batch_size: 16,
            epochs: 1,
            seed,
        }
    }

    #[test]
    fn uniform_scores_give_log_e() {
        let a = builtin_structure("complex").unwrap();
        let mut emb = init_embeddings(7, 1, 4, &hp(8, 0)).unwrap();
        emb.entity.fill(0.3);
        emb.relation.fill(0.0);
        let (loss, _) = batch_loss(&a, &emb, &[Triple::new(0, 0, 1)], 0.0).unwrap();
        assert!((loss - 2.0 * (7f64).ln()).abs() < 1e-12);
        let (l2, _) = batch_loss(&a, &emb, &[Triple::new(0, 0, 1); 2], 0.0).unwrap();
        assert!((l2 - 2.0 * loss).abs() < 1e-12);
        let (lr, _) = batch_loss(&a, &emb, &[Triple::new(0, 0, 1)], 0.5).unwrap();
        let reg = 0.5 * (2.0 * 8.0 * 0.09);
        assert!((lr - loss - reg).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let batch = [Triple::new(0, 0, 1), Triple::new(2, 1, 3), Triple::new(4, 0, 0)];
        for name in ["distmult", "complex", "simple", "analogy", "quate"] {
            let a = builtin_structure(name).unwrap();
            let mut emb = init_embeddings(5, 2, 4, &hp(8, 3)).unwrap();
            emb.entity.mapv_inplace(|v| v * 8.0);
            emb.relation.mapv_inplace(|v| v * 8.0);
            let (_, g) = batch_loss(&a, &emb, &batch, 0.01).unwrap();
            let step = 1e-6;
            for (which, (r, c)) in [(0, (0, 3)), (0, (4, 7)), (1, (1, 2)), (1, (0, 5)), (0, (3, 0))] {
                let mut plus = emb.clone();
                let mut minus = emb.clone();
                let (tp, tm, an) = if which == 0 {
                    (&mut plus.entity, &mut minus.entity, g.entity[[r, c]])
                } else {
                    (&mut plus.relation, &mut minus.relation, g.relation[[r, c]])
                };
                tp[[r, c]] += step;
                tm[[r, c]] -= step;
                let lp = batch_loss(&a, &plus, &batch, 0.01).unwrap().0;
                let lm = batch_loss(&a, &minus, &batch, 0.01).unwrap().0;
                let num = (lp - lm) / (2.0 * step);
                assert!((num - an).abs() <= 1e-5 * an.abs().max(num.abs()).max(1e-3), "{name}: {an} vs {num}");
            }
        }
    }

    #[test]
    fn adagrad_closed_form() {
        let mut emb = init_embeddings(2, 1, 1, &hp(2, 0)).unwrap();
        let before = emb.clone();
        let mut acc = init_accumulators(&emb);
        let mut g = Gradients::zeros_like(&emb);
        adagrad_step(&mut emb, &mut acc, &g, 0.1).unwrap();
        assert_eq!(emb, before);
        g.entity[[0, 0]] = 1.0;
        adagrad_step(&mut emb, &mut acc, &g, 0.1).unwrap();
        let d1 = emb.entity[[0, 0]] - before.entity[[0, 0]];
        assert!((d1 + 0.1 / (1.0 + ADAGRAD_EPS)).abs() < 1e-15);
        let mid = emb.entity[[0, 0]];
        adagrad_step(&mut emb, &mut acc, &g, 0.1).unwrap();
        assert!((emb.entity[[0, 0]] - mid).abs() < d1.abs());
    }

    #[test]
    fn tie_counting_is_pessimistic() {
        let scores = [0.5; 5];
        assert_eq!(filtered_rank(&scores, 2, &[2]), 5);
        assert_eq!(raw_rank(&scores, 2), 5);
        assert_eq!(filtered_rank(&scores, 2, &[0, 2]), 4);
        let scores = [0.1, 0.9, 0.3];
        assert_eq!(filtered_rank(&scores, 1, &[1]), 1);
    }

    #[test]
    fn evaluate_matches_brute_force() {
        let triples = vec![Triple::new(0, 0, 1), Triple::new(1, 0, 2), Triple::new(2, 1, 0)];
        let data = toy_store(6, 2, triples.clone());
        let filter = build_filter_index(&data);
        let a = builtin_structure("analogy").unwrap();
        let emb = init_embeddings(6, 2, 4, &hp(8, 9)).unwrap();
        let report = evaluate(&a, &emb, &triples, &filter).unwrap();
        let known: std::collections::HashSet<_> = triples.iter().copied().collect();
        for (i, tr) in triples.iter().enumerate() {
            let s = |h, t| score_triple(&a, &emb, h, tr.r, t).unwrap();
            let st = s(tr.h, tr.t);
            let tail = 1 + (0..6)
                .filter(|&e| s(tr.h, e) >= st && !known.contains(&Triple::new(tr.h, tr.r, e)))
                .count();
            let head = 1 + (0..6)
                .filter(|&e| s(e, tr.t) >= st && !known.contains(&Triple::new(e, tr.r, tr.t)))
                .count();
            assert_eq!(report.tail_ranks[i], tail);
            assert_eq!(report.head_ranks[i], head);
        }
        assert!(report.hits(1) <= report.hits(3) && report.hits(3) <= report.hits(10));
    }

    fn symmetric_toy() -> TripleStore {
        let mut triples = Vec::new();
        for i in 0..30 {
            let (h, t) = (i % 20, (i * 7 + 3) % 20);
            if h != t && !triples.contains(&Triple::new(h, 0, t)) {
                triples.push(Triple::new(h, 0, t));
                triples.push(Triple::new(t, 0, h));
            }
        }
        toy_store(20, 1, triples)
    }

    #[test]
    fn training_memorizes_toy_kg() {
        let data = symmetric_toy();
        let filter = build_filter_index(&data);
        let a = builtin_structure("complex").unwrap();
        let params = HyperParams {
            d: 16,
            eta: 0.1,
            lambda: 0.0,
            batch_size: 32,
            epochs: 200,
            seed: 4,
        };
        let init = init_embeddings(20, 1, 4, &params).unwrap();
        let (emb, report) =
            train_structure(&a, init.clone(), &data, &filter, &params, &TrainOptions::default()).unwrap();
        assert!(report.final_train_loss < 2.0 * (20f64).ln());
        let train_eval = evaluate(&a, &emb, &data.train, &filter).unwrap();
        assert!(train_eval.mrr > 0.9, "{}", train_eval.mrr);
        let (_, again) =
            train_structure(&a, init, &data, &filter, &params, &TrainOptions::default()).unwrap();
        assert_eq!(report.epoch_losses, again.epoch_losses);
        assert_eq!(report.val_mrr, again.val_mrr);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let data = symmetric_toy();
        let filter = build_filter_index(&data);
        let a = builtin_structure("distmult").unwrap();
        let params = HyperParams {
            d: 8,
            epochs: 2,
            ..HyperParams::default()
        };
        let mut init = init_embeddings(20, 1, 4, &params).unwrap();
        init.entity[[0, 0]] = f64::NAN;
        let err = train_structure(&a, init, &data, &filter, &params, &TrainOptions::default())
            .unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert!(err.to_string().contains("epoch 0"));
    }
}
