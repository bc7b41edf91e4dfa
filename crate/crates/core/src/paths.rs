//! Multi-hop path queries: sampling, answer sets, training and ranking.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use ndarray::{Array1, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{Split, Triple, TripleStore};
use crate::scorer::{apply_into, apply_transpose_into, relation_grad_into, row, EmbeddingStore, HyperParams};
use crate::structure::{StructureMatrix, Term};
use crate::train::{adagrad_step, filtered_rank, init_accumulators, EvalReport, Gradients};

/// `(e0, r1 .. rL, eL)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PathQuery {
    pub e0: usize,
    pub relations: Vec<usize>,
    pub el: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathQuerySet {
    pub split: Split,
    pub queries: Vec<PathQuery>,
}

impl PathQuerySet {
    /// Length-1 queries `(h, [r], t)` from a split.
    pub fn from_triples(store: &TripleStore, split: Split) -> Self {
        PathQuerySet {
            split,
            queries: store
                .split(split)
                .iter()
                .map(|t| PathQuery { e0: t.h, relations: vec![t.r], el: t.t })
                .collect(),
        }
    }

    pub fn validate(&self, n_entities: usize, n_relations: usize) -> Result<()> {
        for q in &self.queries {
            if q.relations.is_empty() {
                return Err(Error::invalid("path query without relations"));
            }
            if q.e0 >= n_entities || q.el >= n_entities || q.relations.iter().any(|&r| r >= n_relations) {
                return Err(Error::invalid(format!("path query {q:?} references an unknown id")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn adjacency<'a>(triples: impl Iterator<Item = &'a Triple>, n: usize) -> Vec<Vec<(usize, usize)>> {
    let mut out = vec![Vec::new(); n];
    for t in triples {
        out[t.h].push((t.r, t.t));
    }
    for v in &mut out {
        v.sort_unstable();
        v.dedup();
    }
    out
}

/// Samples up to `n` distinct queries from random walks of length `len` over
/// the training triples; `split` only labels the resulting set.
pub fn generate_path_queries(
    store: &TripleStore,
    len: usize,
    n: usize,
    split: Split,
    seed: u64,
) -> Result<PathQuerySet> {
    if !(2..=3).contains(&len) {
        return Err(Error::invalid(format!("path length must be 2 or 3, got {len}")));
    }
    if store.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let adj = adjacency(store.train.iter(), store.n_entities());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut queries = Vec::new();
    let max_attempts = 100 * n.max(1);
    for _ in 0..max_attempts {
        if queries.len() == n {
            break;
        }
        let first = store.train.choose(&mut rng).expect("nonempty");
        let mut relations = vec![first.r];
        let mut at = first.t;
        while relations.len() < len {
            let Some(&(r, t)) = adj[at].choose(&mut rng) else {
                break;
            };
            relations.push(r);
            at = t;
        }
        if relations.len() < len {
            continue;
        }
        let q = PathQuery { e0: first.h, relations, el: at };
        if seen.insert(q.clone()) {
            queries.push(q);
        }
    }
    if queries.is_empty() {
        return Err(Error::invalid(format!(
            "no length-{len} path found after {max_attempts} attempts"
        )));
    }
    Ok(PathQuerySet { split, queries })
}

/// Every entity reachable from `e0` along `relations` in the union of splits.
#[derive(Clone, Debug)]
pub struct PathAnswerIndex {
    adj: Vec<Vec<(usize, usize)>>,
    cache: HashMap<(usize, Vec<usize>), Vec<usize>>,
}

impl PathAnswerIndex {
    pub fn new(store: &TripleStore) -> Self {
        PathAnswerIndex {
            adj: adjacency(store.all_triples(), store.n_entities()),
            cache: HashMap::new(),
        }
    }

    pub fn answers(&mut self, e0: usize, relations: &[usize]) -> &[usize] {
        let key = (e0, relations.to_vec());
        let adj = &self.adj;
        self.cache.entry(key).or_insert_with(|| {
            let mut frontier = BTreeSet::from([e0]);
            for &r in relations {
                frontier = frontier
                    .iter()
                    .flat_map(|&e| adj[e].iter().filter(move |(rel, _)| *rel == r).map(|&(_, t)| t))
                    .collect();
            }
            frontier.into_iter().collect()
        })
    }
}

fn entity_scores(store: &EmbeddingStore, v: &[f64]) -> Array1<f64> {
    store.entity.dot(&ArrayView1::from(v))
}

/// Forward states `u_0 = e0`, `u_l = G(r_l)^T u_{l-1}`.
fn forward_states(terms: &[Term], store: &EmbeddingStore, q: &PathQuery) -> Vec<Vec<f64>> {
    let width = store.chunk_width();
    let mut states = vec![row(&store.entity, q.e0).to_vec()];
    for &r in &q.relations {
        let mut next = vec![0.0; store.dim()];
        apply_transpose_into(terms, width, row(&store.relation, r), states.last().expect("nonempty"), &mut next);
        states.push(next);
    }
    states
}

/// Multi-class log-loss over terminal entities (all of them, or the answer
/// plus `negatives` uniformly sampled entities) and the squared-l2 term.
pub fn path_batch_loss(
    a: &StructureMatrix,
    store: &EmbeddingStore,
    queries: &[PathQuery],
    lambda: f64,
    negatives: Option<(usize, &mut ChaCha8Rng)>,
) -> Result<(f64, Gradients)> {
    store.check_structure(a)?;
    for q in queries {
        if q.relations.is_empty() {
            return Err(Error::invalid("path query without relations"));
        }
        store.check_ids(&[q.e0, q.el], &q.relations)?;
    }
    let mut grads = Gradients::zeros_like(store);
    let loss = path_loss_into(&a.terms(), store, queries, lambda, negatives, &mut grads);
    Ok((loss, grads))
}

fn path_loss_into(
    terms: &[Term],
    store: &EmbeddingStore,
    queries: &[PathQuery],
    lambda: f64,
    mut negatives: Option<(usize, &mut ChaCha8Rng)>,
    grads: &mut Gradients,
) -> f64 {
    let width = store.chunk_width();
    let d = store.dim();
    let n = store.n_entities();
    let mut loss = 0.0;
    for q in queries {
        let states = forward_states(terms, store, q);
        let last = states.last().expect("nonempty");
        let candidates: Vec<usize> = match negatives.as_mut() {
            None => (0..n).collect(),
            Some((m, rng)) => std::iter::once(q.el).chain((0..*m).map(|_| rng.gen_range(0..n))).collect(),
        };
        let target = if negatives.is_none() { q.el } else { 0 };
        let mut logits: Vec<f64> = if negatives.is_none() {
            entity_scores(store, last).to_vec()
        } else {
            candidates.iter().map(|&e| crate::scorer::dot(row(&store.entity, e), last)).collect()
        };
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let true_logit = logits[target];
        let sum: f64 = logits.iter_mut().map(|v| {
            *v = (*v - max).exp();
            *v
        }).sum();
        loss += sum.ln() + max - true_logit;
        logits.iter_mut().for_each(|v| *v /= sum);
        logits[target] -= 1.0;

        let mut g = vec![0.0; d];
        for (&e, &p) in candidates.iter().zip(&logits) {
            let er = row(&store.entity, e);
            for x in 0..d {
                g[x] += p * er[x];
            }
            let ge = grads.entity.row_mut(e).into_slice().expect("standard layout");
            for x in 0..d {
                ge[x] += p * last[x];
            }
        }
        for (l, &r) in q.relations.iter().enumerate().rev() {
            let rv = row(&store.relation, r);
            let gr = grads.relation.row_mut(r).into_slice().expect("standard layout");
            relation_grad_into(terms, width, &states[l], &g, gr);
            let mut prev = vec![0.0; d];
            apply_into(terms, width, rv, &g, &mut prev);
            g = prev;
        }
        let ge = grads.entity.row_mut(q.e0).into_slice().expect("standard layout");
        for x in 0..d {
            ge[x] += g[x];
        }
        if lambda != 0.0 {
            let mut reg = |table: &ndarray::Array2<f64>, gtable: &mut ndarray::Array2<f64>, id: usize| {
                let v = row(table, id);
                let gv = gtable.row_mut(id).into_slice().expect("standard layout");
                for x in 0..d {
                    loss += lambda * v[x] * v[x];
                    gv[x] += 2.0 * lambda * v[x];
                }
            };
            reg(&store.entity, &mut grads.entity, q.e0);
            for &r in &q.relations {
                reg(&store.relation, &mut grads.relation, r);
            }
            reg(&store.entity, &mut grads.entity, q.el);
        }
    }
    loss
}

/// Trains on path queries with AdaGrad; returns per-epoch mean losses.
pub fn train_paths(
    a: &StructureMatrix,
    init: EmbeddingStore,
    queries: &PathQuerySet,
    hp: &HyperParams,
    negatives: Option<usize>,
) -> Result<(EmbeddingStore, Vec<f64>)> {
    hp.validate(a.k())?;
    init.check_structure(a)?;
    if queries.queries.is_empty() {
        return Err(Error::invalid("no path queries to train on"));
    }
    queries.validate(init.n_entities(), init.n_relations())?;
    let terms = a.terms();
    let mut store = init;
    let mut acc = init_accumulators(&store);
    let mut grads = Gradients::zeros_like(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(4);
    let mut neg_rng = ChaCha8Rng::seed_from_u64(hp.seed);
    neg_rng.set_stream(5);
    let mut order = queries.queries.clone();
    let mut losses = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, batch) in order.chunks(hp.batch_size).enumerate() {
            grads.entity.fill(0.0);
            grads.relation.fill(0.0);
            let neg = negatives.map(|m| (m, &mut neg_rng));
            let loss = path_loss_into(&terms, &store, batch, hp.lambda, neg, &mut grads);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite path loss for structure {a:?} at epoch {epoch}, batch {bi}"
                )));
            }
            total += loss;
            adagrad_step(&mut store, &mut acc, &grads, hp.eta)?;
        }
        losses.push(total / order.len() as f64);
    }
    Ok((store, losses))
}

/// Filtered rank of each query's terminal entity among all entities; other
/// reachable answers of the same prefix are excluded.
pub fn evaluate_paths(
    a: &StructureMatrix,
    store: &EmbeddingStore,
    queries: &PathQuerySet,
    answers: &mut PathAnswerIndex,
) -> Result<EvalReport> {
    store.check_structure(a)?;
    queries.validate(store.n_entities(), store.n_relations())?;
    let terms = a.terms();
    let ranks = queries
        .queries
        .iter()
        .map(|q| {
            let states = forward_states(&terms, store, q);
            let scores = entity_scores(store, states.last().expect("nonempty"));
            let known = answers.answers(q.e0, &q.relations);
            filtered_rank(scores.as_slice().expect("contiguous"), q.el, known)
        })
        .collect();
    Ok(EvalReport::from_ranks(Vec::new(), ranks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{build_filter_index, Vocab};
    use crate::scorer::{init_embeddings, score_path};
    use crate::structure::builtin_structure;
    use crate::train::evaluate;

    fn chain() -> TripleStore {
        TripleStore {
            entities: Vocab::from_names(["a", "b", "c"].map(String::from)).unwrap(),
            relations: Vocab::from_names(["r".to_string()]).unwrap(),
            train: vec![Triple::new(0, 0, 1), Triple::new(1, 0, 2)],
            ..TripleStore::default()
        }
    }

    fn hp(d: usize) -> HyperParams {
        HyperParams { d, eta: 0.1, lambda: 0.0, batch_size: 8, epochs: 1, seed: 5 }
    }

    #[test]
    fn chain_yields_two_hop_query() {
        let set = generate_path_queries(&chain(), 2, 5, Split::Train, 1).unwrap();
        assert_eq!(set.queries, vec![PathQuery { e0: 0, relations: vec![0, 0], el: 2 }]);
        assert!(generate_path_queries(&chain(), 3, 5, Split::Train, 1).is_err());
        assert!(generate_path_queries(&chain(), 1, 5, Split::Train, 1).is_err());
    }

    #[test]
    fn length_one_matches_tail_ranks() {
        let store = crate::kg::generate_synthetic_kg(&crate::kg::SyntheticSpec::mixed_200(), 2).unwrap();
        let filter = build_filter_index(&store);
        let a = builtin_structure("simple").unwrap();
        let emb = init_embeddings(store.n_entities(), store.n_relations(), 4, &hp(8)).unwrap();
        let set = PathQuerySet::from_triples(&store, Split::Test);
        let mut answers = PathAnswerIndex::new(&store);
        let paths = evaluate_paths(&a, &emb, &set, &mut answers).unwrap();
        let direct = evaluate(&a, &emb, &store.test, &filter).unwrap();
        assert_eq!(paths.tail_ranks, direct.tail_ranks);
    }

    #[test]
    fn path_gradients_match_finite_differences() {
        let a = builtin_structure("quate").unwrap();
        let mut emb = init_embeddings(5, 2, 4, &hp(8)).unwrap();
        emb.entity.mapv_inplace(|v| v * 6.0);
        emb.relation.mapv_inplace(|v| v * 6.0);
        let qs = vec![
            PathQuery { e0: 0, relations: vec![0, 1], el: 3 },
            PathQuery { e0: 2, relations: vec![1, 1, 0], el: 4 },
        ];
        let (_, g) = path_batch_loss(&a, &emb, &qs, 0.01, None).unwrap();
        for (is_rel, r, c) in [(false, 0, 1), (false, 3, 6), (true, 0, 2), (true, 1, 7), (false, 2, 0)] {
            let bump = |delta: f64| {
                let mut e = emb.clone();
                if is_rel {
                    e.relation[[r, c]] += delta;
                } else {
                    e.entity[[r, c]] += delta;
                }
                path_batch_loss(&a, &e, &qs, 0.01, None).unwrap().0
            };
            let num = (bump(1e-6) - bump(-1e-6)) / 2e-6;
            let an = if is_rel { g.relation[[r, c]] } else { g.entity[[r, c]] };
            assert!((num - an).abs() <= 1e-5 * an.abs().max(num.abs()).max(1e-3), "{an} vs {num}");
        }
    }

    #[test]
    fn training_fits_paths() {
        let store = crate::kg::generate_synthetic_kg(&crate::kg::SyntheticSpec::mixed_200(), 3).unwrap();
        let set = generate_path_queries(&store, 2, 300, Split::Train, 4).unwrap();
        let a = builtin_structure("complex").unwrap();
        let params = HyperParams { d: 16, eta: 0.1, lambda: 0.0, batch_size: 64, epochs: 30, seed: 1 };
        let init = init_embeddings(store.n_entities(), store.n_relations(), 4, &params).unwrap();
        let (emb, losses) = train_paths(&a, init, &set, &params, None).unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
        let q = &set.queries[0];
        let s = score_path(&a, &emb, q.e0, &q.relations, q.el).unwrap();
        assert!(s.is_finite());
        let (_, neg_losses) = train_paths(&a, emb, &set, &params, Some(8)).unwrap();
        assert!(neg_losses.iter().all(|l| l.is_finite()));
    }
}
