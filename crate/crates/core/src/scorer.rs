//! Chunked embeddings and the blockwise bilinear scoring kernels.
//!
//! Embeddings of dimension `d` are split into `k` contiguous chunks of width
//! `d/k`. The relation matrix for a structure `A` and relation embedding `r`
//! has block `(i, j)` equal to `sign(A[i][j]) * diag(r_{|A[i][j]|})`; it is
//! only ever applied as an operator, never materialized.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::structure::{StructureMatrix, Term};

/// Training hyper-parameters for one structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Embedding dimension; must be divisible by `k`.
    pub d: usize,
    /// AdaGrad learning rate.
    pub eta: f64,
    /// Squared-l2 coefficient.
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            d: 64,
            eta: 0.5,
            lambda: 1e-3,
            batch_size: 256,
            epochs: 100,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.d == 0 || k == 0 || self.d % k != 0 {
            return Err(Error::invalid(format!(
                "dimension d={} is not divisible by k={k}",
                self.d
            )));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::invalid(format!("eta={} outside (0, 1]", self.eta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda={} must be >= 0", self.lambda)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size and epochs must be positive"));
        }
        Ok(())
    }
}

/// Entity and relation embedding tables.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    pub k: usize,
    pub seed: u64,
    pub entity: Array2<f64>,
    pub relation: Array2<f64>,
}

/// Uniform initialization in `[-0.5/sqrt(d), 0.5/sqrt(d)]`, deterministic in the seed.
pub fn init_embeddings(
    n_entities: usize,
    n_relations: usize,
    k: usize,
    hp: &HyperParams,
) -> Result<EmbeddingStore> {
    if n_entities == 0 || n_relations == 0 {
        return Err(Error::invalid("entity and relation counts must be positive"));
    }
    if k == 0 || hp.d % k != 0 {
        return Err(Error::invalid(format!(
            "dimension d={} is not divisible by k={k}",
            hp.d
        )));
    }
    let bound = 0.5 / (hp.d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(1);
    let mut draw = |n: usize| {
        Array2::from_shape_fn((n, hp.d), |_| rng.gen_range(-bound..=bound))
    };
    let entity = draw(n_entities);
    let relation = draw(n_relations);
    Ok(EmbeddingStore {
        k,
        seed: hp.seed,
        entity,
        relation,
    })
}

impl EmbeddingStore {
    pub fn dim(&self) -> usize {
        self.entity.ncols()
    }

    pub fn chunk_width(&self) -> usize {
        self.dim() / self.k
    }

    pub fn n_entities(&self) -> usize {
        self.entity.nrows()
    }

    pub fn n_relations(&self) -> usize {
        self.relation.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.entity.iter().chain(self.relation.iter()).all(|v| v.is_finite())
    }

    pub(crate) fn check_ids(&self, entities: &[usize], relations: &[usize]) -> Result<()> {
        if let Some(e) = entities.iter().find(|&&e| e >= self.n_entities()) {
            return Err(Error::invalid(format!(
                "entity id {e} out of range (|E| = {})",
                self.n_entities()
            )));
        }
        if let Some(r) = relations.iter().find(|&&r| r >= self.n_relations()) {
            return Err(Error::invalid(format!(
                "relation id {r} out of range (|R| = {})",
                self.n_relations()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_structure(&self, a: &StructureMatrix) -> Result<()> {
        if a.k() != self.k {
            return Err(Error::invalid(format!(
                "structure has k={} but embeddings use k={}",
                a.k(),
                self.k
            )));
        }
        Ok(())
    }

    /// New store whose entity chunk `i` is the old chunk `perm[i]`.
    pub fn permute_entity_chunks(&self, perm: &[usize]) -> Result<EmbeddingStore> {
        let mut out = self.clone();
        remap_chunks(&self.entity, &mut out.entity, self.k, |i| (perm[i], 1.0), perm)?;
        Ok(out)
    }

    /// New store whose relation chunk `sigma[m]` is the old chunk `m`.
    pub fn remap_relation_chunks(&self, sigma: &[usize]) -> Result<EmbeddingStore> {
        let mut inverse = vec![0; sigma.len()];
        for (m, &s) in sigma.iter().enumerate() {
            if s < inverse.len() {
                inverse[s] = m;
            }
        }
        let mut out = self.clone();
        remap_chunks(&self.relation, &mut out.relation, self.k, |i| (inverse[i], 1.0), sigma)?;
        Ok(out)
    }

    /// New store with relation chunk `m` multiplied by `signs[m]`.
    pub fn flip_relation_chunks(&self, signs: &[i8]) -> Result<EmbeddingStore> {
        if signs.len() != self.k {
            return Err(Error::invalid("sign vector must have k entries"));
        }
        let identity: Vec<usize> = (0..self.k).collect();
        let mut out = self.clone();
        remap_chunks(
            &self.relation,
            &mut out.relation,
            self.k,
            |i| (i, signs[i] as f64),
            &identity,
        )?;
        Ok(out)
    }

    /// Writes the binary checkpoint: five little-endian `u64` header fields
    /// (`|E|`, `|R|`, `d`, `k`, `seed`) followed by entity then relation rows
    /// as little-endian `f64`.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = [
            self.n_entities() as u64,
            self.n_relations() as u64,
            self.dim() as u64,
            self.k as u64,
            self.seed,
        ];
        let io = |e| Error::io(path, e);
        for h in header {
            w.write_all(&h.to_le_bytes()).map_err(io)?;
        }
        for v in self.entity.iter().chain(self.relation.iter()) {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load_checkpoint(path: &Path) -> Result<EmbeddingStore> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut buf = [0u8; 8];
        let mut next = |r: &mut BufReader<File>| -> Result<[u8; 8]> {
            r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
            Ok(buf)
        };
        let mut header = [0u64; 5];
        for h in header.iter_mut() {
            *h = u64::from_le_bytes(next(&mut r)?);
        }
        let [n_e, n_r, d, k, seed] = header.map(|v| v as usize);
        if k == 0 || d % k != 0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("inconsistent checkpoint header d={d} k={k}"),
            });
        }
        let mut table = |rows: usize| -> Result<Array2<f64>> {
            let mut data = Vec::with_capacity(rows * d);
            for _ in 0..rows * d {
                data.push(f64::from_le_bytes(next(&mut r)?));
            }
            Ok(Array2::from_shape_vec((rows, d), data).expect("shape matches length"))
        };
        let entity = table(n_e)?;
        let relation = table(n_r)?;
        Ok(EmbeddingStore {
            k,
            seed: seed as u64,
            entity,
            relation,
        })
    }
}

fn remap_chunks(
    src: &Array2<f64>,
    dst: &mut Array2<f64>,
    k: usize,
    source_of: impl Fn(usize) -> (usize, f64),
    perm: &[usize],
) -> Result<()> {
    let mut seen = vec![false; k];
    if perm.len() != k || perm.iter().any(|&p| p >= k || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::invalid(format!("{perm:?} is not a permutation of 0..{k}")));
    }
    let width = src.ncols() / k;
    for (src_row, mut dst_row) in src.rows().into_iter().zip(dst.rows_mut()) {
        for i in 0..k {
            let (from, scale) = source_of(i);
            for x in 0..width {
                dst_row[i * width + x] = scale * src_row[from * width + x];
            }
        }
    }
    Ok(())
}

/// `out += G(r) t`: chunk `i` gains `sign * r_m * t_j` for each term.
#[inline]
pub(crate) fn apply_into(terms: &[Term], width: usize, r: &[f64], t: &[f64], out: &mut [f64]) {
    for term in terms {
        let o = &mut out[term.row * width..(term.row + 1) * width];
        let rc = &r[term.chunk * width..(term.chunk + 1) * width];
        let tc = &t[term.col * width..(term.col + 1) * width];
        if term.negative {
            for x in 0..width {
                o[x] -= rc[x] * tc[x];
            }
        } else {
            for x in 0..width {
                o[x] += rc[x] * tc[x];
            }
        }
    }
}

/// `out += G(r)^T h`.
#[inline]
pub(crate) fn apply_transpose_into(
    terms: &[Term],
    width: usize,
    r: &[f64],
    h: &[f64],
    out: &mut [f64],
) {
    for term in terms {
        let o = &mut out[term.col * width..(term.col + 1) * width];
        let rc = &r[term.chunk * width..(term.chunk + 1) * width];
        let hc = &h[term.row * width..(term.row + 1) * width];
        if term.negative {
            for x in 0..width {
                o[x] -= rc[x] * hc[x];
            }
        } else {
            for x in 0..width {
                o[x] += rc[x] * hc[x];
            }
        }
    }
}

/// `out += d(h^T G(r) t)/dr`: chunk `m` gains `sign * h_i * t_j`.
#[inline]
pub(crate) fn relation_grad_into(
    terms: &[Term],
    width: usize,
    h: &[f64],
    t: &[f64],
    out: &mut [f64],
) {
    for term in terms {
        let o = &mut out[term.chunk * width..(term.chunk + 1) * width];
        let hc = &h[term.row * width..(term.row + 1) * width];
        let tc = &t[term.col * width..(term.col + 1) * width];
        if term.negative {
            for x in 0..width {
                o[x] -= hc[x] * tc[x];
            }
        } else {
            for x in 0..width {
                o[x] += hc[x] * tc[x];
            }
        }
    }
}

fn check_vectors(a: &StructureMatrix, lens: &[usize]) -> Result<usize> {
    let d = lens[0];
    if lens.iter().any(|&l| l != d) {
        return Err(Error::invalid(format!("vector lengths differ: {lens:?}")));
    }
    if d == 0 || d % a.k() != 0 {
        return Err(Error::invalid(format!(
            "vector length {d} not divisible by k={}",
            a.k()
        )));
    }
    Ok(d / a.k())
}

/// `G(r) t`, computed blockwise in `O(d * nnz(A) / k)`.
pub fn apply_relation(a: &StructureMatrix, r: &[f64], t: &[f64]) -> Result<Vec<f64>> {
    let width = check_vectors(a, &[r.len(), t.len()])?;
    let mut out = vec![0.0; t.len()];
    apply_into(&a.terms(), width, r, t, &mut out);
    Ok(out)
}

/// `G(r)^T h`.
pub fn apply_relation_transpose(a: &StructureMatrix, r: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    let width = check_vectors(a, &[r.len(), h.len()])?;
    let mut out = vec![0.0; h.len()];
    apply_transpose_into(&a.terms(), width, r, h, &mut out);
    Ok(out)
}

pub(crate) fn row<'a>(table: &'a Array2<f64>, i: usize) -> &'a [f64] {
    table
        .row(i)
        .to_slice()
        .expect("embedding tables are standard layout")
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `h^T G(r) t`.
pub fn score_triple(
    a: &StructureMatrix,
    store: &EmbeddingStore,
    h: usize,
    r: usize,
    t: usize,
) -> Result<f64> {
    store.check_structure(a)?;
    store.check_ids(&[h, t], &[r])?;
    let mut gt = vec![0.0; store.dim()];
    apply_into(
        &a.terms(),
        store.chunk_width(),
        row(&store.relation, r),
        row(&store.entity, t),
        &mut gt,
    );
    Ok(dot(row(&store.entity, h), &gt))
}

fn score_against_entities(store: &EmbeddingStore, v: &[f64]) -> Array1<f64> {
    store.entity.dot(&ArrayView1::from(v))
}

/// Scores of `(h, r, e)` for every entity `e`.
pub fn score_all_tails(
    a: &StructureMatrix,
    store: &EmbeddingStore,
    h: usize,
    r: usize,
) -> Result<Array1<f64>> {
    store.check_structure(a)?;
    store.check_ids(&[h], &[r])?;
    let mut q = vec![0.0; store.dim()];
    apply_transpose_into(
        &a.terms(),
        store.chunk_width(),
        row(&store.relation, r),
        row(&store.entity, h),
        &mut q,
    );
    Ok(score_against_entities(store, &q))
}

/// Scores of `(e, r, t)` for every entity `e`.
pub fn score_all_heads(
    a: &StructureMatrix,
    store: &EmbeddingStore,
    r: usize,
    t: usize,
) -> Result<Array1<f64>> {
    store.check_structure(a)?;
    store.check_ids(&[t], &[r])?;
    let mut w = vec![0.0; store.dim()];
    apply_into(
        &a.terms(),
        store.chunk_width(),
        row(&store.relation, r),
        row(&store.entity, t),
        &mut w,
    );
    Ok(score_against_entities(store, &w))
}

/// `e0^T G(r_1) ... G(r_L) eL`.
pub fn score_path(
    a: &StructureMatrix,
    store: &EmbeddingStore,
    e0: usize,
    relations: &[usize],
    el: usize,
) -> Result<f64> {
    if relations.is_empty() {
        return Err(Error::invalid("path must contain at least one relation"));
    }
    store.check_structure(a)?;
    store.check_ids(&[e0, el], relations)?;
    let terms = a.terms();
    let width = store.chunk_width();
    let mut v = row(&store.entity, el).to_vec();
    let mut next = vec![0.0; v.len()];
    for &r in relations.iter().rev() {
        next.fill(0.0);
        apply_into(&terms, width, row(&store.relation, r), &v, &mut next);
        std::mem::swap(&mut v, &mut next);
    }
    Ok(dot(row(&store.entity, e0), &v))
}

/// Path scores against every candidate terminal entity.
pub fn score_path_all_tails(
    a: &StructureMatrix,
    store: &EmbeddingStore,
    e0: usize,
    relations: &[usize],
) -> Result<Array1<f64>> {
    if relations.is_empty() {
        return Err(Error::invalid("path must contain at least one relation"));
    }
    store.check_structure(a)?;
    store.check_ids(&[e0], relations)?;
    let terms = a.terms();
    let width = store.chunk_width();
    let mut u = row(&store.entity, e0).to_vec();
    let mut next = vec![0.0; u.len()];
    for &r in relations {
        next.fill(0.0);
        apply_transpose_into(&terms, width, row(&store.relation, r), &u, &mut next);
        std::mem::swap(&mut u, &mut next);
    }
    Ok(score_against_entities(store, &u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::builtin_structure;

    fn hp(d: usize) -> HyperParams {
        HyperParams {
            d,
            ..HyperParams::default()
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_embeddings(10, 3, 4, &hp(64)).unwrap();
        let b = init_embeddings(10, 3, 4, &hp(64)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.chunk_width(), 16);
        let bound = 0.5 / 8.0;
        assert!(a.entity.iter().all(|v| v.abs() <= bound));
        assert!(init_embeddings(10, 3, 4, &hp(63)).is_err());
    }

    #[test]
    fn distmult_is_elementwise() {
        let a = builtin_structure("distmult").unwrap();
        let r: Vec<f64> = (0..8).map(|x| x as f64 + 1.0).collect();
        let t: Vec<f64> = (0..8).map(|x| 0.5 - x as f64).collect();
        let out = apply_relation(&a, &r, &t).unwrap();
        for x in 0..8 {
            assert_eq!(out[x], r[x] * t[x]);
        }
        let zero = StructureMatrix::zeros(4).unwrap();
        assert!(apply_relation(&zero, &r, &t).unwrap().iter().all(|&v| v == 0.0));
        assert!(apply_relation(&a, &r, &t[..4]).is_err());
    }

    #[test]
    fn unit_embeddings_score_four() {
        let a = builtin_structure("distmult").unwrap();
        let mut store = init_embeddings(2, 1, 4, &hp(4)).unwrap();
        store.entity.fill(1.0);
        store.relation.fill(1.0);
        assert_eq!(score_triple(&a, &store, 0, 0, 1).unwrap(), 4.0);
        assert!(score_triple(&a, &store, 2, 0, 1).is_err());
        assert!(score_path(&a, &store, 0, &[], 1).is_err());
    }

    #[test]
    fn zero_relation_scores_zero() {
        let a = builtin_structure("quate").unwrap();
        let mut store = init_embeddings(5, 2, 4, &hp(8)).unwrap();
        store.relation.row_mut(1).fill(0.0);
        assert!(score_all_tails(&a, &store, 0, 1).unwrap().iter().all(|&v| v == 0.0));
        assert!(score_all_heads(&a, &store, 1, 0).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let store = init_embeddings(7, 3, 4, &hp(8)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        store.save_checkpoint(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 5 * 8 + (7 + 3) * 8 * 8);
        assert_eq!(&bytes[..8], &7u64.to_le_bytes());
        assert_eq!(EmbeddingStore::load_checkpoint(&path).unwrap(), store);
    }
}
