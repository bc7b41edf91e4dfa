#![allow(dead_code)]

use blm_search::kg::{Triple, TripleStore, Vocab};
use blm_search::scorer::EmbeddingStore;
use blm_search::structure::StructureMatrix;
use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_structure(k: usize, rng: &mut impl Rng) -> StructureMatrix {
    let k_i = k as i8;
    let entries = (0..k * k).map(|_| rng.gen_range(-k_i..=k_i)).collect();
    StructureMatrix::new(k, entries).unwrap()
}

pub fn random_nondegenerate(k: usize, rng: &mut impl Rng) -> StructureMatrix {
    loop {
        let a = random_structure(k, rng);
        if !a.is_degenerate() {
            return a;
        }
    }
}

pub fn random_permutation(k: usize, rng: &mut impl Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..k).collect();
    p.shuffle(rng);
    p
}

pub fn random_signs(k: usize, rng: &mut impl Rng) -> Vec<i8> {
    (0..k).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect()
}

pub fn random_store(n_entities: usize, n_relations: usize, k: usize, d: usize, rng: &mut impl Rng) -> EmbeddingStore {
    EmbeddingStore {
        k,
        seed: 0,
        entity: Array2::from_shape_fn((n_entities, d), |_| rng.gen_range(-1.0..1.0)),
        relation: Array2::from_shape_fn((n_relations, d), |_| rng.gen_range(-1.0..1.0)),
    }
}

/// Dense `d x d` relation matrix built entry by entry from the block definition.
pub fn dense_relation(a: &StructureMatrix, r: &[f64]) -> DMatrix<f64> {
    let k = a.k();
    let d = r.len();
    let w = d / k;
    let mut g = DMatrix::zeros(d, d);
    for i in 0..k {
        for j in 0..k {
            let v = a.get(i, j);
            if v == 0 {
                continue;
            }
            let m = v.unsigned_abs() as usize - 1;
            for x in 0..w {
                g[(i * w + x, j * w + x)] = v.signum() as f64 * r[m * w + x];
            }
        }
    }
    g
}

pub fn dense_score(a: &StructureMatrix, h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    let g = dense_relation(a, r);
    let hv = DMatrix::from_row_slice(1, h.len(), h);
    let tv = DMatrix::from_column_slice(t.len(), 1, t);
    (hv * g * tv)[(0, 0)]
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Store with `n` entities named `e{i}`, `m` relations named `r{i}` and the given splits.
pub fn store_from(n: usize, m: usize, train: Vec<Triple>, valid: Vec<Triple>, test: Vec<Triple>) -> TripleStore {
    TripleStore {
        entities: Vocab::from_names((0..n).map(|i| format!("e{i}"))).unwrap(),
        relations: Vocab::from_names((0..m).map(|i| format!("r{i}"))).unwrap(),
        train,
        valid,
        test,
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}
