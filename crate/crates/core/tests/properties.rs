mod common;

use std::collections::BTreeSet;

use blm_search::kg::*;
use blm_search::scorer::*;
use blm_search::srf::srf_features;
use blm_search::structure::*;
use blm_search::train::*;
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn structure_strategy(k: usize) -> impl Strategy<Value = StructureMatrix> {
    let k_i = k as i8;
    prop::collection::vec(-k_i..=k_i, k * k).prop_map(move |e| StructureMatrix::new(k, e).unwrap())
}

fn perm_strategy(k: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..k).collect::<Vec<_>>()).prop_shuffle()
}

fn signs_strategy(k: usize) -> impl Strategy<Value = Vec<i8>> {
    prop::collection::vec(prop_oneof![Just(1i8), Just(-1i8)], k)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn orbit_transforms_preserve_scores(
        a in structure_strategy(4),
        perm in perm_strategy(4),
        sigma in perm_strategy(4),
        signs in signs_strategy(4),
        seed in any::<u64>(),
    ) {
        let store = random_store(4, 2, 4, 8, &mut rng(seed));
        let moved = [
            (a.permute_rows_cols(&perm).unwrap(), store.permute_entity_chunks(&perm).unwrap()),
            (a.permute_values(&sigma).unwrap(), store.remap_relation_chunks(&sigma).unwrap()),
            (a.flip_signs(&signs).unwrap(), store.flip_relation_chunks(&signs).unwrap()),
        ];
        for (b, s) in &moved {
            prop_assert_eq!(b.canonical_key(), a.canonical_key());
            for (h, r, t) in [(0, 0, 1), (2, 1, 3), (3, 1, 3)] {
                let x = score_triple(&a, &store, h, r, t).unwrap();
                let y = score_triple(b, s, h, r, t).unwrap();
                prop_assert!(rel_close(x, y, 1e-10), "{} vs {}", x, y);
            }
        }
    }

    #[test]
    fn score_is_bilinear_in_head_and_tail(a in structure_strategy(4), alpha in -3.0..3.0f64, seed in any::<u64>()) {
        let mut store = random_store(6, 1, 4, 8, &mut rng(seed));
        let mix: Vec<f64> = (0..8).map(|x| alpha * store.entity[(0, x)] + store.entity[(1, x)]).collect();
        for (x, v) in mix.iter().enumerate() {
            store.entity[(5, x)] = *v;
        }
        let f = |h: usize, t: usize| score_triple(&a, &store, h, 0, t).unwrap();
        prop_assert!(rel_close(f(5, 2), alpha * f(0, 2) + f(1, 2), 1e-10));
        prop_assert!(rel_close(f(2, 5), alpha * f(2, 0) + f(2, 1), 1e-10));
    }

    #[test]
    fn apply_relation_matches_dense_matrix(k in 2usize..=5, seed in any::<u64>()) {
        let mut g = rng(seed);
        let a = random_structure(k, &mut g);
        let d = 2 * k;
        let r: Vec<f64> = (0..d).map(|_| g.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..d).map(|_| g.gen_range(-1.0..1.0)).collect();
        let dense = dense_relation(&a, &r);
        let col = nalgebra::DVector::from_column_slice(&v);
        let want = &dense * &col;
        let want_t = dense.transpose() * &col;
        let got = apply_relation(&a, &r, &v).unwrap();
        let got_t = apply_relation_transpose(&a, &r, &v).unwrap();
        for i in 0..d {
            prop_assert!((got[i] - want[i]).abs() < 1e-12);
            prop_assert!((got_t[i] - want_t[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn srf_is_orbit_invariant(a in structure_strategy(3), perm in perm_strategy(3), sigma in perm_strategy(3), signs in signs_strategy(3)) {
        let b = a.permute_rows_cols(&perm).unwrap().permute_values(&sigma).unwrap().flip_signs(&signs).unwrap();
        prop_assert_eq!(srf_features(&a), srf_features(&b));
    }

    #[test]
    fn degeneracy_is_orbit_invariant(
        a in structure_strategy(4),
        perm in perm_strategy(4),
        sigma in perm_strategy(4),
        signs in signs_strategy(4),
    ) {
        let permuted = a.permute_rows_cols(&perm).unwrap();
        prop_assert_eq!(a.is_degenerate(), permuted.is_degenerate());
        let flipped = permuted.permute_values(&sigma).unwrap().flip_signs(&signs).unwrap();
        prop_assert_eq!(a.is_degenerate_exact(), flipped.is_degenerate_exact());
    }

    #[test]
    fn filtered_rank_never_exceeds_raw(scores in prop::collection::vec(-2i32..=2, 2..12), target_seed in any::<usize>(), known_mask in any::<u16>()) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let target = target_seed % scores.len();
        let known: Vec<usize> = (0..scores.len()).filter(|&e| e == target || known_mask >> e & 1 == 1).collect();
        let filtered = filtered_rank(&scores, target, &known);
        prop_assert!(filtered >= 1);
        prop_assert!(filtered <= raw_rank(&scores, target));
    }

    #[test]
    fn filter_index_counts_distinct_triples(triples in prop::collection::vec((0usize..5, 0usize..2, 0usize..5), 1..30)) {
        let triples: Vec<Triple> = triples.into_iter().map(|(h, r, t)| Triple::new(h, r, t)).collect();
        let n = triples.len();
        let data = store_from(5, 2, triples[..n / 2].to_vec(), triples[n / 2..].to_vec(), triples[..n / 3].to_vec());
        let distinct: BTreeSet<Triple> = data.all_triples().copied().collect();
        let index = build_filter_index(&data);
        prop_assert_eq!(index.tail_entries(), distinct.len());
        prop_assert_eq!(index.head_entries(), distinct.len());
        for t in &distinct {
            prop_assert!(index.tails_of(t.h, t.r).contains(&t.t));
            prop_assert!(index.heads_of(t.r, t.t).contains(&t.h));
        }
    }
}

#[test]
fn orbit_transforms_commute_with_training() {
    let data = generate_synthetic_kg(&SyntheticSpec::mixed_200(), 4).unwrap();
    let filter = build_filter_index(&data);
    let hp = HyperParams { d: 16, eta: 0.2, lambda: 1e-3, batch_size: 256, epochs: 3, seed: 9 };
    let a = builtin_structure("analogy").unwrap();
    let init = init_embeddings(data.n_entities(), data.n_relations(), 4, &hp).unwrap();
    let (_, base) = train_structure(&a, init.clone(), &data, &filter, &hp, &TrainOptions::default()).unwrap();
    let perm = [2, 0, 3, 1];
    let sigma = [1, 3, 0, 2];
    let signs = [1, -1, -1, 1];
    let cases = [
        (a.permute_rows_cols(&perm).unwrap(), init.permute_entity_chunks(&perm).unwrap()),
        (a.permute_values(&sigma).unwrap(), init.remap_relation_chunks(&sigma).unwrap()),
        (a.flip_signs(&signs).unwrap(), init.flip_relation_chunks(&signs).unwrap()),
    ];
    for (b, moved) in cases {
        let (_, rep) = train_structure(&b, moved, &data, &filter, &hp, &TrainOptions::default()).unwrap();
        for (x, y) in base.epoch_losses.iter().zip(&rep.epoch_losses) {
            assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0), "{b:?}: {x} vs {y}");
        }
        assert!((base.val_mrr - rep.val_mrr).abs() < 1e-8);
    }
}
