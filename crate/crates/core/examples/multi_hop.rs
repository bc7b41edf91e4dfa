//! Samples two-hop queries, trains on them and ranks their answers.
//!
//! `cargo run --release --example multi_hop`

use blm_search::kg::{generate_synthetic_kg, Split, SyntheticSpec};
use blm_search::paths::{evaluate_paths, generate_path_queries, train_paths, PathAnswerIndex};
use blm_search::scorer::{init_embeddings, score_path, HyperParams};
use blm_search::structure::builtin_structure;

fn main() -> blm_search::Result<()> {
    let data = generate_synthetic_kg(&SyntheticSpec::mixed_200(), 0)?;
    let train = generate_path_queries(&data, 2, 2000, Split::Train, 0)?;
    let test = generate_path_queries(&data, 2, 200, Split::Test, 1)?;
    let a = builtin_structure("complex")?;
    let hp = HyperParams { d: 32, eta: 0.1, lambda: 1e-4, batch_size: 256, epochs: 30, seed: 0 };
    let init = init_embeddings(data.n_entities(), data.n_relations(), a.k(), &hp)?;
    let (store, losses) = train_paths(&a, init, &train, &hp, None)?;
    println!("loss {:.3} -> {:.3}", losses[0], losses[losses.len() - 1]);
    let q = &test.queries[0];
    println!(
        "query {} {:?} -> {}: score {:.3}",
        q.e0,
        q.relations,
        q.el,
        score_path(&a, &store, q.e0, &q.relations, q.el)?
    );
    let report = evaluate_paths(&a, &store, &test, &mut PathAnswerIndex::new(&data))?;
    println!("two-hop test MRR {:.3}, H@3 {:.3}", report.mrr, report.hits(3));
    Ok(())
}
