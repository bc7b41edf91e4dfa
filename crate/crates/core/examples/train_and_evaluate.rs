//! Trains DistMult and ComplEx on the synthetic graph and compares filtered test metrics.
//!
//! `cargo run --release --example train_and_evaluate`

use blm_search::kg::{build_filter_index, generate_synthetic_kg, SyntheticSpec};
use blm_search::scorer::{init_embeddings, HyperParams};
use blm_search::structure::builtin_structure;
use blm_search::train::{evaluate, train_structure, TrainOptions};

fn main() -> blm_search::Result<()> {
    let data = generate_synthetic_kg(&SyntheticSpec::mixed_200(), 0)?;
    let filter = build_filter_index(&data);
    let hp = HyperParams { d: 32, eta: 0.1, lambda: 1e-3, batch_size: 256, epochs: 50, seed: 0 };
    for name in ["distmult", "complex"] {
        let a = builtin_structure(name)?;
        let init = init_embeddings(data.n_entities(), data.n_relations(), a.k(), &hp)?;
        let (store, report) = train_structure(&a, init, &data, &filter, &hp, &TrainOptions::default())?;
        let test = evaluate(&a, &store, &data.test, &filter)?;
        println!(
            "{name:>9}: final loss {:.3}, val MRR {:.3}, test MRR {:.3}, H@1 {:.3}, H@10 {:.3} ({:.1}s)",
            report.final_train_loss,
            report.val_mrr,
            test.mrr,
            test.hits(1),
            test.hits(10),
            report.wall_clock_seconds
        );
    }
    Ok(())
}
