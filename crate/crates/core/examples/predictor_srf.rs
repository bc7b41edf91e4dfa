//! Fits the SRF performance predictor on trained structures and ranks fresh candidates.
//!
//! `cargo run --release --example predictor_srf`

use blm_search::kg::{build_filter_index, generate_synthetic_kg, SyntheticSpec};
use blm_search::predictor::{predictor_fit, predictor_rank, SearchRecord};
use blm_search::scorer::{init_embeddings, HyperParams};
use blm_search::search::sample_uniform;
use blm_search::srf::srf_features;
use blm_search::structure::BuiltinModel;
use blm_search::train::{train_structure, TrainOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> blm_search::Result<()> {
    let data = generate_synthetic_kg(&SyntheticSpec::mixed_200(), 0)?;
    let filter = build_filter_index(&data);
    let hp = HyperParams { d: 16, eta: 0.1, lambda: 1e-3, batch_size: 256, epochs: 20, seed: 0 };
    let mut records = Vec::new();
    for model in BuiltinModel::ALL {
        let a = model.structure();
        let init = init_embeddings(data.n_entities(), data.n_relations(), a.k(), &hp)?;
        let (_, report) = train_structure(&a, init, &data, &filter, &hp, &TrainOptions::default())?;
        println!("{model:>9}: SRF {} val MRR {:.3}", srf_features(&a), report.val_mrr);
        records.push(SearchRecord {
            srf: srf_features(&a),
            structure: a,
            val_mrr: report.val_mrr,
            hyperparams: hp.clone(),
            round: 0,
            index: records.len(),
            wall_clock_seconds: report.wall_clock_seconds,
        });
    }
    let predictor = predictor_fit(&records, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let candidates: Vec<_> = (0..64).map(|_| sample_uniform(4, &mut rng)).filter(|a| !a.is_degenerate()).collect();
    println!("top candidates of {} non-degenerate samples:", candidates.len());
    for a in predictor_rank(&predictor, &candidates, 3)? {
        println!("predicted {:.3}\n{a}", predictor.predict(&srf_features(&a))?);
    }
    Ok(())
}
