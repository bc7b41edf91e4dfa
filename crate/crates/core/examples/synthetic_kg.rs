//! Generates the synthetic graph, writes it to disk and profiles its relation types.
//!
//! `cargo run --release --example synthetic_kg [out_dir]`

use std::path::PathBuf;

use blm_search::kg::{generate_synthetic_kg, load_dataset, profile_relations, Split, SyntheticSpec};

fn main() -> blm_search::Result<()> {
    let dir = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("blm_synthetic"), PathBuf::from);
    let data = generate_synthetic_kg(&SyntheticSpec::mixed_200(), 0)?;
    data.save(&dir)?;
    let loaded = load_dataset(&dir)?;
    println!(
        "{}: {} entities, {} relations, {}/{}/{} triples",
        dir.display(),
        loaded.n_entities(),
        loaded.n_relations(),
        loaded.train.len(),
        loaded.valid.len(),
        loaded.test.len()
    );
    for r in profile_relations(&loaded, Split::Train).relations {
        let inverse = r.inverse_of.map_or("-".to_string(), |i| loaded.relations.name(i).unwrap_or("?").to_string());
        println!("{:>8}: {:>5} triples, {:>4} reversed, {}, inverse of {inverse}", r.name, r.n_triples, r.n_reversed, r.kind);
    }
    Ok(())
}
