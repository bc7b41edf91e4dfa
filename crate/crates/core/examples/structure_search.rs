//! Runs progressive, evolutionary and random search with a small budget.
//!
//! `cargo run --release --example structure_search [budget]`

use blm_search::kg::{build_filter_index, generate_synthetic_kg, SyntheticSpec};
use blm_search::scorer::HyperParams;
use blm_search::search::{run_search, SearchAlgo, SearchConfig};

fn main() -> blm_search::Result<()> {
    let budget = std::env::args().nth(1).map_or(Ok(16), |s| s.parse()).expect("budget is an integer");
    let data = generate_synthetic_kg(&SyntheticSpec::mixed_200(), 0)?;
    let filter = build_filter_index(&data);
    let hp = HyperParams { d: 32, eta: 0.1, lambda: 1e-3, batch_size: 256, epochs: 20, seed: 0 };
    for algo in [SearchAlgo::Progressive, SearchAlgo::Evolutionary, SearchAlgo::Random] {
        let cfg = SearchConfig { budget, top_i: 4, top_p: 4, hp: hp.clone(), ..SearchConfig::new(algo, 4) };
        let out = run_search(&cfg, &data, &filter)?;
        let best = out.best().expect("budget is positive");
        println!("== {algo}: {} structures trained, best val MRR {:.3}", out.records.len(), best.val_mrr);
        println!("{}", best.structure);
    }
    Ok(())
}
