//! Hyper-parameter probe, structure search and fine-tuning at desk scale.
//!
//! `cargo run --release --example pipeline [out_dir]`

use std::path::PathBuf;

use blm_search::experiment::{run_pipeline, ExperimentConfig};
use blm_search::kg::{build_filter_index, generate_synthetic_kg, SyntheticSpec};
use blm_search::scorer::HyperParams;
use blm_search::search::{SearchAlgo, SearchConfig};

fn main() -> blm_search::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("blm_pipeline"), PathBuf::from);
    let data = generate_synthetic_kg(&SyntheticSpec::mixed_200(), 0)?;
    let filter = build_filter_index(&data);
    let search = SearchConfig {
        budget: 16,
        top_i: 4,
        top_p: 4,
        hp: HyperParams { d: 32, epochs: 20, ..HyperParams::default() },
        ..SearchConfig::new(SearchAlgo::Evolutionary, 4)
    };
    let mut cfg = ExperimentConfig::new("synthetic", &out, search);
    cfg.stage1.trials = 4;
    cfg.stage1.d = 32;
    cfg.stage3.trials = 4;
    cfg.stage3.d_choices = vec![32, 64];
    let report = run_pipeline(&cfg, &data, &filter)?;
    println!("winner (val MRR {:.3}):\n{}", report.val_mrr, report.structure);
    println!(
        "test MRR {:.3}, H@1 {:.3}, H@10 {:.3}; artifacts in {}",
        report.test.mrr,
        report.test.h1,
        report.test.h10,
        out.display()
    );
    Ok(())
}
