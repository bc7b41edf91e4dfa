//! Degeneracy, expressiveness witnesses, SRF and orbit data for the classical models.
//!
//! `cargo run --release --example analyze_structures`

use blm_search::experiment::cmd_analyze;
use blm_search::structure::{BuiltinModel, StructureMatrix};

fn main() -> blm_search::Result<()> {
    for model in BuiltinModel::ALL {
        println!("== {model}");
        println!("{}", cmd_analyze(&model.structure()));
    }
    let singular = StructureMatrix::from_rows(&[
        vec![1, 2, 0, 0],
        vec![2, 4, 0, 0],
        vec![0, 0, 3, 0],
        vec![0, 0, 0, 4],
    ])?;
    println!("== singular structure");
    println!("{}", cmd_analyze(&singular));
    Ok(())
}
