//! Exact enumeration of a small protein's design space.
//!
//! `cargo run --example design_space -- MFKW`

use codonflow::genetic_code::{design_space_log10, design_space_size, Protein};
use codonflow::objectives::{Objectives, WeightVector};
use codonflow::oracle::{DesignSpace, DEFAULT_CAP};

fn main() -> codonflow::Result<()> {
    let seq = std::env::args().nth(1).unwrap_or_else(|| "MFK".into());
    let p = Protein::parse(&seq)?;
    println!(
        "{p}: {} designs (log10 {:.2})",
        design_space_size(&p),
        design_space_log10(&p)
    );

    let w = WeightVector::new([0.3, 0.3, 0.4])?;
    let space = DesignSpace::enumerate(&p, &Objectives::default(), w, DEFAULT_CAP)?;
    println!("Z = {:.6}", space.z);

    let mut order: Vec<usize> = (0..space.len()).collect();
    order.sort_by(|&a, &b| space.rewards[b].total_cmp(&space.rewards[a]));
    for &i in order.iter().take(10) {
        println!(
            "{}  R={:.4}  p={:.4}",
            space.designs[i].spaced(),
            space.rewards[i],
            space.probabilities[i]
        );
    }
    Ok(())
}
