//! Trains a tabular policy with trajectory balance and compares its samples
//! with the exact distribution from enumeration.

use codonflow::genetic_code::Protein;
use codonflow::objectives::WeightVector;
use codonflow::verify::proportional_sampling_check;

fn main() -> codonflow::Result<()> {
    let w = WeightVector::new([0.3, 0.3, 0.4])?;
    for seq in ["MFK", "CDEH", "LL"] {
        let p = Protein::parse(seq)?;
        let check = proportional_sampling_check(&p, w, 3000, 50_000, 1)?;
        println!(
            "{seq:>5}  |X|={:<3} steps={}  TV={:.4}",
            check.space_size, check.steps, check.tv
        );
    }
    Ok(())
}
