//! Scores one coding sequence on every objective.

use codonflow::genetic_code::{translate, MrnaSequence};
use codonflow::objectives::{dot_bracket, optimal_structure, Objectives, WeightVector};

fn main() -> codonflow::Result<()> {
    let text = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "AUGUUUAAAGGCGCCUUGUGA".into());
    // a trailing stop codon is not part of the design
    let text = text.strip_suffix("UGA").unwrap_or(&text);
    let x = MrnaSequence::parse(text)?;
    let objectives = Objectives::default();
    let o = objectives.evaluate(&x)?;

    println!("protein   {}", translate(&x)?);
    println!("gc        {:.3}", o.gc_raw);
    println!("mfe       {:?}", o.mfe_raw);
    println!("cai       {:.4}", o.cai_raw);
    println!("phi       {:.4?}", o.phi);
    let pairs = optimal_structure(&x.nucleotides(), 3);
    println!("structure {}", dot_bracket(x.len() * 3, &pairs));
    for w in [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.3, 0.3, 0.4],
    ] {
        let w = WeightVector::new(w)?;
        println!(
            "R at {:?} = {:.4}",
            w.as_array(),
            objectives.reward_of(&o, &w)
        );
    }
    Ok(())
}
