//! Pareto front and sample-set metrics of uniformly drawn designs.

use codonflow::genetic_code::{MrnaSequence, Protein};
use codonflow::metrics::{pareto_front, MetricsReport, SampleSet};
use codonflow::objectives::{Objectives, WeightVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> codonflow::Result<()> {
    let p = Protein::parse("MSKGEELFTGVVPILVELDG")?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let designs: Vec<MrnaSequence> = (0..300)
        .map(|_| {
            let codons = p
                .residues()
                .iter()
                .map(|aa| {
                    let syn = aa.synonymous_codons();
                    syn[rng.random_range(0..syn.len())]
                })
                .collect();
            MrnaSequence::for_protein(&p, codons)
        })
        .collect::<Result<_, _>>()?;

    let set = SampleSet::score(
        p,
        designs,
        &Objectives::default(),
        WeightVector::uniform(),
        11,
    )?;
    let report = MetricsReport::compute(&set, 50)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("serializable")
    );

    let mut front = pareto_front(&set);
    front.sort_by(|a, b| b.reward.total_cmp(&a.reward));
    println!("front ({} designs):", front.len());
    for s in front.iter().take(8) {
        println!("  phi {:.3?}  R {:.4}", s.objectives.phi, s.reward);
    }
    Ok(())
}
