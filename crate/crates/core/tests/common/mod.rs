//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use codonflow::genetic_code::{Base, Codon, MrnaSequence, Protein};
use codonflow::objectives::{Objectives, WeightVector};

fn pairs(a: Base, b: Base) -> bool {
    let s = [a, b].map(|x| match x {
        Base::A => 'A',
        Base::U => 'U',
        Base::G => 'G',
        Base::C => 'C',
    });
    matches!(
        s,
        ['A', 'U'] | ['U', 'A'] | ['G', 'C'] | ['C', 'G'] | ['G', 'U'] | ['U', 'G']
    )
}

/// Every nested pair set on `bases[i..=j]`, listed explicitly.
fn all_structures(bases: &[Base], i: usize, j: usize, min_loop: usize) -> Vec<Vec<(usize, usize)>> {
    if i > j || j >= bases.len() {
        return vec![Vec::new()];
    }
    // i left unpaired
    let mut out = all_structures(bases, i + 1, j, min_loop);
    for k in (i + min_loop + 1)..=j {
        if !pairs(bases[i], bases[k]) {
            continue;
        }
        let inner = if k > i + 1 {
            all_structures(bases, i + 1, k - 1, min_loop)
        } else {
            vec![Vec::new()]
        };
        let outer = all_structures(bases, k + 1, j, min_loop);
        for a in &inner {
            for b in &outer {
                let mut s = vec![(i, k)];
                s.extend_from_slice(a);
                s.extend_from_slice(b);
                out.push(s);
            }
        }
    }
    out
}

/// Largest pair count over an exhaustive listing of nested structures.
pub fn brute_force_max_pairs(bases: &[Base], min_loop: usize) -> u32 {
    if bases.is_empty() {
        return 0;
    }
    all_structures(bases, 0, bases.len() - 1, min_loop)
        .iter()
        .map(|s| s.len() as u32)
        .max()
        .unwrap_or(0)
}

/// Designs of `p` built from the full codon table, without using any
/// synonymous-set lookup.
pub fn naive_designs(p: &Protein) -> Vec<MrnaSequence> {
    let per_position: Vec<Vec<Codon>> = p
        .residues()
        .iter()
        .map(|aa| Codon::all().filter(|c| c.amino_acid() == *aa).collect())
        .collect();
    let mut out: Vec<Vec<Codon>> = vec![Vec::new()];
    for choices in &per_position {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                choices.iter().map(move |c| {
                    let mut v = prefix.clone();
                    v.push(*c);
                    v
                })
            })
            .collect();
    }
    out.into_iter().map(MrnaSequence::new).collect()
}

/// `R(x) / sum R` over the naive enumeration.
pub fn exact_target(
    p: &Protein,
    objectives: &Objectives,
    w: &WeightVector,
) -> HashMap<MrnaSequence, f64> {
    let designs = naive_designs(p);
    let rewards: Vec<f64> = designs
        .iter()
        .map(|x| objectives.reward(x, w).unwrap())
        .collect();
    let z: f64 = rewards.iter().sum();
    designs
        .into_iter()
        .zip(rewards)
        .map(|(x, r)| (x, r / z))
        .collect()
}

/// Half the L1 distance between empirical frequencies and `target`.
pub fn total_variation(samples: &[MrnaSequence], target: &HashMap<MrnaSequence, f64>) -> f64 {
    let mut counts: HashMap<&MrnaSequence, f64> = HashMap::new();
    for x in samples {
        *counts.entry(x).or_default() += 1.0;
    }
    let n = samples.len() as f64;
    let mut keys: BTreeSet<&MrnaSequence> = target.keys().collect();
    keys.extend(counts.keys().copied());
    keys.iter()
        .map(|x| {
            (counts.get(x).copied().unwrap_or(0.0) / n - target.get(*x).copied().unwrap_or(0.0))
                .abs()
        })
        .sum::<f64>()
        / 2.0
}

/// Indices of points no other point dominates, by pairwise comparison.
pub fn brute_force_front(points: &[[f64; 3]]) -> BTreeSet<usize> {
    (0..points.len())
        .filter(|&i| {
            !(0..points.len()).any(|j| {
                let ge = (0..3).all(|d| points[j][d] >= points[i][d]);
                let gt = (0..3).any(|d| points[j][d] > points[i][d]);
                ge && gt
            })
        })
        .collect()
}
