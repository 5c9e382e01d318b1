//! Exhaustive enumeration of small design spaces and exact target
//! distributions for checking samplers.

use std::collections::HashMap;
use std::io::Write;

use num_bigint::BigUint;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::genetic_code::{design_space_size, Codon, MrnaSequence, Protein};
use crate::objectives::{MfeRaw, ObjectiveVector, Objectives, WeightVector};

pub const DEFAULT_CAP: u64 = 1_000_000;

const CHUNK: usize = 4096;

/// All designs of a protein in lexicographic order (codon index ascending
/// at each position, last position fastest).
#[derive(Debug, Clone)]
pub struct Designs {
    choices: Vec<&'static [Codon]>,
    digits: Vec<usize>,
    done: bool,
}

impl Iterator for Designs {
    type Item = MrnaSequence;

    fn next(&mut self) -> Option<MrnaSequence> {
        if self.done {
            return None;
        }
        let x = MrnaSequence::new(
            self.digits
                .iter()
                .zip(&self.choices)
                .map(|(&d, c)| c[d])
                .collect(),
        );
        self.done = true;
        for i in (0..self.digits.len()).rev() {
            self.digits[i] += 1;
            if self.digits[i] < self.choices[i].len() {
                self.done = false;
                break;
            }
            self.digits[i] = 0;
        }
        Some(x)
    }
}

/// Refuses spaces above `cap`, reporting the exact size.
pub fn check_cap(p: &Protein, cap: u64) -> Result<u64> {
    let size = design_space_size(p);
    if size > BigUint::from(cap) {
        return Err(Error::CapExceeded {
            size: size.to_string(),
            cap,
        });
    }
    Ok(u64::try_from(&size).expect("size bounded by a u64 cap"))
}

/// Streams every design of `p` after checking the cap.
pub fn designs(p: &Protein, cap: u64) -> Result<Designs> {
    check_cap(p, cap)?;
    let choices: Vec<&'static [Codon]> = p
        .residues()
        .iter()
        .map(|aa| aa.synonymous_codons())
        .collect();
    let digits = vec![0; choices.len()];
    Ok(Designs {
        choices,
        digits,
        done: false,
    })
}

/// `Z(w) = sum_x R(x | w)`, scoring chunks concurrently without holding
/// the whole space in memory.
pub fn partition_function(
    p: &Protein,
    objectives: &Objectives,
    w: &WeightVector,
    cap: u64,
) -> Result<f64> {
    let mut it = designs(p, cap)?;
    let mut z = 0.0;
    loop {
        let chunk: Vec<MrnaSequence> = it.by_ref().take(CHUNK).collect();
        if chunk.is_empty() {
            return Ok(z);
        }
        let rewards = chunk
            .par_iter()
            .map(|x| objectives.reward(x, w))
            .collect::<Result<Vec<f64>>>()?;
        z += rewards.iter().sum::<f64>();
    }
}

/// A fully enumerated and scored design space.
#[derive(Debug, Clone)]
pub struct DesignSpace {
    pub protein: Protein,
    pub weights: WeightVector,
    pub designs: Vec<MrnaSequence>,
    pub objectives: Vec<ObjectiveVector>,
    pub rewards: Vec<f64>,
    pub z: f64,
    pub probabilities: Vec<f64>,
}

impl DesignSpace {
    pub fn enumerate(
        p: &Protein,
        objectives: &Objectives,
        w: WeightVector,
        cap: u64,
    ) -> Result<DesignSpace> {
        let designs: Vec<MrnaSequence> = designs(p, cap)?.collect();
        let scored = designs
            .par_iter()
            .map(|x| objectives.evaluate(x))
            .collect::<Result<Vec<_>>>()?;
        let rewards: Vec<f64> = scored.iter().map(|o| objectives.reward_of(o, &w)).collect();
        let (z, probabilities) = normalize(&rewards)?;
        Ok(DesignSpace {
            protein: p.clone(),
            weights: w,
            designs,
            objectives: scored,
            rewards,
            z,
            probabilities,
        })
    }

    pub fn len(&self) -> usize {
        self.designs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.designs.is_empty()
    }

    /// Target distribution `R(x | w) / Z(w)` for other weights.
    pub fn exact_distribution(
        &self,
        objectives: &Objectives,
        w: &WeightVector,
    ) -> Result<Vec<f64>> {
        let rewards: Vec<f64> = self
            .objectives
            .iter()
            .map(|o| objectives.reward_of(o, w))
            .collect();
        Ok(normalize(&rewards)?.1)
    }

    /// `(design, probability)` pairs.
    pub fn support(&self) -> Vec<(MrnaSequence, f64)> {
        self.designs
            .iter()
            .cloned()
            .zip(self.probabilities.iter().copied())
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            sequence: &'a str,
            gc_raw: f64,
            mfe_pairs: Option<u32>,
            cai: f64,
            phi_gc: f64,
            phi_mfe: f64,
            phi_cai: f64,
            reward: f64,
            exact_prob: f64,
        }
        let mut w = csv::Writer::from_writer(out);
        for i in 0..self.len() {
            let seq = self.designs[i].to_string();
            let o = &self.objectives[i];
            w.serialize(Row {
                sequence: &seq,
                gc_raw: o.gc_raw,
                mfe_pairs: match o.mfe_raw {
                    MfeRaw::Pairs(p) => Some(p),
                    MfeRaw::Energy(_) => None,
                },
                cai: o.cai_raw,
                phi_gc: o.phi[0],
                phi_mfe: o.phi[1],
                phi_cai: o.phi[2],
                reward: self.rewards[i],
                exact_prob: self.probabilities[i],
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Normalizes positive weights into probabilities, returning the total.
pub fn normalize(rewards: &[f64]) -> Result<(f64, Vec<f64>)> {
    if rewards.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
        return Err(Error::Invariant(
            "rewards must be finite and non-negative".into(),
        ));
    }
    let z: f64 = rewards.iter().sum();
    if !(z > 0.0) {
        return Err(Error::Invariant("total reward is zero".into()));
    }
    Ok((z, rewards.iter().map(|r| r / z).collect()))
}

/// Total variation between observed counts and an exact distribution over
/// `support`. Observations outside the support are an error.
pub fn tv_distance(
    counts: &HashMap<MrnaSequence, usize>,
    support: &[(MrnaSequence, f64)],
) -> Result<f64> {
    let exact: HashMap<&MrnaSequence, f64> = support.iter().map(|(x, p)| (x, *p)).collect();
    let extra: Vec<&MrnaSequence> = counts.keys().filter(|x| !exact.contains_key(x)).collect();
    if !extra.is_empty() {
        let missing = support
            .iter()
            .filter(|(x, _)| !counts.contains_key(x))
            .count();
        let mut shown: Vec<String> = extra.iter().take(5).map(|x| x.to_string()).collect();
        shown.sort();
        return Err(Error::SupportMismatch {
            extra: extra.len(),
            missing,
            detail: format!("unexpected designs include {}", shown.join(", ")),
        });
    }
    let n: usize = counts.values().sum();
    if n == 0 {
        return Err(Error::UndefinedMetric("no observations".into()));
    }
    let tv = support
        .iter()
        .map(|(x, p)| (counts.get(x).copied().unwrap_or(0) as f64 / n as f64 - p).abs())
        .sum::<f64>()
        / 2.0;
    Ok(tv)
}

/// Counts occurrences of each design.
pub fn count_designs<'a>(
    samples: impl IntoIterator<Item = &'a MrnaSequence>,
) -> HashMap<MrnaSequence, usize> {
    let mut counts = HashMap::new();
    for x in samples {
        *counts.entry(x.clone()).or_insert(0) += 1;
    }
    counts
}
