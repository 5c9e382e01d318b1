//! Sample-set metrics: uniqueness, top-K reward and diversity, Pareto front.
//!
//! Ties are broken by the design ordering of [`MrnaSequence`] (codon index
//! ascending per position), so every metric is independent of sample order.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genetic_code::{translate, MrnaSequence, Protein};
use crate::objectives::{ObjectiveVector, Objectives, WeightVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sequence: MrnaSequence,
    pub objectives: ObjectiveVector,
    pub reward: f64,
}

/// Scored designs for one protein.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub protein: Protein,
    pub weights: WeightVector,
    pub seed: u64,
    samples: Vec<Sample>,
}

impl SampleSet {
    pub fn new(
        protein: Protein,
        weights: WeightVector,
        seed: u64,
        samples: Vec<Sample>,
    ) -> Result<SampleSet> {
        for s in &samples {
            if translate(&s.sequence)? != protein {
                return Err(Error::InvalidDesign(format!(
                    "{} does not encode {protein}",
                    s.sequence
                )));
            }
        }
        Ok(SampleSet {
            protein,
            weights,
            seed,
            samples,
        })
    }

    /// Scores `designs` at weights `w`.
    pub fn score(
        protein: Protein,
        designs: Vec<MrnaSequence>,
        objectives: &Objectives,
        w: WeightVector,
        seed: u64,
    ) -> Result<SampleSet> {
        let samples = designs
            .into_par_iter()
            .map(|x| {
                let o = objectives.evaluate(&x)?;
                Ok(Sample {
                    reward: objectives.reward_of(&o, &w),
                    objectives: o,
                    sequence: x,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SampleSet::new(protein, w, seed, samples)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// One sample per distinct sequence, in design order.
    pub fn unique(&self) -> Vec<&Sample> {
        let mut map: BTreeMap<&MrnaSequence, &Sample> = BTreeMap::new();
        for s in &self.samples {
            map.entry(&s.sequence).or_insert(s);
        }
        map.into_values().collect()
    }
}

pub fn uniqueness(set: &SampleSet) -> usize {
    set.unique().len()
}

/// Unique samples sorted by reward descending, then design order.
fn ranked(set: &SampleSet) -> Vec<&Sample> {
    let mut u = set.unique();
    u.sort_by(|a, b| {
        b.reward
            .total_cmp(&a.reward)
            .then_with(|| a.sequence.cmp(&b.sequence))
    });
    u
}

fn top_k(set: &SampleSet, k: usize) -> Result<Vec<&Sample>> {
    let r = ranked(set);
    if k == 0 || k > r.len() {
        return Err(Error::NotEnoughSamples {
            requested: k,
            available: r.len(),
        });
    }
    Ok(r.into_iter().take(k).collect())
}

/// Mean reward of the `k` best distinct designs.
pub fn topk_reward(set: &SampleSet, k: usize) -> Result<f64> {
    Ok(top_k(set, k)?.iter().map(|s| s.reward).sum::<f64>() / k as f64)
}

/// Number of positions at which two equal-length designs use different codons.
pub fn codon_hamming(a: &MrnaSequence, b: &MrnaSequence) -> usize {
    debug_assert_eq!(a.len(), b.len());
    a.codons()
        .iter()
        .zip(b.codons())
        .filter(|(x, y)| x != y)
        .count()
}

/// Mean pairwise codon Hamming distance among the `k` best distinct designs.
pub fn topk_diversity(set: &SampleSet, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::UndefinedMetric(format!(
            "diversity needs at least two designs, got K = {k}"
        )));
    }
    let top = top_k(set, k)?;
    let total: usize = (0..k)
        .into_par_iter()
        .map(|i| {
            (i + 1..k)
                .map(|j| codon_hamming(&top[i].sequence, &top[j].sequence))
                .sum::<usize>()
        })
        .sum();
    Ok(total as f64 / (k * (k - 1) / 2) as f64)
}

/// `a` is at least as good as `b` everywhere and strictly better somewhere.
pub fn dominates(a: &[f64; 3], b: &[f64; 3]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
}

/// Non-dominated distinct designs under maximization of `phi`, in design order.
///
/// Candidates are visited in descending lexicographic order of `phi`; any
/// dominator of a point precedes it in that order, so it suffices to test
/// each point against the front built so far.
pub fn pareto_front(set: &SampleSet) -> Vec<&Sample> {
    let mut cands = set.unique();
    cands.sort_by(|a, b| {
        let (p, q) = (&a.objectives.phi, &b.objectives.phi);
        q.iter()
            .zip(p)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    let mut front: Vec<&Sample> = Vec::new();
    for c in cands {
        if !front
            .iter()
            .any(|f| dominates(&f.objectives.phi, &c.objectives.phi))
        {
            front.push(c);
        }
    }
    front.sort_by(|a, b| a.sequence.cmp(&b.sequence));
    front
}

/// Fraction of distinct designs on the Pareto front.
pub fn pareto_performance(set: &SampleSet) -> Result<f64> {
    let u = uniqueness(set);
    if u == 0 {
        return Err(Error::UndefinedMetric("empty sample set".into()));
    }
    Ok(pareto_front(set).len() as f64 / u as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub uniqueness: usize,
    pub topk_reward: f64,
    pub topk_diversity: f64,
    pub pareto_performance: f64,
    pub front_size: usize,
    #[serde(rename = "K")]
    pub k: usize,
}

impl MetricsReport {
    pub fn compute(set: &SampleSet, k: usize) -> Result<MetricsReport> {
        Ok(MetricsReport {
            uniqueness: uniqueness(set),
            topk_reward: topk_reward(set, k)?,
            topk_diversity: topk_diversity(set, k)?,
            pareto_performance: pareto_performance(set)?,
            front_size: pareto_front(set).len(),
            k,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::MfeRaw;

    fn sample(seq: &str, phi: [f64; 3], reward: f64) -> Sample {
        Sample {
            sequence: seq.parse().unwrap(),
            objectives: ObjectiveVector {
                gc_raw: 0.0,
                mfe_raw: MfeRaw::Pairs(0),
                cai_raw: 0.0,
                phi,
            },
            reward,
        }
    }

    fn set(protein: &str, samples: Vec<Sample>) -> SampleSet {
        SampleSet::new(
            Protein::parse(protein).unwrap(),
            WeightVector::uniform(),
            0,
            samples,
        )
        .unwrap()
    }

    #[test]
    fn uniqueness_examples() {
        let x = sample("AUGUUUAAA", [0.0; 3], 0.1);
        let y = sample("AUGUUCAAA", [0.0; 3], 0.2);
        assert_eq!(uniqueness(&set("MFK", vec![x.clone(), x.clone(), y])), 2);
        assert_eq!(uniqueness(&set("MFK", vec![x.clone(); 100])), 1);
    }

    #[test]
    fn rejects_foreign_designs() {
        let s = SampleSet::new(
            Protein::parse("MFK").unwrap(),
            WeightVector::uniform(),
            0,
            vec![sample("AUGUUU", [0.0; 3], 0.1)],
        );
        assert!(s.is_err());
    }

    #[test]
    fn topk_reward_examples() {
        let s = set(
            "MFK",
            vec![
                sample("AUGUUUAAA", [0.0; 3], 0.2),
                sample("AUGUUUAAG", [0.0; 3], 0.4),
                sample("AUGUUCAAA", [0.0; 3], 0.6),
            ],
        );
        assert!((topk_reward(&s, 2).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(topk_reward(&s, 1).unwrap(), 0.6);
        assert!(matches!(
            topk_reward(&s, 4),
            Err(Error::NotEnoughSamples {
                requested: 4,
                available: 3
            })
        ));
    }

    #[test]
    fn topk_ties_are_deterministic() {
        let a = sample("AUGUUUAAA", [0.0; 3], 0.5);
        let b = sample("AUGUUCAAG", [0.0; 3], 0.5);
        let c = sample("AUGUUCAAA", [0.0; 3], 0.9);
        let s1 = set("MFK", vec![a.clone(), b.clone(), c.clone()]);
        let s2 = set("MFK", vec![b, c, a]);
        // K = 2 keeps c and the smaller of the tied pair
        let d1 = topk_diversity(&s1, 2).unwrap();
        assert_eq!(d1, topk_diversity(&s2, 2).unwrap());
        assert_eq!(d1, 1.0);
    }

    #[test]
    fn diversity_examples() {
        let s = set(
            "MFK",
            vec![
                sample("AUGUUUAAA", [0.0; 3], 0.3),
                sample("AUGUUCAAA", [0.0; 3], 0.2),
                sample("AUGUUUAAG", [0.0; 3], 0.1),
            ],
        );
        assert!((topk_diversity(&s, 3).unwrap() - 4.0 / 3.0).abs() < 1e-12);
        assert!(matches!(
            topk_diversity(&s, 1),
            Err(Error::UndefinedMetric(_))
        ));
        let far = set(
            "FK",
            vec![
                sample("UUUAAA", [0.0; 3], 0.3),
                sample("UUCAAG", [0.0; 3], 0.2),
            ],
        );
        assert_eq!(topk_diversity(&far, 2).unwrap(), 2.0);
    }

    #[test]
    fn pareto_examples() {
        let s = set(
            "MFK",
            vec![
                sample("AUGUUUAAA", [1.0, 0.0, 0.0], 0.0),
                sample("AUGUUUAAG", [0.0, 1.0, 0.0], 0.0),
                sample("AUGUUCAAA", [0.0, 0.0, 1.0], 0.0),
            ],
        );
        assert_eq!(pareto_front(&s).len(), 3);
        assert_eq!(pareto_performance(&s).unwrap(), 1.0);
        let s = set(
            "MFK",
            vec![
                sample("AUGUUUAAA", [1.0; 3], 0.0),
                sample("AUGUUUAAG", [0.5; 3], 0.0),
            ],
        );
        let f = pareto_front(&s);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].sequence.to_string(), "AUGUUUAAA");
    }

    #[test]
    fn equal_objectives_keep_each_sequence() {
        let s = set(
            "MFK",
            vec![
                sample("AUGUUUAAA", [0.5; 3], 0.0),
                sample("AUGUUUAAG", [0.5; 3], 0.0),
            ],
        );
        assert_eq!(pareto_front(&s).len(), 2);
    }

    #[test]
    fn report_json_keys() {
        let s = set(
            "MFK",
            vec![
                sample("AUGUUUAAA", [1.0, 0.0, 0.0], 0.2),
                sample("AUGUUUAAG", [0.0, 1.0, 0.0], 0.4),
            ],
        );
        let json = serde_json::to_value(MetricsReport::compute(&s, 2).unwrap()).unwrap();
        for key in [
            "uniqueness",
            "topk_reward",
            "topk_diversity",
            "pareto_performance",
            "front_size",
            "K",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
