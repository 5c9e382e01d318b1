//! Conditional forward policies, state flows and the learned log-partition.
//!
//! Every model maps a batch of states (plus preference weights) to an
//! `n x 66` output: 65 action logits followed by `log F(s)`. `log Z` is a
//! separate `1x1` parameter in the [`ParamGroup::LogZ`] group.

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamGroup, ParamStore, Tape, Var};
use crate::env::{Action, ActionMask, CodonDesignEnv, State, Transition, N_ACTIONS};
use crate::error::{Error, Result};
use crate::genetic_code::{Codon, MrnaSequence, Protein};
use crate::objectives::{Objectives, WeightVector};

/// One-hot over the 20 residues plus a "done" slot.
pub const NEXT_AA_SLOTS: usize = 21;
/// One-hot over 64 codons plus "none" at the source.
pub const PREV_CODON_SLOTS: usize = 65;
pub const FEATURE_WIDTH: usize = NEXT_AA_SLOTS + PREV_CODON_SLOTS + 2 + 3;
pub const OUTPUT_WIDTH: usize = N_ACTIONS + 1;
/// Column of the model output holding `log F(s)`.
pub const FLOW_COLUMN: usize = N_ACTIONS;
pub const DEFAULT_MAX_LEN: usize = 180;

const POSITION_COL: usize = NEXT_AA_SLOTS + PREV_CODON_SLOTS;
const LENGTH_COL: usize = POSITION_COL + 1;
const WEIGHT_COL: usize = LENGTH_COL + 1;

/// Feature vector of a state under preference weights `w`.
pub fn encode(
    s: &State,
    protein: &Protein,
    w: &WeightVector,
    max_len: usize,
) -> [f64; FEATURE_WIDTH] {
    let mut f = [0.0; FEATURE_WIDTH];
    encode_into(&mut f, s.filled(), s.last_codon(), protein, w, max_len);
    f
}

fn encode_into(
    f: &mut [f64],
    t: usize,
    prev: Option<Codon>,
    protein: &Protein,
    w: &WeightVector,
    max_len: usize,
) {
    let l = protein.len();
    let next = if t < l {
        protein.residue(t).index()
    } else {
        NEXT_AA_SLOTS - 1
    };
    f[next] = 1.0;
    let prev_slot = prev.map(|c| c.index()).unwrap_or(PREV_CODON_SLOTS - 1);
    f[NEXT_AA_SLOTS + prev_slot] = 1.0;
    f[POSITION_COL] = t as f64 / l as f64;
    f[LENGTH_COL] = (l as f64 / max_len.max(1) as f64).min(1.0);
    f[WEIGHT_COL..WEIGHT_COL + 3].copy_from_slice(&w.as_array());
}

/// Encodes a batch of states into an `n x FEATURE_WIDTH` matrix.
pub fn encode_batch(
    env: &CodonDesignEnv,
    states: &[&State],
    weights: &[WeightVector],
    max_len: usize,
) -> Array2<f64> {
    assert_eq!(states.len(), weights.len());
    let mut x = Array2::zeros((states.len(), FEATURE_WIDTH));
    for (r, (s, w)) in states.iter().zip(weights).enumerate() {
        let mut row = x.row_mut(r);
        let slice = row.as_slice_mut().expect("row-major");
        encode_into(slice, s.filled(), s.last_codon(), env.protein(), w, max_len);
    }
    x
}

/// Forward masks for a batch of states as an `n x 65` boolean matrix.
pub fn mask_batch(env: &CodonDesignEnv, states: &[&State]) -> Array2<bool> {
    let mut m = Array2::from_elem((states.len(), N_ACTIONS), false);
    for (r, s) in states.iter().enumerate() {
        let mask = env.forward_mask_unchecked(s.filled());
        for (c, &b) in mask.as_slice().iter().enumerate() {
            m[[r, c]] = b;
        }
    }
    m
}

/// A parameterized forward policy with state flows and `log Z`.
pub trait FlowModel: Send + Sync {
    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    /// Index of the `1x1` log-partition tensor.
    fn log_z_index(&self) -> usize;

    /// Records the batched forward pass, returning an `n x OUTPUT_WIDTH` node.
    fn record<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        env: &CodonDesignEnv,
        states: &[&State],
        weights: &[WeightVector],
    ) -> Result<Var>;

    fn log_z(&self) -> f64 {
        self.params().get(self.log_z_index())[[0, 0]]
    }

    /// Inference-only forward pass.
    fn forward(
        &self,
        env: &CodonDesignEnv,
        states: &[&State],
        weights: &[WeightVector],
    ) -> Result<Array2<f64>> {
        let mut tape = Tape::new(self.params());
        let out = self.record(&mut tape, env, states, weights)?;
        Ok(tape.value(out).clone())
    }
}

/// Architecture of [`MlpPolicy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub hidden: usize,
    pub max_len: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: 256,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

/// `91 -> hidden -> hidden -> 66` tanh network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpPolicy {
    config: MlpConfig,
    params: ParamStore,
}

impl MlpPolicy {
    /// Uniform `±1/sqrt(fan_in)` weights, zero biases, `log Z = 0`.
    pub fn new(config: MlpConfig, seed: u64) -> MlpPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let mut params = ParamStore::new();
        for (name, fan_in, fan_out) in [
            ("l1", FEATURE_WIDTH, h),
            ("l2", h, h),
            ("l3", h, OUTPUT_WIDTH),
        ] {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
            params.push(format!("{name}.weight"), ParamGroup::Network, w);
            params.push(
                format!("{name}.bias"),
                ParamGroup::Network,
                Array2::zeros((1, fan_out)),
            );
        }
        params.push("log_z", ParamGroup::LogZ, Array2::zeros((1, 1)));
        MlpPolicy { config, params }
    }

    /// Network with every parameter zero.
    pub fn zeros(config: MlpConfig) -> MlpPolicy {
        let mut p = MlpPolicy::new(config, 0);
        for t in p.params.tensors_mut() {
            t.fill(0.0);
        }
        p
    }

    pub fn config(&self) -> MlpConfig {
        self.config
    }
}

impl FlowModel for MlpPolicy {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn log_z_index(&self) -> usize {
        6
    }

    fn record<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        env: &CodonDesignEnv,
        states: &[&State],
        weights: &[WeightVector],
    ) -> Result<Var> {
        if !self.params.all_finite() {
            return Err(Error::Numeric(
                "policy parameters contain non-finite values".into(),
            ));
        }
        let x = tape.constant(encode_batch(env, states, weights, self.config.max_len));
        let mut h = x;
        for layer in 0..3 {
            let w = tape.param(2 * layer);
            let b = tape.param(2 * layer + 1);
            h = tape.matmul(h, w);
            h = tape.add_row(h, b);
            if layer < 2 {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }
}

/// Lookup key for preference weights in a [`TabularPolicy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct WeightKey([i64; 3]);

impl WeightKey {
    fn of(w: &WeightVector) -> WeightKey {
        WeightKey(w.as_array().map(|v| (v * 1e6).round() as i64))
    }
}

/// One row of logits and flow per (reachable state, registered weight).
#[derive(Debug, Clone)]
pub struct TabularPolicy {
    params: ParamStore,
    index: HashMap<(Vec<i8>, WeightKey), usize>,
    states: Vec<State>,
    weights: Vec<WeightVector>,
}

/// Every reachable state of an environment in depth-first order.
pub fn reachable_states(env: &CodonDesignEnv) -> Vec<State> {
    let mut out = Vec::new();
    let mut stack = vec![env.initial_state()];
    while let Some(s) = stack.pop() {
        if !s.is_complete() {
            let mask = env.forward_mask_unchecked(s.filled());
            let children: Vec<Action> = mask.allowed().collect();
            for a in children.into_iter().rev() {
                if let Transition::State(child) = env.step_unchecked(&s, a) {
                    stack.push(child);
                }
            }
        }
        out.push(s);
    }
    out
}

impl TabularPolicy {
    /// Zero-initialized table covering `env` for each of `weights`.
    pub fn new(env: &CodonDesignEnv, weights: &[WeightVector]) -> TabularPolicy {
        let states = reachable_states(env);
        let mut index = HashMap::new();
        for (wi, w) in weights.iter().enumerate() {
            for (si, s) in states.iter().enumerate() {
                index.insert(
                    (s.slots().to_vec(), WeightKey::of(w)),
                    wi * states.len() + si,
                );
            }
        }
        let mut params = ParamStore::new();
        params.push(
            "table",
            ParamGroup::Network,
            Array2::zeros((states.len() * weights.len(), OUTPUT_WIDTH)),
        );
        params.push("log_z", ParamGroup::LogZ, Array2::zeros((1, 1)));
        TabularPolicy {
            params,
            index,
            states,
            weights: weights.to_vec(),
        }
    }

    /// Table whose policy samples designs exactly in proportion to reward:
    /// each logit is the log of the reward mass below the child.
    pub fn proportional(
        env: &CodonDesignEnv,
        objectives: &Objectives,
        w: &WeightVector,
    ) -> Result<TabularPolicy> {
        let mut policy = TabularPolicy::new(env, &[*w]);
        let mut flows: HashMap<Vec<i8>, f64> = HashMap::new();
        // children before parents: deepest states first
        let mut order = policy.states.clone();
        order.sort_by_key(|s| std::cmp::Reverse(s.filled()));
        for s in &order {
            let flow = if s.is_complete() {
                objectives.reward(&MrnaSequence::new(s.codons()), w)?
            } else {
                env.forward_mask_unchecked(s.filled())
                    .allowed()
                    .map(|a| match env.step_unchecked(s, a) {
                        Transition::State(c) => flows[c.slots()],
                        Transition::Terminal(_) => unreachable!("exit is masked before completion"),
                    })
                    .sum()
            };
            flows.insert(s.slots().to_vec(), flow);
        }
        // (table row, (action, logit) pairs, log flow)
        type RowFill = (usize, Vec<(usize, f64)>, f64);
        let table_rows: Vec<RowFill> = policy
            .states
            .iter()
            .map(|s| {
                let row = policy.row_of(s, w).expect("state was registered");
                let logits = if s.is_complete() {
                    vec![(Action::EXIT.id(), 0.0)]
                } else {
                    env.forward_mask_unchecked(s.filled())
                        .allowed()
                        .map(|a| match env.step_unchecked(s, a) {
                            Transition::State(c) => (a.id(), flows[c.slots()].ln()),
                            Transition::Terminal(_) => unreachable!(),
                        })
                        .collect()
                };
                (row, logits, flows[s.slots()].ln())
            })
            .collect();
        let table = policy.params.get_mut(0);
        for (row, logits, log_flow) in table_rows {
            for (a, v) in logits {
                table[[row, a]] = v;
            }
            table[[row, FLOW_COLUMN]] = log_flow;
        }
        let log_z = flows[env.initial_state().slots()].ln();
        policy.params.get_mut(1)[[0, 0]] = log_z;
        Ok(policy)
    }

    fn row_of(&self, s: &State, w: &WeightVector) -> Result<usize> {
        self.index
            .get(&(s.slots().to_vec(), WeightKey::of(w)))
            .copied()
            .ok_or_else(|| {
                Error::Invariant(format!(
                    "state {s} / weights {:?} not covered by the table",
                    w.as_array()
                ))
            })
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn weights(&self) -> &[WeightVector] {
        &self.weights
    }
}

impl FlowModel for TabularPolicy {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn log_z_index(&self) -> usize {
        1
    }

    fn record<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        _env: &CodonDesignEnv,
        states: &[&State],
        weights: &[WeightVector],
    ) -> Result<Var> {
        let rows = states
            .iter()
            .zip(weights)
            .map(|(s, w)| self.row_of(s, w))
            .collect::<Result<Vec<_>>>()?;
        Ok(tape.lookup(0, rows))
    }
}

/// Epsilon-uniform exploration over the allowed actions, otherwise a draw
/// from `log_probs`. The result always respects the mask.
pub fn sample_action<R: Rng + ?Sized>(
    log_probs: &[f64],
    mask: &ActionMask,
    epsilon: f64,
    rng: &mut R,
) -> Action {
    let allowed: Vec<Action> = mask.allowed().collect();
    debug_assert!(!allowed.is_empty(), "mask allows no action");
    if allowed.len() == 1 {
        return allowed[0];
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return allowed[rng.random_range(0..allowed.len())];
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &a in &allowed {
        acc += log_probs[a.id()].exp();
        if u < acc {
            return a;
        }
    }
    *allowed.last().expect("non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::masked_log_softmax;
    use crate::genetic_code::codon_from_string;
    use rand_chacha::ChaCha8Rng;

    fn mfk() -> CodonDesignEnv {
        CodonDesignEnv::new(Protein::parse("MFK").unwrap())
    }

    #[test]
    fn encoding_layout() {
        assert_eq!(FEATURE_WIDTH, 91);
        let env = mfk();
        let w = WeightVector::new([0.3, 0.3, 0.4]).unwrap();
        let s0 = env.initial_state();
        let f = encode(&s0, env.protein(), &w, 180);
        assert_eq!(f[crate::genetic_code::AminoAcid::Met.index()], 1.0);
        assert_eq!(f[NEXT_AA_SLOTS + 64], 1.0);
        assert_eq!(f[POSITION_COL], 0.0);
        assert!((f[LENGTH_COL] - 3.0 / 180.0).abs() < 1e-15);
        assert_eq!(&f[WEIGHT_COL..], &w.as_array());
        assert_eq!(f[..NEXT_AA_SLOTS].iter().sum::<f64>(), 1.0);
        assert_eq!(f[NEXT_AA_SLOTS..POSITION_COL].iter().sum::<f64>(), 1.0);

        let x: MrnaSequence = "AUGUUUAAA".parse().unwrap();
        let done = env.prefix_state(&x, 3);
        let f = encode(&done, env.protein(), &w, 180);
        assert_eq!(f[NEXT_AA_SLOTS - 1], 1.0);
        assert_eq!(f[POSITION_COL], 1.0);
        assert_eq!(
            f[NEXT_AA_SLOTS + codon_from_string("AAA").unwrap().index()],
            1.0
        );

        let w2 = WeightVector::new([1.0, 0.0, 0.0]).unwrap();
        let g = encode(&done, env.protein(), &w2, 180);
        let diff: Vec<usize> = (0..FEATURE_WIDTH).filter(|&i| f[i] != g[i]).collect();
        assert!(diff.iter().all(|&i| i >= WEIGHT_COL));
        assert!(!diff.is_empty());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let env = mfk();
        let p = MlpPolicy::zeros(MlpConfig {
            hidden: 8,
            max_len: 180,
        });
        let s0 = env.initial_state();
        let out = p.forward(&env, &[&s0], &[WeightVector::uniform()]).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
        assert_eq!(out.dim(), (1, OUTPUT_WIDTH));
    }

    #[test]
    fn forward_is_deterministic() {
        let env = mfk();
        let p = MlpPolicy::new(
            MlpConfig {
                hidden: 16,
                max_len: 180,
            },
            7,
        );
        let s0 = env.initial_state();
        let w = [WeightVector::uniform()];
        let a = p.forward(&env, &[&s0], &w).unwrap();
        let b = p.forward(&env, &[&s0], &w).unwrap();
        assert_eq!(a.as_slice().unwrap(), b.as_slice().unwrap());
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn non_finite_parameters_fail() {
        let env = mfk();
        let mut p = MlpPolicy::new(
            MlpConfig {
                hidden: 4,
                max_len: 180,
            },
            1,
        );
        p.params_mut().get_mut(0)[[0, 0]] = f64::NAN;
        let s0 = env.initial_state();
        assert!(matches!(
            p.forward(&env, &[&s0], &[WeightVector::uniform()]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn single_parameter_perturbation_matches_gradient() {
        let env = mfk();
        let p = MlpPolicy::new(
            MlpConfig {
                hidden: 6,
                max_len: 180,
            },
            3,
        );
        let s0 = env.initial_state();
        let w = [WeightVector::uniform()];
        let output_of = |q: &MlpPolicy| q.forward(&env, &[&s0], &w).unwrap()[[0, FLOW_COLUMN]];
        let mut tape = Tape::new(p.params());
        let out = p.record(&mut tape, &env, &[&s0], &w).unwrap();
        let flow = tape.cols(out, FLOW_COLUMN, FLOW_COLUMN + 1);
        let loss = tape.mean(flow);
        let g = tape.backward(loss).unwrap();
        let delta = 1e-5;
        let mut plus = p.clone();
        plus.params_mut().get_mut(2)[[1, 2]] += delta;
        let mut minus = p.clone();
        minus.params_mut().get_mut(2)[[1, 2]] -= delta;
        let fd = (output_of(&plus) - output_of(&minus)) / (2.0 * delta);
        assert!((fd - g.0[2][[1, 2]]).abs() < 1e-8);
    }

    #[test]
    fn sampling_respects_mask_and_mixture() {
        let env = mfk();
        let x: MrnaSequence = "AUG".parse().unwrap();
        let s1 = env.prefix_state(&"AUGUUUAAA".parse::<MrnaSequence>().unwrap(), 1);
        let _ = x;
        let mask = env.forward_mask(&s1).unwrap();
        let uuu = Action::codon(codon_from_string("UUU").unwrap());
        let uuc = Action::codon(codon_from_string("UUC").unwrap());
        let mut logits = vec![0.0; N_ACTIONS];
        logits[uuu.id()] = 60.0;
        let lp = masked_log_softmax(&logits, mask.as_slice()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| sample_action(&lp, &mask, 0.25, &mut rng) == uuu)
            .count();
        let frac = hits as f64 / n as f64;
        assert!((frac - 0.875).abs() < 0.005, "{frac}");
        for _ in 0..1000 {
            let a = sample_action(&lp, &mask, 0.5, &mut rng);
            assert!(a == uuu || a == uuc);
        }
        let s0 = env.initial_state();
        let m0 = env.forward_mask(&s0).unwrap();
        let lp0 = masked_log_softmax(&vec![0.0; N_ACTIONS], m0.as_slice()).unwrap();
        for _ in 0..100 {
            assert_eq!(sample_action(&lp0, &m0, 0.0, &mut rng).to_string(), "AUG");
        }
    }

    #[test]
    fn pure_exploration_is_uniform() {
        // Leucine: six allowed codons; chi-square against uniform
        let env = CodonDesignEnv::new(Protein::parse("L").unwrap());
        let s0 = env.initial_state();
        let mask = env.forward_mask(&s0).unwrap();
        let mut logits = vec![0.0; N_ACTIONS];
        logits[mask.allowed().next().unwrap().id()] = 30.0;
        let lp = masked_log_softmax(&logits, mask.as_slice()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut counts = [0usize; N_ACTIONS];
        for _ in 0..n {
            counts[sample_action(&lp, &mask, 1.0, &mut rng).id()] += 1;
        }
        let expected = n as f64 / 6.0;
        let chi2: f64 = mask
            .allowed()
            .map(|a| (counts[a.id()] as f64 - expected).powi(2) / expected)
            .sum();
        // 5 degrees of freedom, 99.9th percentile is 20.5
        assert!(chi2 < 20.5, "chi2 {chi2}");
    }

    #[test]
    fn tabular_covers_reachable_states() {
        let env = mfk();
        let t = TabularPolicy::new(&env, &[WeightVector::uniform()]);
        // s0, AUG, 2 x Phe, 4 x Lys
        assert_eq!(t.num_states(), 1 + 1 + 2 + 4);
        let other = WeightVector::new([1.0, 0.0, 0.0]).unwrap();
        let s0 = env.initial_state();
        assert!(t.forward(&env, &[&s0], &[other]).is_err());
    }
}
