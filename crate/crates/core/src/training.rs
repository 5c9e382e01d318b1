//! Balance losses and the on-policy training loop.
//!
//! Trajectories in a batch share one protein and therefore one length, so
//! rollouts advance in lock-step: each step is a single batched forward
//! pass followed by per-trajectory sampling from independent RNG streams.

use std::io::Write;
use std::ops::Range;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{masked_log_softmax, Gradients, PairWeighting, Tape, Var};
use crate::env::{Action, CodonDesignEnv, State, Trajectory, Transition};
use crate::error::{Error, Result};
use crate::genetic_code::MrnaSequence;
use crate::objectives::{Objectives, WeightVector};
use crate::optim::{Adam, OptimizerConfig};
use crate::policy::{mask_batch, sample_action, FlowModel, FLOW_COLUMN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Tb,
    Subtb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub loss: LossKind,
    pub subtb_lambda: f64,
    pub batch_size: usize,
    pub n_iterations: usize,
    pub epsilon: f64,
    pub dirichlet_alpha: [f64; 3],
    /// Resample `w` every iteration; otherwise train at `fixed_weights`.
    pub conditional: bool,
    pub fixed_weights: WeightVector,
    /// Trains towards `R^beta`; 1 leaves the reward unchanged.
    pub reward_exponent: f64,
    pub optimizer: OptimizerConfig,
    /// Iterations averaged into one loss observation for the plateau scheduler.
    pub scheduler_window: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            loss: LossKind::Subtb,
            subtb_lambda: 0.9,
            batch_size: 64,
            n_iterations: 1000,
            epsilon: 0.25,
            dirichlet_alpha: [1.0; 3],
            conditional: true,
            fixed_weights: WeightVector::uniform(),
            reward_exponent: 1.0,
            optimizer: OptimizerConfig::default(),
            scheduler_window: 50,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.scheduler_window == 0 {
            return Err(Error::Config(
                "batch_size and scheduler_window must be at least 1".into(),
            ));
        }
        if !(self.subtb_lambda > 0.0 && self.subtb_lambda <= 1.0) {
            return Err(Error::Config(format!(
                "subtb_lambda {} outside (0, 1]",
                self.subtb_lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "epsilon {} outside [0, 1]",
                self.epsilon
            )));
        }
        if self
            .dirichlet_alpha
            .iter()
            .any(|a| !(*a > 0.0 && a.is_finite()))
        {
            return Err(Error::Config(format!(
                "dirichlet_alpha {:?} must be positive",
                self.dirichlet_alpha
            )));
        }
        if !(self.reward_exponent > 0.0 && self.reward_exponent.is_finite()) {
            return Err(Error::Config(format!(
                "reward_exponent {} must be positive",
                self.reward_exponent
            )));
        }
        self.optimizer.validate()
    }

    fn pair_weighting(&self) -> PairWeighting {
        match self.loss {
            LossKind::Tb => PairWeighting::FullOnly,
            LossKind::Subtb => PairWeighting::Geometric(self.subtb_lambda),
        }
    }
}

/// Draws preference weights from `Dirichlet(alpha)`.
pub fn sample_weights<R: rand::Rng + ?Sized>(alpha: [f64; 3], rng: &mut R) -> Result<WeightVector> {
    let d = Dirichlet::new(alpha)
        .map_err(|e| Error::Config(format!("dirichlet_alpha {alpha:?}: {e}")))?;
    let w: [f64; 3] = d.sample(rng);
    WeightVector::new(w)
}

/// Independent stream for trajectory `index` of iteration `iteration`.
pub fn trajectory_rng(seed: u64, iteration: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&iteration.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..].copy_from_slice(b"rollouts");
    ChaCha8Rng::from_seed(key)
}

fn weights_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&iteration.to_le_bytes());
    key[24..].copy_from_slice(b"weights!");
    ChaCha8Rng::from_seed(key)
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub loss: Option<f64>,
    pub grad_norm: Option<f64>,
}

impl BatchResult {
    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }
}

/// Samples one trajectory per entry of `weights`, using `rngs[i]` for
/// trajectory `i`. Exploration changes only which action is taken; the
/// recorded `log_pf` is always the policy's own log-probability.
pub fn rollout_batch<M: FlowModel + ?Sized>(
    env: &CodonDesignEnv,
    model: &M,
    objectives: &Objectives,
    weights: &[WeightVector],
    epsilon: f64,
    rngs: &mut [ChaCha8Rng],
) -> Result<BatchResult> {
    let designs = sample_designs(env, model, weights, epsilon, rngs)?;
    let rewards = designs
        .par_iter()
        .zip(weights.par_iter())
        .map(|((x, _), w)| objectives.reward(x, w))
        .collect::<Result<Vec<f64>>>()?;
    let trajectories = designs
        .into_iter()
        .zip(weights)
        .zip(&rewards)
        .map(|(((x, log_pf), w), &r)| {
            let mut t = Trajectory::from_design(env, &x, r, *w)?;
            t.log_pf = log_pf;
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchResult {
        trajectories,
        rewards,
        loss: None,
        grad_norm: None,
    })
}

/// Lock-step sampling of complete designs and their per-step `log P_F`
/// (the final entry is the forced exit, always exactly 0).
pub fn sample_designs<M: FlowModel + ?Sized>(
    env: &CodonDesignEnv,
    model: &M,
    weights: &[WeightVector],
    epsilon: f64,
    rngs: &mut [ChaCha8Rng],
) -> Result<Vec<(MrnaSequence, Vec<f64>)>> {
    let b = weights.len();
    if rngs.len() != b {
        return Err(Error::Invariant(format!(
            "{} rngs for {b} trajectories",
            rngs.len()
        )));
    }
    let l = env.len();
    let mut states = vec![env.initial_state(); b];
    let mut log_pf = vec![Vec::with_capacity(l + 1); b];
    for t in 0..l {
        let mask = env.forward_mask_unchecked(t);
        if mask.count() == 1 {
            let a = mask.allowed().next().expect("one allowed action");
            for (s, lp) in states.iter_mut().zip(&mut log_pf) {
                *s = advance(env, s, a);
                lp.push(0.0);
            }
            continue;
        }
        let refs: Vec<&State> = states.iter().collect();
        let out = model.forward(env, &refs, weights)?;
        for (i, rng) in rngs.iter_mut().enumerate() {
            let row = out.row(i);
            let logits = &row.as_slice().expect("row-major")[..FLOW_COLUMN];
            let lp = masked_log_softmax(logits, mask.as_slice())?;
            let a = sample_action(&lp, &mask, epsilon, rng);
            log_pf[i].push(lp[a.id()]);
            states[i] = advance(env, &states[i], a);
        }
    }
    Ok(states
        .into_iter()
        .zip(log_pf)
        .map(|(s, mut lp)| {
            lp.push(0.0);
            (MrnaSequence::new(s.codons()), lp)
        })
        .collect())
}

fn advance(env: &CodonDesignEnv, s: &State, a: Action) -> State {
    match env.step_unchecked(s, a) {
        Transition::State(next) => next,
        Transition::Terminal(_) => unreachable!("exit is masked before completion"),
    }
}

/// Records the mean balance loss of `trajectories` on `tape`.
///
/// Each trajectory contributes the weighted mean over sub-trajectories
/// `s_i .. s_j` of `(log F(s_i) + sum log P_F - log F(s_j))^2`, with
/// `log F(s_0) = log Z` and `log F(s_L) = beta * log R(x)`. Trajectory
/// balance is the case where only `(0, L)` carries weight.
pub fn record_loss<'p, M: FlowModel + ?Sized>(
    tape: &mut Tape<'p>,
    model: &'p M,
    env: &CodonDesignEnv,
    trajectories: &[Trajectory],
    weighting: PairWeighting,
    reward_exponent: f64,
) -> Result<Var> {
    if trajectories.is_empty() {
        return Err(Error::Invariant("loss over an empty batch".into()));
    }
    let seg_len = env.len() + 1;
    let mut states = Vec::with_capacity(trajectories.len() * seg_len);
    let mut weights = Vec::with_capacity(states.capacity());
    let mut actions = Vec::with_capacity(states.capacity());
    let mut segments: Vec<Range<usize>> = Vec::with_capacity(trajectories.len());
    for tr in trajectories {
        if tr.states.len() != seg_len || tr.actions.len() != seg_len {
            return Err(Error::Invariant(format!(
                "trajectory of length {} in an environment of length {}",
                tr.len(),
                env.len()
            )));
        }
        if !(tr.reward > 0.0) {
            return Err(Error::Invariant(format!(
                "non-positive reward {} for {}",
                tr.reward, tr.design
            )));
        }
        let start = states.len();
        states.extend(tr.states.iter());
        weights.extend(std::iter::repeat_n(tr.weights, seg_len));
        actions.extend(tr.actions.iter().map(|a| a.id()));
        segments.push(start..start + seg_len);
    }
    let n = states.len();
    let out = model.record(tape, env, &states, &weights)?;
    let logits = tape.cols(out, 0, FLOW_COLUMN);
    let lp = tape.masked_log_softmax(logits, mask_batch(env, &states))?;
    let chosen = tape.gather(lp, actions);
    let log_z = tape.param(model.log_z_index());

    let mut first = Array2::zeros((n, 1));
    let mut interior = Array2::ones((n, 1));
    let mut terminal = Array2::zeros((n, 1));
    for (seg, tr) in segments.iter().zip(trajectories) {
        first[[seg.start, 0]] = 1.0;
        interior[[seg.start, 0]] = 0.0;
        interior[[seg.end - 1, 0]] = 0.0;
        terminal[[seg.end - 1, 0]] = reward_exponent * tr.reward.ln();
    }
    let flow = tape.cols(out, FLOW_COLUMN, FLOW_COLUMN + 1);
    let flow = tape.mul_const(flow, interior);
    let z = tape.broadcast(log_z, n);
    let z = tape.mul_const(z, first);
    let boundary = tape.add(flow, z);
    let boundary = tape.add_const(boundary, &terminal);
    let prefix = tape.segment_exclusive_cumsum(chosen, segments.clone());
    let v = tape.sub(boundary, prefix);
    let per_traj = tape.segment_pairwise(v, segments, weighting);
    Ok(tape.mean(per_traj))
}

fn scalar_loss<M: FlowModel + ?Sized>(
    env: &CodonDesignEnv,
    model: &M,
    trajectories: &[Trajectory],
    weighting: PairWeighting,
) -> Result<f64> {
    let mut tape = Tape::new(model.params());
    let loss = record_loss(&mut tape, model, env, trajectories, weighting, 1.0)?;
    Ok(tape.scalar(loss))
}

/// `(log Z + sum log P_F - log R(x))^2` for one trajectory.
pub fn tb_loss<M: FlowModel + ?Sized>(
    env: &CodonDesignEnv,
    model: &M,
    trajectory: &Trajectory,
) -> Result<f64> {
    scalar_loss(
        env,
        model,
        std::slice::from_ref(trajectory),
        PairWeighting::FullOnly,
    )
}

/// Sub-trajectory balance with geometric weight `lambda^(j - i)`.
pub fn subtb_loss<M: FlowModel + ?Sized>(
    env: &CodonDesignEnv,
    model: &M,
    trajectory: &Trajectory,
    lambda: f64,
) -> Result<f64> {
    scalar_loss(
        env,
        model,
        std::slice::from_ref(trajectory),
        PairWeighting::Geometric(lambda),
    )
}

/// Loss value and parameter gradients for a batch.
pub fn loss_and_gradients<M: FlowModel + ?Sized>(
    env: &CodonDesignEnv,
    model: &M,
    trajectories: &[Trajectory],
    weighting: PairWeighting,
    reward_exponent: f64,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new(model.params());
    let loss = record_loss(
        &mut tape,
        model,
        env,
        trajectories,
        weighting,
        reward_exponent,
    )?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss evaluated to {value}")));
    }
    let grads = tape.backward(loss)?;
    Ok((value, grads))
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub loss: f64,
    pub mean_reward: f64,
    #[serde(rename = "logZ")]
    pub log_z: f64,
}

pub fn write_loss_trace<W: Write>(records: &[IterationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Model, optimizer and iteration counter of a training run.
#[derive(Debug, Clone)]
pub struct Trainer<M> {
    pub model: M,
    pub optimizer: Adam,
    pub config: TrainingConfig,
    iteration: u64,
    window: (f64, usize),
}

impl<M: FlowModel> Trainer<M> {
    pub fn new(model: M, config: TrainingConfig) -> Result<Trainer<M>> {
        config.validate()?;
        let optimizer = Adam::new(model.params(), config.optimizer);
        Ok(Trainer {
            model,
            optimizer,
            config,
            iteration: 0,
            window: (0.0, 0),
        })
    }

    /// Resumes from saved state.
    pub fn from_parts(
        model: M,
        optimizer: Adam,
        config: TrainingConfig,
        iteration: u64,
    ) -> Result<Trainer<M>> {
        config.validate()?;
        Ok(Trainer {
            model,
            optimizer,
            config,
            iteration,
            window: (0.0, 0),
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Weights for the next iteration: a Dirichlet draw in conditional
    /// mode, otherwise the fixed vector.
    pub fn next_weights(&self) -> Result<WeightVector> {
        if self.config.conditional {
            sample_weights(
                self.config.dirichlet_alpha,
                &mut weights_rng(self.config.seed, self.iteration),
            )
        } else {
            Ok(self.config.fixed_weights)
        }
    }

    /// One iteration: sample `w`, roll out a batch, take an optimizer step.
    /// The plateau scheduler sees the mean loss of every `scheduler_window`
    /// iterations. On a numeric failure the parameters are left untouched.
    pub fn step(
        &mut self,
        env: &CodonDesignEnv,
        objectives: &Objectives,
    ) -> Result<IterationRecord> {
        let w = self.next_weights()?;
        let b = self.config.batch_size;
        let weights = vec![w; b];
        let mut rngs: Vec<ChaCha8Rng> = (0..b as u64)
            .map(|i| trajectory_rng(self.config.seed, self.iteration, i))
            .collect();
        let batch = rollout_batch(
            env,
            &self.model,
            objectives,
            &weights,
            self.config.epsilon,
            &mut rngs,
        )?;
        let (loss, grads) = loss_and_gradients(
            env,
            &self.model,
            &batch.trajectories,
            self.config.pair_weighting(),
            self.config.reward_exponent,
        )?;
        self.optimizer.step(self.model.params_mut(), &grads)?;
        self.window.0 += loss;
        self.window.1 += 1;
        if self.window.1 == self.config.scheduler_window {
            self.optimizer.observe(self.window.0 / self.window.1 as f64);
            self.window = (0.0, 0);
        }
        let record = IterationRecord {
            iteration: self.iteration,
            loss,
            mean_reward: batch.mean_reward(),
            log_z: self.model.log_z(),
        };
        self.iteration += 1;
        Ok(record)
    }

    /// Runs `config.n_iterations` iterations on one environment.
    pub fn train(
        &mut self,
        env: &CodonDesignEnv,
        objectives: &Objectives,
    ) -> Result<Vec<IterationRecord>> {
        (0..self.config.n_iterations)
            .map(|_| self.step(env, objectives))
            .collect()
    }

    /// Draws `n` designs at weights `w` without exploration.
    pub fn sample(
        &self,
        env: &CodonDesignEnv,
        w: WeightVector,
        n: usize,
        seed: u64,
    ) -> Result<Vec<MrnaSequence>> {
        sample_from(env, &self.model, w, n, seed)
    }
}

/// Draws `n` designs from `model` at weights `w` with no exploration,
/// using the per-index streams of iteration `u64::MAX`.
pub fn sample_from<M: FlowModel + ?Sized>(
    env: &CodonDesignEnv,
    model: &M,
    w: WeightVector,
    n: usize,
    seed: u64,
) -> Result<Vec<MrnaSequence>> {
    const CHUNK: usize = 256;
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let weights = vec![w; end - start];
        let mut rngs: Vec<ChaCha8Rng> = (start..end)
            .map(|i| trajectory_rng(seed, u64::MAX, i as u64))
            .collect();
        out.extend(
            sample_designs(env, model, &weights, 0.0, &mut rngs)?
                .into_iter()
                .map(|(x, _)| x),
        );
        start = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genetic_code::Protein;
    use crate::policy::{MlpConfig, MlpPolicy, TabularPolicy};
    use std::collections::HashMap;

    fn mfk() -> CodonDesignEnv {
        CodonDesignEnv::new(Protein::parse("MFK").unwrap())
    }

    #[test]
    fn dirichlet_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mut sum = [0.0; 3];
        for _ in 0..n {
            let w = sample_weights([1.0; 3], &mut rng).unwrap().as_array();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for k in 0..3 {
                sum[k] += w[k];
            }
        }
        for s in sum {
            assert!((s / n as f64 - 1.0 / 3.0).abs() < 0.01);
        }
        let mut first = 0.0;
        for _ in 0..20_000 {
            first += sample_weights([100.0, 1.0, 1.0], &mut rng)
                .unwrap()
                .as_array()[0];
        }
        assert!((first / 20_000.0 - 100.0 / 102.0).abs() < 0.005);
        assert!(sample_weights([0.0, 1.0, 1.0], &mut rng).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::default().validate().is_ok());
        for bad in [
            TrainingConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainingConfig {
                subtb_lambda: 0.0,
                ..Default::default()
            },
            TrainingConfig {
                subtb_lambda: 1.5,
                ..Default::default()
            },
            TrainingConfig {
                dirichlet_alpha: [1.0, -1.0, 1.0],
                ..Default::default()
            },
            TrainingConfig {
                epsilon: 1.5,
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn rollouts_stay_in_design_space() {
        let env = mfk();
        let model = MlpPolicy::new(
            MlpConfig {
                hidden: 8,
                max_len: 180,
            },
            0,
        );
        let objectives = Objectives::default();
        let b = 32;
        let weights = vec![WeightVector::uniform(); b];
        let mut rngs: Vec<_> = (0..b as u64).map(|i| trajectory_rng(3, 0, i)).collect();
        let batch = rollout_batch(&env, &model, &objectives, &weights, 0.25, &mut rngs).unwrap();
        assert_eq!(batch.trajectories.len(), b);
        let space = ["AUGUUUAAA", "AUGUUUAAG", "AUGUUCAAA", "AUGUUCAAG"];
        for (tr, r) in batch.trajectories.iter().zip(&batch.rewards) {
            assert!(space.contains(&tr.design.to_string().as_str()));
            assert!(*r > 0.0);
            assert_eq!(tr.actions.last(), Some(&Action::EXIT));
            assert_eq!(*tr.log_pf.last().unwrap(), 0.0);
            assert_eq!(tr.log_pf[0], 0.0);
        }
    }

    #[test]
    fn uniform_exploration_covers_leaves_evenly() {
        let env = mfk();
        let model = MlpPolicy::new(
            MlpConfig {
                hidden: 8,
                max_len: 180,
            },
            0,
        );
        let n = 40_000;
        let mut rngs: Vec<_> = (0..n as u64).map(|i| trajectory_rng(9, 0, i)).collect();
        let designs = sample_designs(
            &env,
            &model,
            &vec![WeightVector::uniform(); n],
            1.0,
            &mut rngs,
        )
        .unwrap();
        let mut counts: HashMap<String, usize> = HashMap::new();
        for (x, _) in designs {
            *counts.entry(x.to_string()).or_default() += 1;
        }
        assert_eq!(counts.len(), 4);
        for c in counts.values() {
            assert!((*c as f64 / n as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn recorded_log_probs_ignore_exploration() {
        let env = mfk();
        let model = MlpPolicy::new(
            MlpConfig {
                hidden: 8,
                max_len: 180,
            },
            4,
        );
        let objectives = Objectives::default();
        for eps in [0.0, 0.5, 1.0] {
            let mut rngs: Vec<_> = (0..16).map(|i| trajectory_rng(1, 0, i)).collect();
            let batch = rollout_batch(
                &env,
                &model,
                &objectives,
                &vec![WeightVector::uniform(); 16],
                eps,
                &mut rngs,
            )
            .unwrap();
            for tr in &batch.trajectories {
                for (t, s) in tr.states.iter().enumerate() {
                    let out = model.forward(&env, &[s], &[tr.weights]).unwrap();
                    let mask = env.forward_mask(s).unwrap();
                    let lp = masked_log_softmax(
                        &out.as_slice().unwrap()[..FLOW_COLUMN],
                        mask.as_slice(),
                    )
                    .unwrap();
                    assert!((lp[tr.actions[t].id()] - tr.log_pf[t]).abs() < 1e-12);
                }
            }
        }
    }

    fn two_leaf() -> (CodonDesignEnv, Vec<MrnaSequence>) {
        let env = CodonDesignEnv::new(Protein::parse("F").unwrap());
        (env, vec!["UUU".parse().unwrap(), "UUC".parse().unwrap()])
    }

    #[test]
    fn tb_two_leaf_examples() {
        let (env, leaves) = two_leaf();
        let w = WeightVector::uniform();
        let mut uniform = TabularPolicy::new(&env, &[w]);
        uniform.params_mut().get_mut(1)[[0, 0]] = 2f64.ln();
        for x in &leaves {
            let tr = Trajectory::from_design(&env, x, 1.0, w).unwrap();
            assert!(tb_loss(&env, &uniform, &tr).unwrap().abs() < 1e-15);
        }
        uniform.params_mut().get_mut(1)[[0, 0]] = 4f64.ln();
        let tr = Trajectory::from_design(&env, &leaves[0], 1.0, w).unwrap();
        let loss = tb_loss(&env, &uniform, &tr).unwrap();
        assert!((loss - 2f64.ln().powi(2)).abs() < 1e-12);
        assert!((loss - 0.4805).abs() < 1e-4);
        let bad = Trajectory::from_design(&env, &leaves[0], 0.0, w).unwrap();
        assert!(matches!(
            tb_loss(&env, &uniform, &bad),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn proportional_policy_zeroes_both_losses() {
        let env = mfk();
        let objectives = Objectives::default();
        let w = WeightVector::new([0.2, 0.5, 0.3]).unwrap();
        let policy = TabularPolicy::proportional(&env, &objectives, &w).unwrap();
        for x in ["AUGUUUAAA", "AUGUUUAAG", "AUGUUCAAA", "AUGUUCAAG"] {
            let x: MrnaSequence = x.parse().unwrap();
            let r = objectives.reward(&x, &w).unwrap();
            let tr = Trajectory::from_design(&env, &x, r, w).unwrap();
            assert!(tb_loss(&env, &policy, &tr).unwrap() < 1e-24);
            assert!(subtb_loss(&env, &policy, &tr, 0.9).unwrap() < 1e-24);
        }
    }

    #[test]
    fn subtb_hand_expansion_length_two() {
        // protein "FK": states s0, s1, s2; three sub-trajectories
        let env = CodonDesignEnv::new(Protein::parse("FK").unwrap());
        let w = WeightVector::uniform();
        let mut policy = TabularPolicy::new(&env, &[w]);
        let x: MrnaSequence = "UUUAAG".parse().unwrap();
        let tr = Trajectory::from_design(&env, &x, 0.5, w).unwrap();
        let (lz, f1) = (0.7, -0.4);
        let (a0, a1) = (0.3, -0.2);
        policy.params_mut().get_mut(1)[[0, 0]] = lz;
        // tag each row's flow with its index to locate the rows of s0 and s1
        let n_rows = policy.params().get(0).nrows();
        for r in 0..n_rows {
            policy.params_mut().get_mut(0)[[r, FLOW_COLUMN]] = r as f64 + 1.0;
        }
        let row_of =
            |s: &State| policy.forward(&env, &[s], &[w]).unwrap()[[0, FLOW_COLUMN]] as usize - 1;
        let (r0, r1) = (row_of(&tr.states[0]), row_of(&tr.states[1]));
        let uuu = tr.actions[0].id();
        let aag = tr.actions[1].id();
        let t = policy.params_mut().get_mut(0);
        t.fill(0.0);
        t[[r0, uuu]] = a0;
        t[[r1, aag]] = a1;
        t[[r1, FLOW_COLUMN]] = f1;
        let lp0 = a0 - (a0.exp() + 1.0).ln();
        let lp1 = a1 - (a1.exp() + 1.0).ln();
        let lr = 0.5f64.ln();
        let lambda = 0.9f64;
        let r01 = lz + lp0 - f1;
        let r12 = f1 + lp1 - lr;
        let r02 = lz + lp0 + lp1 - lr;
        let expected = (lambda * r01 * r01 + lambda * r12 * r12 + lambda * lambda * r02 * r02)
            / (2.0 * lambda + lambda * lambda);
        let got = subtb_loss(&env, &policy, &tr, lambda).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        let tb = tb_loss(&env, &policy, &tr).unwrap();
        assert!((tb - r02 * r02).abs() < 1e-12);
    }

    #[test]
    fn tabular_tb_training_matches_reward_distribution() {
        let env = mfk();
        let objectives = Objectives::default();
        let w = WeightVector::uniform();
        let config = TrainingConfig {
            loss: LossKind::Tb,
            batch_size: 16,
            n_iterations: 600,
            conditional: false,
            fixed_weights: w,
            optimizer: OptimizerConfig {
                lr: 0.05,
                ..Default::default()
            },
            seed: 5,
            ..Default::default()
        };
        let mut trainer = Trainer::new(TabularPolicy::new(&env, &[w]), config).unwrap();
        let trace = trainer.train(&env, &objectives).unwrap();
        assert_eq!(trace.len(), 600);
        let designs = ["AUGUUUAAA", "AUGUUUAAG", "AUGUUCAAA", "AUGUUCAAG"];
        let rewards: Vec<f64> = designs
            .iter()
            .map(|d| objectives.reward(&d.parse().unwrap(), &w).unwrap())
            .collect();
        let z: f64 = rewards.iter().sum();
        let n = 50_000;
        let samples = trainer.sample(&env, w, n, 1).unwrap();
        let mut tv = 0.0;
        for (d, r) in designs.iter().zip(&rewards) {
            let freq = samples.iter().filter(|x| x.to_string() == *d).count() as f64 / n as f64;
            tv += (freq - r / z).abs();
        }
        assert!(tv / 2.0 < 0.05, "tv {}", tv / 2.0);
        assert!((trainer.model.log_z() - z.ln()).abs() < 0.1);
    }

    #[test]
    fn unconditional_mode_keeps_weights() {
        let w = WeightVector::new([0.6, 0.3, 0.1]).unwrap();
        let config = TrainingConfig {
            conditional: false,
            fixed_weights: w,
            ..Default::default()
        };
        let mut t = Trainer::new(
            MlpPolicy::new(
                MlpConfig {
                    hidden: 4,
                    max_len: 180,
                },
                0,
            ),
            config,
        )
        .unwrap();
        for _ in 0..3 {
            assert_eq!(t.next_weights().unwrap(), w);
            t.iteration += 1;
        }
        t.config.conditional = true;
        let a = t.next_weights().unwrap();
        t.iteration += 1;
        assert_ne!(a, t.next_weights().unwrap());
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let env = CodonDesignEnv::new(Protein::parse("MFKLSR").unwrap());
        let objectives = Objectives::default();
        let config = TrainingConfig {
            batch_size: 8,
            n_iterations: 5,
            seed: 42,
            ..Default::default()
        };
        let run = || {
            let mut t = Trainer::new(
                MlpPolicy::new(
                    MlpConfig {
                        hidden: 16,
                        max_len: 180,
                    },
                    42,
                ),
                config.clone(),
            )
            .unwrap();
            t.train(&env, &objectives).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        let mut buf = Vec::new();
        write_loss_trace(&a, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,loss,mean_reward,logZ\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
