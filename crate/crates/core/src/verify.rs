//! Self-checks run by the `verify` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, PairWeighting, ParamStore, Tape};
use crate::env::{CodonDesignEnv, Trajectory};
use crate::error::Result;
use crate::genetic_code::{translate, AminoAcid, Protein};
use crate::objectives::{Objectives, WeightVector};
use crate::optim::OptimizerConfig;
use crate::oracle::{count_designs, tv_distance, DesignSpace, DEFAULT_CAP};
use crate::policy::{FlowModel, MlpConfig, MlpPolicy, TabularPolicy};
use crate::training::{
    loss_and_gradients, record_loss, sample_from, sample_weights, trajectory_rng, LossKind,
    Trainer, TrainingConfig,
};

/// Largest element-wise `|analytic - fd| / (|fd| + 1e-8)` over all scalars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(tensor, flat index)` of the worst entry.
    pub worst: (usize, usize),
}

/// Central differences of `loss` at every scalar of `params`, compared with
/// `analytic`.
pub fn finite_difference_check<F>(
    params: &ParamStore,
    analytic: &Gradients,
    h: f64,
    loss: F,
) -> GradCheck
where
    F: Fn(&ParamStore) -> f64,
{
    let mut probe = params.clone();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        worst: (0, 0),
    };
    for t in 0..params.len() {
        for k in 0..params.get(t).len() {
            let orig = params.get(t).as_slice().expect("contiguous")[k];
            probe.get_mut(t).as_slice_mut().expect("contiguous")[k] = orig + h;
            let up = loss(&probe);
            probe.get_mut(t).as_slice_mut().expect("contiguous")[k] = orig - h;
            let down = loss(&probe);
            probe.get_mut(t).as_slice_mut().expect("contiguous")[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = analytic.0[t].as_slice().expect("contiguous")[k];
            let rel = (a - fd).abs() / (fd.abs() + 1e-8);
            if !(rel <= out.max_rel_error) {
                out.max_rel_error = rel;
                out.worst = (t, k);
            }
            out.checked += 1;
        }
    }
    out
}

/// Uniformly random protein of the given length.
pub fn random_protein<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Protein {
    let residues = (0..len)
        .map(|_| AminoAcid::CODING[rng.random_range(0..20)])
        .collect();
    Protein::new(residues).expect("standard residues")
}

/// One random `(parameters, batch)` pair and its gradient check for both
/// balance losses.
pub fn random_gradient_check(seed: u64, hidden: usize, h: f64) -> Result<[GradCheck; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let env = CodonDesignEnv::new(random_protein(rng.random_range(2..=6), &mut rng));
    let mut model = MlpPolicy::new(
        MlpConfig {
            hidden,
            max_len: 12,
        },
        seed,
    );
    for t in model.params_mut().tensors_mut() {
        t.mapv_inplace(|v| v + 0.3 * rng.random_range(-1.0..1.0));
    }
    let objectives = Objectives::default();
    let b = rng.random_range(1..=4);
    let w = sample_weights([1.0; 3], &mut rng)?;
    let mut rngs: Vec<ChaCha8Rng> = (0..b).map(|i| trajectory_rng(seed, 0, i)).collect();
    let batch = crate::training::rollout_batch(
        &env,
        &model,
        &objectives,
        &vec![w; b as usize],
        0.5,
        &mut rngs,
    )?;
    let trajectories: Vec<Trajectory> = batch.trajectories;
    let mut out = [GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        worst: (0, 0),
    }; 2];
    for (slot, weighting) in [PairWeighting::FullOnly, PairWeighting::Geometric(0.9)]
        .into_iter()
        .enumerate()
    {
        let (_, grads) = loss_and_gradients(&env, &model, &trajectories, weighting, 1.0)?;
        let probe_model = model.clone();
        out[slot] = finite_difference_check(model.params(), &grads, h, |p| {
            let mut m = probe_model.clone();
            *m.params_mut() = p.clone();
            let mut tape = Tape::new(m.params());
            let loss =
                record_loss(&mut tape, &m, &env, &trajectories, weighting, 1.0).expect("loss");
            tape.scalar(loss)
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProportionalCheck {
    pub tv: f64,
    pub steps: usize,
    pub samples: usize,
    pub space_size: usize,
}

/// Trains a tabular policy with trajectory balance at weights `w` and
/// measures the total variation between its samples and `R / Z`.
pub fn proportional_sampling_check(
    protein: &Protein,
    w: WeightVector,
    steps: usize,
    samples: usize,
    seed: u64,
) -> Result<ProportionalCheck> {
    let env = CodonDesignEnv::new(protein.clone());
    let objectives = Objectives::default();
    let space = DesignSpace::enumerate(protein, &objectives, w, DEFAULT_CAP)?;
    let config = TrainingConfig {
        loss: LossKind::Tb,
        batch_size: 16,
        n_iterations: steps,
        conditional: false,
        fixed_weights: w,
        optimizer: OptimizerConfig {
            lr: 0.05,
            lr_patience: u32::MAX,
            ..Default::default()
        },
        seed,
        ..Default::default()
    };
    let mut trainer = Trainer::new(TabularPolicy::new(&env, &[w]), config)?;
    trainer.train(&env, &objectives)?;
    let drawn = sample_from(&env, &trainer.model, w, samples, seed ^ 0x5eed)?;
    let tv = tv_distance(&count_designs(&drawn), &space.support())?;
    Ok(ProportionalCheck {
        tv,
        steps,
        samples,
        space_size: space.len(),
    })
}

/// Fraction of sampled designs that translate back to their protein.
pub fn validity_check(
    n_proteins: usize,
    per_protein: usize,
    len: (usize, usize),
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = MlpPolicy::new(
        MlpConfig {
            hidden: 32,
            max_len: len.1,
        },
        seed,
    );
    let mut ok = 0usize;
    for i in 0..n_proteins {
        let p = random_protein(rng.random_range(len.0..=len.1), &mut rng);
        let env = CodonDesignEnv::new(p.clone());
        let w = sample_weights([1.0; 3], &mut rng)?;
        for x in sample_from(&env, &model, w, per_protein, seed.wrapping_add(i as u64))? {
            if translate(&x).map(|q| q == p).unwrap_or(false) {
                ok += 1;
            }
        }
    }
    Ok(ok as f64 / (n_proteins * per_protein) as f64)
}

/// Largest gap between the sub-trajectory loss restricted to the full
/// trajectory and `(log Z + sum log P_F - log R)^2` over random trajectories.
pub fn reduction_check(n: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objectives = Objectives::default();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let env = CodonDesignEnv::new(random_protein(rng.random_range(1..=12), &mut rng));
        let mut model = MlpPolicy::new(
            MlpConfig {
                hidden: 8,
                max_len: 12,
            },
            seed.wrapping_add(i as u64),
        );
        let z = model.log_z_index();
        model.params_mut().get_mut(z)[[0, 0]] = rng.random_range(-3.0..3.0);
        let w = sample_weights([1.0; 3], &mut rng)?;
        let mut rngs = vec![trajectory_rng(seed, i as u64, 0)];
        let tr = crate::training::rollout_batch(&env, &model, &objectives, &[w], 0.25, &mut rngs)?
            .trajectories
            .remove(0);
        let direct = (model.log_z() + tr.sum_log_pf() - tr.reward.ln()).powi(2);
        let full = crate::training::tb_loss(&env, &model, &tr)?;
        worst = worst.max((full - direct).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

/// Runs the built-in checks at reduced sizes.
pub fn run_all(seed: u64) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let mut push = |name: &str, measured: f64, threshold: f64, passed: bool| {
        checks.push(CheckResult {
            name: name.into(),
            passed,
            measured,
            threshold,
        });
    };
    let mfk = Protein::parse("MFK")?;
    let tv = proportional_sampling_check(
        &mfk,
        WeightVector::new([0.3, 0.3, 0.4])?,
        1000,
        50_000,
        seed,
    )?
    .tv;
    push("proportional_sampling_tv", tv, 0.05, tv < 0.05);
    let mut grad: f64 = 0.0;
    for i in 0..10 {
        for g in random_gradient_check(seed.wrapping_add(i), 6, 1e-5)? {
            grad = grad.max(g.max_rel_error);
        }
    }
    push("gradient_relative_error", grad, 1e-4, grad <= 1e-4);
    let valid = validity_check(5, 100, (10, 60), seed)?;
    push("design_validity", valid, 1.0, valid == 1.0);
    let red = reduction_check(100, seed)?;
    push("subtb_tb_reduction", red, 1e-12, red <= 1e-12);
    Ok(VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_corrupted_gradient() {
        let mut p = ParamStore::new();
        p.push(
            "x",
            crate::autodiff::ParamGroup::Network,
            ndarray::array![[1.5, -0.5]],
        );
        let loss = |q: &ParamStore| q.get(0).iter().map(|v| v * v).sum::<f64>();
        let good = Gradients(vec![ndarray::array![[3.0, -1.0]]]);
        assert!(finite_difference_check(&p, &good, 1e-5, loss).max_rel_error < 1e-8);
        let bad = Gradients(vec![ndarray::array![[3.0, -1.01]]]);
        let c = finite_difference_check(&p, &bad, 1e-5, loss);
        assert!(c.max_rel_error > 1e-4);
        assert_eq!(c.worst, (0, 1));
    }

    #[test]
    fn random_mlp_gradients_match() {
        for seed in 0..3 {
            for g in random_gradient_check(seed, 4, 1e-5).unwrap() {
                assert!(g.max_rel_error <= 1e-4, "seed {seed}: {g:?}");
            }
        }
    }

    #[test]
    fn reduction_is_exact() {
        assert!(reduction_check(20, 1).unwrap() <= 1e-12);
    }
}
