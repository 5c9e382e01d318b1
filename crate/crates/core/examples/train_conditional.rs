//! Trains one weight-conditioned policy and samples it at several
//! preferences.

use codonflow::env::CodonDesignEnv;
use codonflow::genetic_code::Protein;
use codonflow::metrics::{MetricsReport, SampleSet};
use codonflow::objectives::{Objectives, WeightVector};
use codonflow::policy::{FlowModel, MlpConfig, MlpPolicy};
use codonflow::training::{Trainer, TrainingConfig};

fn main() -> codonflow::Result<()> {
    let p = Protein::parse("MKTAYIAKQR")?;
    let env = CodonDesignEnv::new(p.clone());
    let objectives = Objectives::default();
    let config = TrainingConfig {
        batch_size: 16,
        n_iterations: 300,
        reward_exponent: 8.0,
        seed: 7,
        ..Default::default()
    };
    let model = MlpPolicy::new(
        MlpConfig {
            hidden: 32,
            max_len: p.len(),
        },
        7,
    );
    let mut trainer = Trainer::new(model, config)?;

    for chunk in 0..6 {
        let records: Vec<_> = (0..50)
            .map(|_| trainer.step(&env, &objectives))
            .collect::<Result<_, _>>()?;
        let loss = records.iter().map(|r| r.loss).sum::<f64>() / records.len() as f64;
        println!(
            "iter {:>4}  loss {loss:8.4}  log Z {:.3}",
            (chunk + 1) * 50,
            trainer.model.log_z()
        );
    }

    for w in [[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]] {
        let w = WeightVector::new(w)?;
        let designs = trainer.sample(&env, w, 200, 99)?;
        let set = SampleSet::score(p.clone(), designs, &objectives, w, 99)?;
        let m = MetricsReport::compute(&set, 20)?;
        println!(
            "w={:?}  unique {}  top-20 reward {:.4}",
            w.as_array(),
            m.uniqueness,
            m.topk_reward
        );
    }
    Ok(())
}
