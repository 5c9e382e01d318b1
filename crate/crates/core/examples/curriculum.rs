//! Teacher-driven curriculum against random task order on a two-task toy.

use codonflow::curriculum::{
    build_tasks, run_curriculum, A2dKind, AcpKind, CurriculumConfig, GflowStudent, LpeKind,
    Schedule,
};
use codonflow::objectives::Objectives;
use codonflow::policy::{MlpConfig, MlpPolicy};
use codonflow::training::{Trainer, TrainingConfig};
use codonflow::verify::random_protein;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> codonflow::Result<()> {
    let seed = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = Vec::new();
    for range in [3..=5, 8..=12] {
        for _ in 0..4 {
            let len = rng.random_range(range.clone());
            pool.push(random_protein(len, &mut rng));
        }
    }
    let tasks = build_tasks(&[(3, 5), (8, 12)], &pool)?;
    let cfg = CurriculumConfig {
        lpe: LpeKind::Linreg,
        lpe_k: 5,
        acp: AcpKind::Lp,
        a2d: A2dKind::GreedyProp,
        a2d_eps: 0.1,
        floor_eps: 1e-4,
        n_iterations: 30,
        eval_every: 1,
        train_steps_per_task: 2,
        n_eval: 512,
        seed,
        ..Default::default()
    };

    let mut curves = Vec::new();
    for schedule in [Schedule::RandomOrder, Schedule::Teacher] {
        let tc = TrainingConfig {
            batch_size: 16,
            reward_exponent: 16.0,
            seed,
            ..Default::default()
        };
        let model = MlpPolicy::new(
            MlpConfig {
                hidden: 32,
                max_len: 12,
            },
            seed,
        );
        let mut student = GflowStudent::new(Trainer::new(model, tc)?, Objectives::default());
        curves.push(run_curriculum(&tasks, &mut student, &cfg, schedule)?);
    }
    let (random, teacher) = (&curves[0], &curves[1]);
    println!("round  random  teacher  P(short)");
    for (i, (r, t)) in random
        .mean_metric()
        .iter()
        .zip(teacher.mean_metric())
        .enumerate()
    {
        println!(
            "{:>5}  {r:.4}  {t:.4}   {:.2}",
            i + 1,
            teacher.trace[2 * i].p
        );
    }
    let threshold = random.mean_metric()[19];
    println!(
        "threshold {threshold:.4}: random round {:?}, teacher round {:?}",
        random.rounds_to(threshold),
        teacher.rounds_to(threshold)
    );
    Ok(())
}
