//! Teacher-student curriculum over protein-length tasks.
//!
//! A [`Teacher`] tracks one metric history per task, turns the histories
//! into learning-progress estimates, maps those to attention and finally to
//! a task-sampling distribution. [`run_curriculum`] drives any [`Student`]
//! with it, or with one of the fixed baseline schedules.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::CodonDesignEnv;
use crate::error::{Error, Result};
use crate::genetic_code::Protein;
use crate::objectives::{Objectives, WeightVector};
use crate::policy::FlowModel;
use crate::training::{sample_from, IterationRecord, Trainer};

/// Default length intervals, in amino acids.
pub const DEFAULT_INTERVALS: [(usize, usize); 5] =
    [(25, 40), (45, 60), (65, 80), (85, 120), (125, 180)];

pub const SHORT_RANGE: (usize, usize) = (30, 60);
pub const LONG_RANGE: (usize, usize) = (125, 180);

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub lo: usize,
    pub hi: usize,
    pub pool: Vec<Protein>,
    /// Fixed protein used for evaluation when resampling is off.
    pub eval_protein: Protein,
}

impl Task {
    pub fn new(lo: usize, hi: usize, pool: Vec<Protein>) -> Result<Task> {
        if lo > hi {
            return Err(Error::Config(format!(
                "task interval [{lo}, {hi}] is empty"
            )));
        }
        if let Some(p) = pool.iter().find(|p| p.len() < lo || p.len() > hi) {
            return Err(Error::Config(format!(
                "protein of length {} outside task [{lo}, {hi}]",
                p.len()
            )));
        }
        let eval_protein = pool
            .first()
            .cloned()
            .ok_or_else(|| Error::Config(format!("task [{lo}, {hi}] has no proteins")))?;
        Ok(Task {
            lo,
            hi,
            pool,
            eval_protein,
        })
    }

    pub fn contains(&self, len: usize) -> bool {
        (self.lo..=self.hi).contains(&len)
    }
}

pub fn default_intervals() -> Vec<(usize, usize)> {
    DEFAULT_INTERVALS.to_vec()
}

/// Index of the interval containing `len`.
pub fn bin_length(len: usize, intervals: &[(usize, usize)]) -> Option<usize> {
    intervals
        .iter()
        .position(|&(lo, hi)| (lo..=hi).contains(&len))
}

/// Bins proteins into tasks by length. Proteins outside every interval are
/// dropped; an interval left empty is an error.
pub fn build_tasks(intervals: &[(usize, usize)], proteins: &[Protein]) -> Result<Vec<Task>> {
    if intervals.is_empty() {
        return Err(Error::Config("no curriculum tasks".into()));
    }
    let mut pools = vec![Vec::new(); intervals.len()];
    for p in proteins {
        if let Some(i) = bin_length(p.len(), intervals) {
            pools[i].push(p.clone());
        }
    }
    intervals
        .iter()
        .zip(pools)
        .map(|(&(lo, hi), pool)| Task::new(lo, hi, pool))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpeKind {
    Online,
    Sampling,
    Linreg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AcpKind {
    #[serde(rename = "LP")]
    Lp,
    #[serde(rename = "MR")]
    Mr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum A2dKind {
    Prop,
    GreedyProp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Conservative,
    Aggressive,
    Balanced,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Preset> {
        match s {
            "conservative" => Ok(Preset::Conservative),
            "aggressive" => Ok(Preset::Aggressive),
            "balanced" => Ok(Preset::Balanced),
            other => Err(Error::Config(format!(
                "unknown curriculum preset `{other}` (expected conservative, aggressive or balanced)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    pub lpe: LpeKind,
    /// History window of the Sampling and Linreg estimators.
    pub lpe_k: usize,
    /// EMA smoothing of the Online estimator.
    pub lpe_alpha: f64,
    pub acp: AcpKind,
    pub acp_mr_k: usize,
    pub acp_mr_power: f64,
    pub acp_mr_pot_prop: f64,
    pub acp_mr_att_pred: f64,
    pub acp_mr_att_succ: f64,
    pub a2d: A2dKind,
    pub a2d_eps: f64,
    /// Additive floor on attention before normalizing.
    pub floor_eps: f64,
    pub n_iterations: usize,
    pub eval_every: usize,
    pub train_steps_per_task: usize,
    pub w_eval: WeightVector,
    pub n_eval: usize,
    /// Draw a fresh evaluation protein from each pool every round.
    pub resample_eval_protein: bool,
    pub seed: u64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            lpe: LpeKind::Online,
            lpe_k: 10,
            lpe_alpha: 0.05,
            acp: AcpKind::Lp,
            acp_mr_k: 25,
            acp_mr_power: 2.0,
            acp_mr_pot_prop: 0.4,
            acp_mr_att_pred: 0.1,
            acp_mr_att_succ: 0.05,
            a2d: A2dKind::GreedyProp,
            a2d_eps: 0.15,
            floor_eps: 0.01,
            n_iterations: 100,
            eval_every: 5,
            train_steps_per_task: 200,
            w_eval: WeightVector::uniform(),
            n_eval: 100,
            resample_eval_protein: false,
            seed: 0,
        }
    }
}

impl CurriculumConfig {
    /// Named teacher settings; schedule fields keep their defaults.
    pub fn preset(p: Preset) -> CurriculumConfig {
        let base = CurriculumConfig::default();
        match p {
            Preset::Conservative => base,
            Preset::Aggressive => CurriculumConfig {
                lpe: LpeKind::Sampling,
                lpe_k: 10,
                acp: AcpKind::Mr,
                acp_mr_power: 8.0,
                acp_mr_pot_prop: 0.8,
                ..base
            },
            Preset::Balanced => CurriculumConfig {
                lpe: LpeKind::Linreg,
                lpe_k: 25,
                acp: AcpKind::Mr,
                acp_mr_power: 4.0,
                acp_mr_pot_prop: 0.6,
                a2d: A2dKind::Prop,
                a2d_eps: 0.0,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lpe_alpha > 0.0 && self.lpe_alpha <= 1.0) {
            return bad(format!("lpe_alpha {} outside (0, 1]", self.lpe_alpha));
        }
        if self.lpe != LpeKind::Online && self.lpe_k < 2 {
            return bad(format!("lpe_k {} must be at least 2", self.lpe_k));
        }
        if self.acp_mr_k == 0 || !(self.acp_mr_power >= 0.0) {
            return bad("acp_MR_K must be positive and acp_MR_power non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.acp_mr_pot_prop) {
            return bad(format!(
                "acp_MR_pot_prop {} outside [0, 1]",
                self.acp_mr_pot_prop
            ));
        }
        if !(self.acp_mr_att_pred >= 0.0 && self.acp_mr_att_succ >= 0.0) {
            return bad("MR neighbour weights must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.a2d_eps) {
            return bad(format!("a2d_eps {} outside [0, 1]", self.a2d_eps));
        }
        if !(self.floor_eps >= 0.0) {
            return bad(format!("floor_eps {} must be non-negative", self.floor_eps));
        }
        if self.eval_every == 0 || self.n_eval == 0 {
            return bad("eval_every and n_eval must be positive".into());
        }
        Ok(())
    }
}

/// `(1 - beta) * lp + beta * delta_m`.
pub fn update_lp_online(lp: f64, delta_m: f64, beta: f64) -> f64 {
    (1.0 - beta) * lp + beta * delta_m
}

/// Window estimators over a metric history. Fewer than two points give 0.
pub fn estimate_lp(history: &[f64], kind: LpeKind, k: usize) -> f64 {
    if history.len() < 2 {
        return 0.0;
    }
    match kind {
        LpeKind::Sampling | LpeKind::Online => {
            // K successive differences span K + 1 points
            let window = &history[history.len().saturating_sub(k.max(1) + 1)..];
            let diffs: Vec<f64> = window.windows(2).map(|w| w[1] - w[0]).collect();
            diffs.iter().sum::<f64>() / diffs.len() as f64
        }
        LpeKind::Linreg => {
            let window = &history[history.len().saturating_sub(k.max(2))..];
            let n = window.len() as f64;
            let x_mean = (n - 1.0) / 2.0;
            let y_mean = window.iter().sum::<f64>() / n;
            let (mut sxy, mut sxx) = (0.0, 0.0);
            for (i, y) in window.iter().enumerate() {
                let dx = i as f64 - x_mean;
                sxy += dx * (y - y_mean);
                sxx += dx * dx;
            }
            sxy / sxx
        }
    }
}

/// Position of the latest metric between the window's min and max.
pub fn mastering_rate(history: &[f64], k: usize) -> f64 {
    let Some(&last) = history.last() else {
        return 0.0;
    };
    let window = &history[history.len().saturating_sub(k)..];
    let lo = window.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        ((last - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Attention from learning progress, or mastering-rate attention with
/// neighbour terms along the length-ordered task chain.
pub fn attention(lp: &[f64], histories: &[Vec<f64>], cfg: &CurriculumConfig) -> Vec<f64> {
    match cfg.acp {
        AcpKind::Lp => lp.iter().map(|v| v.max(0.0)).collect(),
        AcpKind::Mr => {
            let masteries: Vec<f64> = histories
                .iter()
                .map(|h| mastering_rate(h, cfg.acp_mr_k))
                .collect();
            mr_attention(lp, &masteries, cfg)
        }
    }
}

/// Mastering-rate attention for explicit mastery values.
pub fn mr_attention(lp: &[f64], mastery: &[f64], cfg: &CurriculumConfig) -> Vec<f64> {
    let base: Vec<f64> = lp
        .iter()
        .zip(mastery)
        .map(|(l, m)| {
            cfg.acp_mr_pot_prop * m.powf(cfg.acp_mr_power) * (1.0 - m)
                + (1.0 - cfg.acp_mr_pot_prop) * l.max(0.0)
        })
        .collect();
    let n = base.len();
    (0..n)
        .map(|i| {
            let pred = if i > 0 { base[i - 1] } else { 0.0 };
            let succ = if i + 1 < n { base[i + 1] } else { 0.0 };
            base[i] + cfg.acp_mr_att_pred * pred + cfg.acp_mr_att_succ * succ
        })
        .collect()
}

/// Sampling distribution from attention.
pub fn to_distribution(attention: &[f64], cfg: &CurriculumConfig) -> Result<Vec<f64>> {
    let raw: Vec<f64> = attention
        .iter()
        .map(|a| a.max(0.0) + cfg.floor_eps)
        .collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Config(
            "attention is zero everywhere and the floor is 0".into(),
        ));
    }
    let prop = raw.iter().map(|r| r / total);
    Ok(match cfg.a2d {
        A2dKind::Prop => prop.collect(),
        A2dKind::GreedyProp => {
            let u = cfg.a2d_eps / attention.len() as f64;
            prop.map(|p| (1.0 - cfg.a2d_eps) * p + u).collect()
        }
    })
}

/// Per-task record of one evaluation round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherRow {
    pub round: usize,
    pub task_id: usize,
    pub m: f64,
    pub delta_m: f64,
    #[serde(rename = "LP")]
    pub lp: f64,
    #[serde(rename = "P")]
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    pub config: CurriculumConfig,
    pub lp: Vec<f64>,
    pub histories: Vec<Vec<f64>>,
    pub p: Vec<f64>,
    pub round: usize,
}

impl Teacher {
    pub fn new(n_tasks: usize, config: CurriculumConfig) -> Result<Teacher> {
        config.validate()?;
        if n_tasks == 0 {
            return Err(Error::Config("no curriculum tasks".into()));
        }
        Ok(Teacher {
            config,
            lp: vec![0.0; n_tasks],
            histories: vec![Vec::new(); n_tasks],
            p: vec![1.0 / n_tasks as f64; n_tasks],
            round: 0,
        })
    }

    /// Ingests one metric per task and recomputes the distribution.
    pub fn observe(&mut self, metrics: &[f64]) -> Result<Vec<TeacherRow>> {
        if metrics.len() != self.lp.len() {
            return Err(Error::Invariant(format!(
                "{} metrics for {} tasks",
                metrics.len(),
                self.lp.len()
            )));
        }
        self.round += 1;
        let mut deltas = Vec::with_capacity(metrics.len());
        for (j, &m) in metrics.iter().enumerate() {
            let prev = self.histories[j].last().copied().unwrap_or(0.0);
            let delta = m - prev;
            self.histories[j].push(m);
            self.lp[j] = match self.config.lpe {
                LpeKind::Online => update_lp_online(self.lp[j], delta, self.config.lpe_alpha),
                kind => estimate_lp(&self.histories[j], kind, self.config.lpe_k),
            };
            deltas.push(delta);
        }
        let att = attention(&self.lp, &self.histories, &self.config);
        self.p = to_distribution(&att, &self.config)?;
        Ok((0..metrics.len())
            .map(|j| TeacherRow {
                round: self.round,
                task_id: j,
                m: metrics[j],
                delta_m: deltas[j],
                lp: self.lp[j],
                p: self.p[j],
            })
            .collect())
    }

    pub fn sample_task<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.p, rng)
    }
}

fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Anything the teacher can train and evaluate.
pub trait Student {
    fn train_on(&mut self, task: usize, protein: &Protein, steps: usize) -> Result<()>;

    /// Mean terminal reward of `n_eval` exploration-free samples.
    fn evaluate(
        &mut self,
        task: usize,
        protein: &Protein,
        w: &WeightVector,
        n_eval: usize,
        seed: u64,
    ) -> Result<f64>;
}

/// A shared conditional policy trained with its own optimizer.
pub struct GflowStudent<M> {
    pub trainer: Trainer<M>,
    pub objectives: Objectives,
    pub loss_trace: Vec<IterationRecord>,
}

impl<M: FlowModel> GflowStudent<M> {
    pub fn new(trainer: Trainer<M>, objectives: Objectives) -> GflowStudent<M> {
        GflowStudent {
            trainer,
            objectives,
            loss_trace: Vec::new(),
        }
    }
}

impl<M: FlowModel> Student for GflowStudent<M> {
    fn train_on(&mut self, _task: usize, protein: &Protein, steps: usize) -> Result<()> {
        let env = CodonDesignEnv::new(protein.clone());
        for _ in 0..steps {
            let rec = self.trainer.step(&env, &self.objectives)?;
            self.loss_trace.push(rec);
        }
        Ok(())
    }

    fn evaluate(
        &mut self,
        _task: usize,
        protein: &Protein,
        w: &WeightVector,
        n_eval: usize,
        seed: u64,
    ) -> Result<f64> {
        let env = CodonDesignEnv::new(protein.clone());
        let designs = sample_from(&env, &self.trainer.model, *w, n_eval, seed)?;
        let mut total = 0.0;
        for x in &designs {
            total += self.objectives.reward(x, w)?;
        }
        Ok(total / n_eval as f64)
    }
}

/// Which tasks the student trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Sample tasks from the teacher's distribution.
    Teacher,
    /// Uniform over task pools.
    RandomOrder,
    /// Only proteins with `30 <= L <= 60`.
    ShortOnly,
    /// Only proteins with `125 <= L <= 180`.
    LongOnly,
}

/// Proteins a length-restricted schedule draws from.
fn range_pool(tasks: &[Task], (lo, hi): (usize, usize)) -> Result<Vec<Protein>> {
    let pool: Vec<Protein> = tasks
        .iter()
        .flat_map(|t| t.pool.iter())
        .filter(|p| (lo..=hi).contains(&p.len()))
        .cloned()
        .collect();
    if pool.is_empty() {
        return Err(Error::Config(format!(
            "no proteins with length in [{lo}, {hi}]"
        )));
    }
    Ok(pool)
}

/// Draws `(task index, protein)` pairs for a schedule.
pub struct TaskSampler {
    schedule: Schedule,
    restricted: Vec<Protein>,
}

impl TaskSampler {
    pub fn new(schedule: Schedule, tasks: &[Task]) -> Result<TaskSampler> {
        let restricted = match schedule {
            Schedule::ShortOnly => range_pool(tasks, SHORT_RANGE)?,
            Schedule::LongOnly => range_pool(tasks, LONG_RANGE)?,
            _ => Vec::new(),
        };
        Ok(TaskSampler {
            schedule,
            restricted,
        })
    }

    pub fn draw<R: Rng + ?Sized>(
        &self,
        tasks: &[Task],
        teacher: &Teacher,
        rng: &mut R,
    ) -> (Option<usize>, Protein) {
        let from_task = |k: usize, rng: &mut R| {
            let pool = &tasks[k].pool;
            (Some(k), pool[rng.random_range(0..pool.len())].clone())
        };
        match self.schedule {
            Schedule::Teacher => {
                let k = teacher.sample_task(rng);
                from_task(k, rng)
            }
            Schedule::RandomOrder => {
                let k = rng.random_range(0..tasks.len());
                from_task(k, rng)
            }
            Schedule::ShortOnly | Schedule::LongOnly => {
                let p = self.restricted[rng.random_range(0..self.restricted.len())].clone();
                (tasks.iter().position(|t| t.contains(p.len())), p)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumRun {
    pub trace: Vec<TeacherRow>,
    /// Task trained at each outer iteration (`None` outside every task).
    pub chosen: Vec<Option<usize>>,
    /// Per-round metrics, one vector per evaluation round.
    pub metrics: Vec<Vec<f64>>,
}

impl CurriculumRun {
    /// Mean over tasks of each round's metrics.
    pub fn mean_metric(&self) -> Vec<f64> {
        self.metrics
            .iter()
            .map(|m| m.iter().sum::<f64>() / m.len() as f64)
            .collect()
    }

    /// First round (1-based) whose mean metric reaches `threshold`.
    pub fn rounds_to(&self, threshold: f64) -> Option<usize> {
        self.mean_metric()
            .iter()
            .position(|m| *m >= threshold)
            .map(|i| i + 1)
    }
}

/// Evaluation streams depend on the task only, so successive rounds reuse
/// the same random numbers and metric differences reflect the policy.
fn eval_seed(seed: u64, task: usize) -> u64 {
    seed ^ 0xE7A1_0000_0000_0000 ^ (task as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs `cfg.n_iterations` outer iterations of `schedule`, evaluating every
/// task each `cfg.eval_every` iterations and updating the teacher.
pub fn run_curriculum<S: Student + ?Sized>(
    tasks: &[Task],
    student: &mut S,
    cfg: &CurriculumConfig,
    schedule: Schedule,
) -> Result<CurriculumRun> {
    let mut teacher = Teacher::new(tasks.len(), cfg.clone())?;
    let sampler = TaskSampler::new(schedule, tasks)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut run = CurriculumRun {
        trace: Vec::new(),
        chosen: Vec::new(),
        metrics: Vec::new(),
    };
    for i in 1..=cfg.n_iterations {
        let (k, protein) = sampler.draw(tasks, &teacher, &mut rng);
        run.chosen.push(k);
        student.train_on(k.unwrap_or(usize::MAX), &protein, cfg.train_steps_per_task)?;
        if i % cfg.eval_every == 0 {
            let mut m = Vec::with_capacity(tasks.len());
            for (j, task) in tasks.iter().enumerate() {
                let p = if cfg.resample_eval_protein {
                    task.pool[rng.random_range(0..task.pool.len())].clone()
                } else {
                    task.eval_protein.clone()
                };
                m.push(student.evaluate(j, &p, &cfg.w_eval, cfg.n_eval, eval_seed(cfg.seed, j))?);
            }
            run.trace.extend(teacher.observe(&m)?);
            run.metrics.push(m);
        }
    }
    Ok(run)
}

pub fn write_teacher_trace<W: Write>(rows: &[TeacherRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn protein_of_len(n: usize) -> Protein {
        Protein::parse(&"A".repeat(n)).unwrap()
    }

    #[test]
    fn default_intervals_and_binning() {
        let iv = default_intervals();
        assert_eq!(iv.len(), 5);
        assert_eq!(iv[0], (25, 40));
        for w in iv.windows(2) {
            assert!(w[0].1 < w[1].0);
        }
        assert_eq!(bin_length(50, &iv), Some(1));
        assert_eq!(bin_length(42, &iv), None);
        let ps: Vec<Protein> = [30, 50, 70, 100, 150]
            .iter()
            .map(|&n| protein_of_len(n))
            .collect();
        assert_eq!(build_tasks(&iv, &ps).unwrap().len(), 5);
        assert!(matches!(build_tasks(&iv, &ps[..4]), Err(Error::Config(_))));
    }

    #[test]
    fn online_examples() {
        assert!((update_lp_online(0.0, 1.0, 0.1) - 0.1).abs() < 1e-15);
        assert!((update_lp_online(0.2, -0.1, 0.05) - 0.185).abs() < 1e-15);
        let mut lp = 1.0;
        for t in 1..=50 {
            lp = update_lp_online(lp, 0.0, 0.1);
            assert!((lp - 0.9f64.powi(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn window_estimators() {
        assert!((estimate_lp(&[0.0, 0.1, 0.2, 0.3], LpeKind::Linreg, 4) - 0.1).abs() < 1e-12);
        assert!((estimate_lp(&[0.0, 0.2, 0.1], LpeKind::Sampling, 2) - 0.05).abs() < 1e-12);
        for kind in [LpeKind::Sampling, LpeKind::Linreg] {
            assert_eq!(estimate_lp(&[0.4; 6], kind, 5), 0.0);
            assert_eq!(estimate_lp(&[0.4], kind, 5), 0.0);
        }
        // only the last K points count
        assert!((estimate_lp(&[5.0, 0.0, 0.1, 0.2], LpeKind::Linreg, 3) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn attention_examples() {
        let cfg = CurriculumConfig::default();
        assert_eq!(attention(&[0.2, -0.3], &[vec![], vec![]], &cfg), [0.2, 0.0]);
        let mr = CurriculumConfig {
            acp: AcpKind::Mr,
            acp_mr_power: 2.0,
            acp_mr_pot_prop: 1.0,
            acp_mr_att_pred: 0.0,
            acp_mr_att_succ: 0.0,
            ..cfg.clone()
        };
        let a = mr_attention(&[0.3, 0.3, 0.3], &[0.0, 0.5, 1.0], &mr);
        assert_eq!(a, [0.0, 0.125, 0.0]);
        let a = mr_attention(&[0.0; 3], &[1.0; 3], &mr);
        assert_eq!(a, [0.0; 3]);
        let neigh = CurriculumConfig {
            acp_mr_att_pred: 0.1,
            acp_mr_att_succ: 0.05,
            ..mr
        };
        let a = mr_attention(&[0.0; 3], &[0.0, 0.5, 0.0], &neigh);
        assert!((a[0] - 0.05 * 0.125).abs() < 1e-15);
        assert!((a[2] - 0.1 * 0.125).abs() < 1e-15);
        assert!((mastering_rate(&[0.1, 0.5, 0.3], 25) - 0.5).abs() < 1e-12);
        assert_eq!(mastering_rate(&[0.1, 0.5, 0.3], 2), 0.0);
    }

    #[test]
    fn distribution_examples() {
        let prop = CurriculumConfig {
            a2d: A2dKind::Prop,
            ..Default::default()
        };
        let p = to_distribution(&[0.0; 4], &prop).unwrap();
        assert!(p.iter().all(|v| (*v - 0.25).abs() < 1e-15));
        let att = attention(&[0.2, 0.1, -0.3], &[vec![], vec![], vec![]], &prop);
        let p = to_distribution(&att, &prop).unwrap();
        for (got, want) in p.iter().zip([0.21 / 0.33, 0.11 / 0.33, 0.01 / 0.33]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((p[0] - 0.6364).abs() < 1e-4 && (p[2] - 0.0303).abs() < 1e-4);
        let greedy = CurriculumConfig::default();
        let p = to_distribution(&[10.0, 0.0, 0.0, 0.0, 0.0], &greedy).unwrap();
        assert!(p.iter().all(|v| *v >= 0.03));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let no_floor = CurriculumConfig {
            floor_eps: 0.0,
            a2d: A2dKind::Prop,
            ..Default::default()
        };
        assert!(matches!(
            to_distribution(&[0.0; 3], &no_floor),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn presets() {
        let c = CurriculumConfig::preset(Preset::Conservative);
        assert_eq!(
            (c.lpe, c.acp, c.a2d),
            (LpeKind::Online, AcpKind::Lp, A2dKind::GreedyProp)
        );
        assert_eq!((c.lpe_alpha, c.a2d_eps, c.acp_mr_k), (0.05, 0.15, 25));
        assert_eq!(
            (
                c.acp_mr_power,
                c.acp_mr_pot_prop,
                c.acp_mr_att_pred,
                c.acp_mr_att_succ
            ),
            (2.0, 0.4, 0.1, 0.05)
        );
        let a = CurriculumConfig::preset(Preset::Aggressive);
        assert_eq!(
            (a.lpe, a.lpe_k, a.acp, a.acp_mr_power, a.acp_mr_pot_prop),
            (LpeKind::Sampling, 10, AcpKind::Mr, 8.0, 0.8)
        );
        let b = CurriculumConfig::preset(Preset::Balanced);
        assert_eq!(
            (b.lpe, b.lpe_k, b.acp, b.acp_mr_power, b.acp_mr_pot_prop),
            (LpeKind::Linreg, 25, AcpKind::Mr, 4.0, 0.6)
        );
        assert_eq!((b.a2d, b.a2d_eps), (A2dKind::Prop, 0.0));
        assert_eq!("balanced".parse::<Preset>().unwrap(), Preset::Balanced);
        assert!("fast".parse::<Preset>().is_err());
        for p in [Preset::Conservative, Preset::Aggressive, Preset::Balanced] {
            CurriculumConfig::preset(p).validate().unwrap();
        }
    }

    #[test]
    fn teacher_starts_uniform_and_keeps_a_distribution() {
        let mut t = Teacher::new(4, CurriculumConfig::default()).unwrap();
        assert_eq!(t.p, [0.25; 4]);
        let rows = t.observe(&[0.5, 0.1, 0.2, 0.0]).unwrap();
        assert_eq!(rows[0].delta_m, 0.5);
        assert_eq!(rows.len(), 4);
        for r in 0..20 {
            t.observe(&[0.5 - 0.01 * r as f64, 0.3, 0.1 * r as f64, 0.0])
                .unwrap();
            assert!((t.p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(t.p.iter().all(|p| *p > 0.0));
        }
    }

    struct Synthetic {
        slopes: Vec<f64>,
        trained: Vec<usize>,
        rounds: usize,
    }

    impl Student for Synthetic {
        fn train_on(&mut self, task: usize, _: &Protein, _: usize) -> Result<()> {
            self.trained.push(task);
            Ok(())
        }

        fn evaluate(
            &mut self,
            task: usize,
            _: &Protein,
            _: &WeightVector,
            _: usize,
            _: u64,
        ) -> Result<f64> {
            if task == 0 {
                self.rounds += 1;
            }
            Ok(self.slopes[task] * self.rounds as f64)
        }
    }

    fn toy_tasks(n: usize) -> Vec<Task> {
        (0..n)
            .map(|i| Task::new(i + 1, i + 1, vec![protein_of_len(i + 1)]).unwrap())
            .collect()
    }

    #[test]
    fn teacher_focuses_on_improving_task() {
        let tasks = toy_tasks(5);
        let cfg = CurriculumConfig {
            lpe_alpha: 1.0,
            a2d: A2dKind::Prop,
            floor_eps: 0.01,
            n_iterations: 25,
            eval_every: 5,
            ..Default::default()
        };
        let mut s = Synthetic {
            slopes: vec![0.0, 0.0, 0.1, 0.0, 0.0],
            trained: vec![],
            rounds: 0,
        };
        let run = run_curriculum(&tasks, &mut s, &cfg, Schedule::Teacher).unwrap();
        assert_eq!(run.metrics.len(), 5);
        assert_eq!(run.trace.len(), 25);
        for row in run.trace.iter().filter(|r| r.task_id == 2) {
            assert!(row.p >= 0.7, "round {} p {}", row.round, row.p);
        }
        let last: Vec<f64> = run.trace[20..].iter().map(|r| r.p).collect();
        assert!((last[2] - 0.11 / 0.15).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_schedule() {
        let tasks = toy_tasks(3);
        let cfg = CurriculumConfig {
            n_iterations: 40,
            eval_every: 4,
            seed: 9,
            ..Default::default()
        };
        let go = || {
            let mut s = Synthetic {
                slopes: vec![0.05, 0.0, 0.02],
                trained: vec![],
                rounds: 0,
            };
            run_curriculum(&tasks, &mut s, &cfg, Schedule::Teacher).unwrap();
            s.trained
        };
        assert_eq!(go(), go());
    }

    #[test]
    fn baseline_schedules() {
        let ps: Vec<Protein> = [30, 40, 50, 60, 70, 100, 130, 150, 180]
            .iter()
            .map(|&n| protein_of_len(n))
            .collect();
        let tasks = build_tasks(&default_intervals(), &ps).unwrap();
        let teacher = Teacher::new(tasks.len(), CurriculumConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let short = TaskSampler::new(Schedule::ShortOnly, &tasks).unwrap();
        let long = TaskSampler::new(Schedule::LongOnly, &tasks).unwrap();
        let random = TaskSampler::new(Schedule::RandomOrder, &tasks).unwrap();
        for _ in 0..500 {
            let (_, p) = short.draw(&tasks, &teacher, &mut rng);
            assert!((30..=60).contains(&p.len()));
            let (_, p) = long.draw(&tasks, &teacher, &mut rng);
            assert!(p.len() >= 125);
        }
        let n = 10_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[random.draw(&tasks, &teacher, &mut rng).0.unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.2).abs() < 0.02);
        }
    }

    #[test]
    fn trace_csv_header() {
        let mut t = Teacher::new(2, CurriculumConfig::default()).unwrap();
        let rows = t.observe(&[0.1, 0.2]).unwrap();
        let mut buf = Vec::new();
        write_teacher_trace(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("round,task_id,m,delta_m,LP,P\n"));
    }
}
