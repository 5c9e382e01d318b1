//! Adam with per-group learning rates and a reduce-on-plateau schedule.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamGroup, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub lr_logz: f64,
    pub lr_patience: u32,
    pub lr_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 5e-3,
            lr_logz: 0.1,
            lr_patience: 10,
            lr_factor: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr_logz > 0.0
            && self.lr_factor > 0.0
            && self.lr_factor <= 1.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

/// Multiplies the learning rate by `factor` once `patience` consecutive
/// observations fail to improve on the best seen so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    patience: u32,
    factor: f64,
    best: Option<f64>,
    bad_steps: u32,
    scale: f64,
    reductions: u32,
}

impl PlateauScheduler {
    pub fn new(patience: u32, factor: f64) -> PlateauScheduler {
        PlateauScheduler {
            patience,
            factor,
            best: None,
            bad_steps: 0,
            scale: 1.0,
            reductions: 0,
        }
    }

    /// Records one metric value (lower is better). Returns true if the rate was reduced.
    pub fn observe(&mut self, metric: f64) -> bool {
        match self.best {
            Some(best) if !(metric < best - 1e-4 * best.abs()) => {
                self.bad_steps += 1;
                if self.bad_steps >= self.patience {
                    self.scale *= self.factor;
                    self.bad_steps = 0;
                    self.reductions += 1;
                    return true;
                }
            }
            _ => {
                self.best = Some(metric);
                self.bad_steps = 0;
            }
        }
        false
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn reductions(&self) -> u32 {
        self.reductions
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    config: OptimizerConfig,
    m: ParamStore,
    v: ParamStore,
    step: u64,
    scheduler: PlateauScheduler,
}

impl Adam {
    pub fn new(params: &ParamStore, config: OptimizerConfig) -> Adam {
        let mut m = params.clone();
        for t in m.tensors_mut() {
            t.fill(0.0);
        }
        Adam {
            v: m.clone(),
            m,
            step: 0,
            scheduler: PlateauScheduler::new(config.lr_patience, config.lr_factor),
            config,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Current learning rate of a group after scheduling.
    pub fn learning_rate(&self, group: ParamGroup) -> f64 {
        let base = match group {
            ParamGroup::Network => self.config.lr,
            ParamGroup::LogZ => self.config.lr_logz,
        };
        base * self.scheduler.scale()
    }

    pub fn scheduler(&self) -> &PlateauScheduler {
        &self.scheduler
    }

    /// Feeds a loss value to the plateau scheduler.
    pub fn observe(&mut self, loss: f64) -> bool {
        self.scheduler.observe(loss)
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.0.len() != params.len() {
            return Err(Error::Invariant(format!(
                "{} gradient tensors for {} parameters",
                grads.0.len(),
                params.len()
            )));
        }
        if let Some(i) = grads
            .0
            .iter()
            .position(|g| g.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Numeric(format!(
                "non-finite gradient in parameter `{}` at step {} (gradient norm {})",
                params.name(i),
                self.step,
                grads.l2_norm()
            )));
        }
        self.step += 1;
        let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.eps);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for i in 0..params.len() {
            let lr = self.learning_rate(params.group(i));
            let g = &grads.0[i];
            let m = self.m.get_mut(i);
            m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            let v = self.v.get_mut(i);
            v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let (m, v) = (self.m.get(i), self.v.get(i));
            let p = params.get_mut(i);
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                *p -= lr * (m / c1) / ((v / c2).sqrt() + eps);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn store() -> ParamStore {
        let mut p = ParamStore::new();
        p.push("w", ParamGroup::Network, array![[1.0, -2.0]]);
        p.push("log_z", ParamGroup::LogZ, array![[0.5]]);
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = store();
        let before = p.clone();
        let mut adam = Adam::new(&p, OptimizerConfig::default());
        let zero = p.zeros_like();
        adam.step(&mut p, &zero).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_descends_with_group_rates() {
        let mut p = store();
        let mut adam = Adam::new(&p, OptimizerConfig::default());
        let g = Gradients(vec![array![[0.3, -4.0]], array![[2.0]]]);
        adam.step(&mut p, &g).unwrap();
        // bias-corrected first Adam step has magnitude ~lr
        assert!((p.get(0)[[0, 0]] - (1.0 - 5e-3)).abs() < 1e-6);
        assert!((p.get(0)[[0, 1]] - (-2.0 + 5e-3)).abs() < 1e-6);
        assert!((p.get(1)[[0, 0]] - (0.5 - 0.1)).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = store();
        let mut adam = Adam::new(&p, OptimizerConfig::default());
        let g = Gradients(vec![array![[f64::NAN, 0.0]], Array2::zeros((1, 1))]);
        let err = adam.step(&mut p, &g).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("`w`")));
        assert_eq!(p, store());
    }

    #[test]
    fn plateau_trace() {
        let mut s = PlateauScheduler::new(10, 0.5);
        assert!(!s.observe(1.0));
        for i in 0..9 {
            assert!(!s.observe(1.0), "eval {i}");
            assert_eq!(s.scale(), 1.0);
        }
        assert!(s.observe(1.0));
        assert_eq!(s.scale(), 0.5);
        // improvement resets the counter
        assert!(!s.observe(0.5));
        for _ in 0..9 {
            s.observe(0.7);
        }
        assert_eq!(s.scale(), 0.5);
        s.observe(0.7);
        assert_eq!(s.scale(), 0.25);
        assert_eq!(s.reductions(), 2);
    }

    #[test]
    fn scheduler_scales_both_groups() {
        let p = store();
        let mut adam = Adam::new(
            &p,
            OptimizerConfig {
                lr_patience: 1,
                ..Default::default()
            },
        );
        adam.observe(1.0);
        adam.observe(2.0);
        assert_eq!(adam.learning_rate(ParamGroup::Network), 2.5e-3);
        assert_eq!(adam.learning_rate(ParamGroup::LogZ), 0.05);
    }

    #[test]
    fn serde_round_trip() {
        let mut p = store();
        let mut adam = Adam::new(&p, OptimizerConfig::default());
        adam.step(&mut p, &Gradients(vec![array![[0.1, 0.2]], array![[0.3]]]))
            .unwrap();
        let json = serde_json::to_string(&adam).unwrap();
        let back: Adam = serde_json::from_str(&json).unwrap();
        assert_eq!(back, adam);
    }
}
