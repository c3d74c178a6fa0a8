//! Adam with per-group learning rates and a linear warmup/decay schedule.

use serde::{Deserialize, Serialize};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Grads, Mat};
use super::params::{ParamGroup, ParamStore};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub encoder_lr: f64,
    pub task_lr: f64,
    pub warmup_ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub max_grad_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { encoder_lr: 1e-3, task_lr: 2e-3, warmup_ratio: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8, max_grad_norm: 1.0 }
    }
}

/// Linear warmup to 1 over the first `warmup_ratio` of steps, then linear
/// decay to 0 at `total_steps`.
#[derive(Clone, Copy, Debug)]
pub struct LinearSchedule {
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LinearSchedule {
    pub fn new(total_steps: usize, warmup_ratio: f64) -> Self {
        let warmup_steps = (total_steps as f64 * warmup_ratio).round() as usize;
        LinearSchedule { warmup_steps, total_steps: total_steps.max(1) }
    }

    /// Multiplier for the update performed at zero-based `step`.
    pub fn factor(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            (step + 1) as f64 / self.warmup_steps as f64
        } else {
            let remaining = self.total_steps.saturating_sub(step) as f64;
            let span = (self.total_steps - self.warmup_steps).max(1) as f64;
            (remaining / span).clamp(0.0, 1.0)
        }
    }
}

pub struct Adam {
    cfg: OptimizerConfig,
    schedule: LinearSchedule,
    step: usize,
    first: Vec<Option<Mat>>,
    second: Vec<Option<Mat>>,
}

impl Adam {
    pub fn new(cfg: OptimizerConfig, store: &ParamStore, total_steps: usize) -> Self {
        let schedule = LinearSchedule::new(total_steps, cfg.warmup_ratio);
        Adam { cfg, schedule, step: 0, first: vec![None; store.len()], second: vec![None; store.len()] }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn current_factor(&self) -> f64 {
        self.schedule.factor(self.step)
    }

    /// Applies one update. Returns the gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore, mut grads: Grads) -> f64 {
        let norm = grads.global_norm();
        if self.cfg.max_grad_norm > 0.0 && norm > self.cfg.max_grad_norm {
            grads.scale(self.cfg.max_grad_norm / norm);
        }
        let factor = self.schedule.factor(self.step);
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (id, g) in ids.into_iter().zip(grads.by_param) {
            let Some(g) = g else { continue };
            let lr = factor
                * match store.group(id) {
                    ParamGroup::Encoder => self.cfg.encoder_lr,
                    ParamGroup::Task => self.cfg.task_lr,
                };
            let i = id.index();
            let m = self.first[i].get_or_insert_with(|| Mat::zeros(g.dim()));
            let v = self.second[i].get_or_insert_with(|| Mat::zeros(g.dim()));
            let p = store.value_mut(id);
            let eps = self.cfg.eps;
            ndarray::Zip::from(p).and(m).and(v).and(&g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= lr * mh / (vh.sqrt() + eps);
            });
        }
        norm
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { epochs: 10, batch_size: 8, seed: 13, optimizer: OptimizerConfig::default() }
    }
}

impl TrainOptions {
    pub fn total_steps(&self, examples: usize) -> usize {
        self.epochs * examples.div_ceil(self.batch_size.max(1))
    }

    /// Example order for one epoch, reproducible from the seed.
    pub fn epoch_order(&self, examples: usize, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..examples).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(1_000_003).wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        order
    }
}

/// One pass of minibatch updates over `order`. `example` returns loss
/// components and gradients for one example, or `None` to skip it;
/// gradients are averaged within each batch. Returns the mean of each loss
/// component over visited examples.
pub fn run_epoch<F>(store: &mut ParamStore, adam: &mut Adam, order: &[usize], batch_size: usize, mut example: F) -> Result<Vec<f64>>
where
    F: FnMut(&ParamStore, usize) -> Result<Option<(Vec<f64>, Grads)>>,
{
    let mut total: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for chunk in order.chunks(batch_size.max(1)) {
        let mut acc: Option<Grads> = None;
        let mut k = 0usize;
        for &i in chunk {
            if let Some((parts, grads)) = example(store, i)? {
                total.resize(parts.len().max(total.len()), 0.0);
                for (t, v) in total.iter_mut().zip(parts) {
                    *t += v;
                }
                count += 1;
                k += 1;
                match acc.as_mut() {
                    Some(a) => a.accumulate(grads),
                    None => acc = Some(grads),
                }
            }
        }
        if let Some(mut grads) = acc {
            grads.scale(1.0 / k as f64);
            adam.step(store, grads);
        }
    }
    Ok(total.into_iter().map(|t| t / count.max(1) as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays() {
        let s = LinearSchedule::new(100, 0.1);
        assert_eq!(s.warmup_steps, 10);
        assert!((s.factor(0) - 0.1).abs() < 1e-12);
        assert!((s.factor(9) - 1.0).abs() < 1e-12);
        assert!((s.factor(10) - 1.0).abs() < 1e-12);
        assert!((s.factor(55) - 0.5).abs() < 1e-12);
        assert!(s.factor(99) > 0.0);
        assert_eq!(s.factor(100), 0.0);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        use super::super::graph::Graph;
        use super::super::params::Init;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let x = store.add("x", ParamGroup::Task, (1, 3), Init::Constant(2.0), &mut rng);
        let cfg = OptimizerConfig { task_lr: 0.1, warmup_ratio: 0.0, max_grad_norm: 0.0, ..Default::default() };
        let mut opt = Adam::new(cfg, &store, 300);
        for _ in 0..300 {
            let grads = {
                let mut g = Graph::new(&store);
                let p = g.param(x);
                let sq = g.mul(p, p);
                let l = g.sum(sq);
                g.backward(l)
            };
            opt.step(&mut store, grads);
        }
        assert!(store.value(x).iter().all(|v| v.abs() < 1e-2), "{:?}", store.value(x));
    }
}
