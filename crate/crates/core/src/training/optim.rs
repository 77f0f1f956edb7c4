use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - beta2.powi(self.step.min(i32::MAX as u64) as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

/// Reduce-on-plateau in relative mode: a loss counts as an improvement when
/// it is below `best·(1 − threshold)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: u64,
    pub threshold: f64,
    pub cooldown: u64,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 10_000,
            threshold: 0.5,
            cooldown: 0,
            min_lr: 0.0,
        }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::config(
                "training.plateau.factor",
                "must lie in (0, 1)",
            ));
        }
        if !(self.threshold >= 0.0 && self.threshold < 1.0) {
            return Err(Error::config(
                "training.plateau.threshold",
                "must lie in [0, 1)",
            ));
        }
        if !(self.min_lr >= 0.0) {
            return Err(Error::config(
                "training.plateau.min_lr",
                "must be non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlateauState {
    pub best: f64,
    pub num_bad: u64,
    pub cooldown_left: u64,
}

impl Default for PlateauState {
    fn default() -> Self {
        Self {
            best: f64::INFINITY,
            num_bad: 0,
            cooldown_left: 0,
        }
    }
}

impl PlateauState {
    /// Feed one loss value; returns the learning rate to use next.
    /// A reduction happens once `patience` consecutive non-improving values
    /// have been seen outside cooldown.
    pub fn step(&mut self, config: &PlateauConfig, loss: f64, lr: f64) -> f64 {
        if loss < self.best * (1.0 - config.threshold) {
            self.best = loss;
            self.num_bad = 0;
        } else {
            self.num_bad += 1;
        }
        if self.cooldown_left > 0 {
            self.cooldown_left -= 1;
            self.num_bad = 0;
        }
        if self.num_bad >= config.patience && self.num_bad > 0 {
            self.num_bad = 0;
            self.cooldown_left = config.cooldown;
            return (lr * config.factor).max(config.min_lr);
        }
        lr
    }
}

/// Trailing moving average over a fixed window.
#[derive(Clone, Debug, PartialEq)]
pub struct MovingAverage {
    pub window: usize,
    pub values: VecDeque<f64>,
    pub sum: f64,
    /// Pushes since the sum was last recomputed from scratch.
    pub since_resum: usize,
}

impl MovingAverage {
    pub fn new(window: usize) -> Self {
        let window = window.max(1);
        Self {
            window,
            values: VecDeque::with_capacity(window),
            sum: 0.0,
            since_resum: 0,
        }
    }

    pub fn push(&mut self, v: f64) -> f64 {
        if self.values.len() == self.window {
            let old = self.values.pop_front().unwrap();
            self.sum -= old;
        }
        self.values.push_back(v);
        self.sum += v;
        self.since_resum += 1;
        // bound the drift of the running sum
        if self.since_resum >= self.window {
            self.sum = self.values.iter().sum();
            self.since_resum = 0;
        }
        self.mean()
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            f64::NAN
        } else {
            self.sum / self.values.len() as f64
        }
    }
}
