//! Training-loop machinery: Adam, an exponential moving average of the
//! weights, and a reduce-on-plateau learning-rate scheduler.
//!
//! Update arithmetic runs in `f64` even though parameters and optimizer
//! state are stored as `f32`, so results do not depend on how intermediate
//! expressions happen to round.

use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam optimizer with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f32>,
    v: Vec<f32>,
    step: u64,
}

impl Adam {
    pub fn new(param_count: usize) -> Self {
        Self::with_config(param_count, AdamConfig::default())
    }

    pub fn with_config(param_count: usize, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
        }
    }

    /// Completed update count.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. Rejects non-finite gradients and updates
    /// that would make a parameter non-finite, leaving `params` untouched in
    /// either case.
    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Config(format!(
                "optimizer sized for {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite gradient at step {}",
                self.step + 1
            )));
        }

        let t = self.step + 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(t as i32);
        let mut new_params = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let g = grads[i] as f64;
            let m = self.cfg.beta1 * self.m[i] as f64 + (1.0 - self.cfg.beta1) * g;
            let v = self.cfg.beta2 * self.v[i] as f64 + (1.0 - self.cfg.beta2) * g * g;
            self.m[i] = m as f32;
            self.v[i] = v as f32;
            let update = lr * (m / bc1) / ((v / bc2).sqrt() + self.cfg.eps);
            new_params.push((params[i] as f64 - update) as f32);
        }
        if new_params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training(format!("non-finite parameter at step {t}")));
        }
        params.copy_from_slice(&new_params);
        self.step = t;
        Ok(())
    }
}

/// Exponential moving average of the weights, started part-way into
/// training by copying the live parameters.
#[derive(Debug, Clone)]
pub struct Ema {
    decay: f64,
    start_step: u64,
    shadow: Option<Vec<f32>>,
}

impl Ema {
    pub fn new(decay: f64, start_step: u64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::Config(format!("EMA decay must be in (0, 1), got {decay}")));
        }
        Ok(Ema {
            decay,
            start_step,
            shadow: None,
        })
    }

    /// Folds the parameters after optimizer step `step` (1-based) into the
    /// shadow. Does nothing before the start step; the first observation
    /// copies the parameters.
    pub fn observe(&mut self, step: u64, params: &[f32]) {
        if step < self.start_step {
            return;
        }
        match &mut self.shadow {
            None => self.shadow = Some(params.to_vec()),
            Some(shadow) => blend(shadow, params, self.decay),
        }
    }

    pub fn shadow(&self) -> Option<&[f32]> {
        self.shadow.as_deref()
    }
}

/// One EMA update: `shadow = decay * shadow + (1 - decay) * params`.
pub fn blend(shadow: &mut [f32], params: &[f32], decay: f64) {
    for (s, &p) in shadow.iter_mut().zip(params) {
        *s = (decay * *s as f64 + (1.0 - decay) * p as f64) as f32;
    }
}

/// Reduce-on-plateau settings.
#[derive(Debug, Clone, Copy)]
pub struct PlateauConfig {
    /// Multiplier applied to the learning rate on a plateau.
    pub factor: f64,
    /// Consecutive non-improving checks tolerated before reducing.
    pub patience: u64,
    /// Checks ignored after a reduction.
    pub cooldown: u64,
    /// Relative improvement required to reset the counter.
    pub threshold: f64,
    /// Lower bound on the learning rate.
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            factor: 0.5,
            patience: 10,
            cooldown: 5,
            threshold: 1e-4,
            min_lr: 1e-7,
        }
    }
}

/// Halves the learning rate when a watched metric stops improving.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    cfg: PlateauConfig,
    lr: f64,
    best: f64,
    bad_checks: u64,
    cooldown_left: u64,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, cfg: PlateauConfig) -> Result<Self> {
        if !(initial_lr.is_finite() && initial_lr > 0.0) {
            return Err(Error::Config(format!(
                "initial learning rate must be positive, got {initial_lr}"
            )));
        }
        if !(cfg.factor > 0.0 && cfg.factor < 1.0) {
            return Err(Error::Config(format!(
                "plateau factor must be in (0, 1), got {}",
                cfg.factor
            )));
        }
        if !(cfg.threshold >= 0.0 && cfg.min_lr >= 0.0) {
            return Err(Error::Config("threshold and min_lr must be non-negative".into()));
        }
        Ok(PlateauScheduler {
            cfg,
            lr: initial_lr,
            best: f64::INFINITY,
            bad_checks: 0,
            cooldown_left: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feeds one metric check (lower is better) and returns the learning
    /// rate to use next.
    pub fn observe(&mut self, metric: f64) -> f64 {
        if metric < self.best * (1.0 - self.cfg.threshold) {
            self.best = metric;
            self.bad_checks = 0;
        } else if self.cooldown_left > 0 {
            self.cooldown_left -= 1;
        } else {
            self.bad_checks += 1;
            if self.bad_checks > self.cfg.patience {
                self.lr = (self.lr * self.cfg.factor).max(self.cfg.min_lr);
                self.bad_checks = 0;
                self.cooldown_left = self.cfg.cooldown;
            }
        }
        self.lr
    }
}
