use serde::{Deserialize, Serialize};

use super::{Grads, Parameterized};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    /// Multiplier applied every `decay_interval` epochs (or iterations).
    pub lr_decay: f64,
    pub decay_interval: usize,
    pub momentum: f64,
    /// Epochs for frame-level training, iterations for pair training.
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm threshold; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            lr_decay: 0.5,
            decay_interval: 10,
            momentum: 0.9,
            max_epochs: 10,
            batch_size: 16,
            clip_norm: 5.0,
            seed: 1,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("trainer: learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("trainer: momentum must lie in [0, 1)"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config("trainer: lr_decay must lie in (0, 1]"));
        }
        if self.decay_interval == 0 || self.batch_size == 0 {
            return Err(Error::config("trainer: decay_interval and batch_size must be positive"));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::config("trainer: clip_norm must be non-negative"));
        }
        Ok(())
    }

    /// Step-decay schedule.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.decay_interval) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub grad_norm: f64,
    pub clipped: bool,
    pub learning_rate: f64,
}

/// Momentum SGD: `v <- mu v + g`, `w <- w - lr v`, with global-norm clipping
/// of `g` beforehand.
#[derive(Debug, Clone)]
pub struct Sgd {
    cfg: TrainerConfig,
    velocity: Option<Grads>,
}

impl Sgd {
    pub fn new(cfg: TrainerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, velocity: None })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn step<P: Parameterized + ?Sized>(&mut self, model: &mut P, grads: &Grads, epoch: usize) -> Result<StepInfo> {
        let names = model.param_names();
        if grads.0.len() != names.len() {
            return Err(Error::usage(format!(
                "{} gradient tensors for {} parameters",
                grads.0.len(),
                names.len()
            )));
        }
        for (name, g) in names.iter().zip(&grads.0) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::TrainingDiverged {
                    stage: "epoch",
                    index: epoch,
                    what: name.clone(),
                });
            }
        }
        let norm = grads.global_norm();
        let clipped = self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm;
        let factor = if clipped { self.cfg.clip_norm / norm } else { 1.0 };
        let lr = self.cfg.learning_rate_at(epoch);
        let mu = self.cfg.momentum;

        let velocity = self.velocity.get_or_insert_with(|| Grads::zeros_like(model));
        for ((param, v), g) in model
            .param_slices_mut()
            .into_iter()
            .zip(velocity.0.iter_mut())
            .zip(&grads.0)
        {
            if param.len() != g.len() {
                return Err(Error::usage("gradient tensor shape does not match its parameter"));
            }
            for ((w, v), g) in param.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = mu * *v + factor * g;
                *w -= lr * *v;
            }
        }
        model.after_update();
        Ok(StepInfo {
            grad_norm: norm,
            clipped,
            learning_rate: lr,
        })
    }
}
