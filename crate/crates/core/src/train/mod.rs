//! Losses, AdamW, the training loop and checkpoints.

mod adamw;
mod checkpoint;
mod loss;
mod trainer;

pub use adamw::{adamw_step, clip_grad_norm, OptimState};
pub use checkpoint::{
    load_checkpoint, load_model, load_weights, save_checkpoint, save_model, save_weights,
    Checkpoint,
};
pub use loss::{charbonnier_loss, l1_loss, l2_loss, loss_value, CHARBONNIER_EPS};
pub use trainer::{evaluate_clip, loss_csv, train_loop, TrainClip, TrainState, TrainStep};

use std::str::FromStr;

use crate::error::{config_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Charbonnier,
    L1,
    L2,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Charbonnier => "charbonnier",
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "charbonnier" => Ok(LossKind::Charbonnier),
            "l1" => Ok(LossKind::L1),
            "l2" => Ok(LossKind::L2),
            _ => Err(config_err!("unknown loss '{s}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub steps: usize,
    /// Consecutive windows whose gradients are averaged per update.
    pub batch: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub grad_clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.001,
            steps: 300,
            batch: 1,
            seed: 0,
            loss: LossKind::Charbonnier,
            grad_clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| config_err!("bad value '{v}' for key '{key}'"))
        }
        match key {
            "lr" => self.lr = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "loss" => self.loss = value.parse()?,
            "grad_clip_norm" => {
                self.grad_clip_norm = if value == "none" {
                    None
                } else {
                    Some(num(key, value)?)
                };
            }
            _ => return Err(config_err!("unknown key '{key}' in [train]")),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr", format!("{:e}", self.lr)),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", format!("{:e}", self.eps)),
            ("weight_decay", self.weight_decay.to_string()),
            ("steps", self.steps.to_string()),
            ("batch", self.batch.to_string()),
            ("seed", self.seed.to_string()),
            ("loss", self.loss.name().to_string()),
            (
                "grad_clip_norm",
                self.grad_clip_norm
                    .map_or("none".to_string(), |v| v.to_string()),
            ),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(config_err!("batch must be positive"));
        }
        if !(self.lr >= 0.0)
            || !(self.eps > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(config_err!("invalid optimizer hyperparameters"));
        }
        Ok(())
    }
}
