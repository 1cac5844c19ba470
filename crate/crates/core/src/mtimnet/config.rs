use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TASKS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Samples per window.
    pub window: usize,
    pub n_experts: usize,
    pub top_k: usize,
    /// Encoder output width; `conv_channels * pool_bins`.
    pub feat_dim: usize,
    pub expert_dim: usize,
    /// Fixed at 5.
    pub n_tasks: usize,
    /// Gate dropout probability (training only).
    pub dropout: f64,
    pub conv_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window: 100,
            n_experts: 8,
            top_k: 2,
            feat_dim: 128,
            expert_dim: 64,
            n_tasks: TASKS,
            dropout: 0.1,
            conv_channels: 32,
            kernel: 25,
            stride: 2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_tasks != TASKS {
            return fail(format!("n_tasks must be {TASKS}, got {}", self.n_tasks));
        }
        if self.top_k == 0 || self.top_k > self.n_experts {
            return fail(format!(
                "top_k must be in 1..={}, got {}",
                self.n_experts, self.top_k
            ));
        }
        for (name, v) in [
            ("window", self.window),
            ("feat_dim", self.feat_dim),
            ("expert_dim", self.expert_dim),
            ("conv_channels", self.conv_channels),
            ("kernel", self.kernel),
            ("stride", self.stride),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.feat_dim % self.conv_channels != 0 {
            return fail(format!(
                "feat_dim {} must be a multiple of conv_channels {}",
                self.feat_dim, self.conv_channels
            ));
        }
        if self.kernel > self.window {
            return fail("kernel longer than window".into());
        }
        if self.conv_positions() < self.pool_bins() {
            return fail(format!(
                "{} convolution positions cannot fill {} pooling bins",
                self.conv_positions(),
                self.pool_bins()
            ));
        }
        Ok(())
    }

    pub fn pool_bins(&self) -> usize {
        self.feat_dim / self.conv_channels
    }

    pub fn conv_positions(&self) -> usize {
        (self.window - self.kernel) / self.stride + 1
    }

    /// Number of scalar outputs of each task head.
    pub fn task_outputs(task: usize) -> usize {
        if task == TASKS - 1 {
            2
        } else {
            1
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    /// Decoupled weight decay, applied as `lr · weight_decay · w` per step.
    pub weight_decay: f64,
    /// Shuffling seed.
    pub seed: u64,
    /// Seed of the gate-dropout masks.
    pub dropout_seed: u64,
    /// Momentum of the batch-norm running statistics.
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 64,
            epochs: 50,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 5.0,
            weight_decay: 0.5,
            seed: 0,
            dropout_seed: 1,
            bn_momentum: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("bn_momentum must be in [0, 1]".into()));
        }
        Ok(())
    }
}
