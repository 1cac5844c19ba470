use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, TrainConfig};
use super::loss::{residual_targets, sample_loss};
use super::net::{BatchStats, ForwardMode, Mtimnet};
use super::params::ParamStore;
use crate::autodiff::{Graph, Plain, Tape};
use crate::error::{Error, Result};
use crate::model::{ImuWindow, MotionDelta};
use crate::seed::splitmix64;

/// Adam optimiser over the trainable scalars of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(params: &ParamStore, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            m: vec![0.0; params.total_len()],
            v: vec![0.0; params.total_len()],
            t: 0,
        }
    }

    /// Applies one update. `grads` is indexed like [`ParamStore::flat`];
    /// entries of non-trainable tensors are ignored.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for id in 0..params.tensors().len() {
            if !params.is_trainable(id) {
                continue;
            }
            let off = params.offset(id);
            let t = params.tensor_mut(id);
            for (j, w) in t.data.iter_mut().enumerate() {
                let i = off + j;
                let g = grads[i];
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let mh = self.m[i] / c1;
                let vh = self.v[i] / c2;
                *w -= self.lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * *w);
            }
        }
    }
}

/// Mean loss of a batch evaluated without a tape.
pub fn batch_loss_plain(
    model: &Mtimnet,
    inputs: &[&[f64]],
    truths: &[MotionDelta],
    mode: ForwardMode,
    frozen: Option<&[[f64; 2]]>,
) -> Result<f64> {
    let mut g = Plain;
    let p = model.bind(&mut g);
    let (outs, _) = model.forward(&mut g, &p, inputs, mode)?;
    let losses: Vec<f64> = outs
        .iter()
        .zip(truths)
        .enumerate()
        .map(|(i, (o, y))| sample_loss(&mut g, o, y, frozen.map(|f| f[i])))
        .collect();
    Ok(g.mean(&losses))
}

/// Result of a taped batch evaluation.
#[derive(Clone, Debug)]
pub struct TapedBatch {
    pub loss: f64,
    /// Gradient indexed like [`ParamStore::flat`].
    pub grads: Vec<f64>,
    /// Residual targets `y - ŷ` per sample, as seen by the loss.
    pub residuals: Vec<[f64; 2]>,
    pub stats: Option<BatchStats>,
}

/// Mean loss of a batch and its gradient with respect to every parameter.
pub fn batch_loss_tape(
    model: &Mtimnet,
    inputs: &[&[f64]],
    truths: &[MotionDelta],
    mode: ForwardMode,
) -> Result<TapedBatch> {
    if inputs.len() != truths.len() || inputs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} inputs for {} targets",
            inputs.len(),
            truths.len()
        )));
    }
    let mut g = Tape::with_capacity(1 << 16, 1 << 20);
    let p = model.bind(&mut g);
    let (outs, stats) = model.forward(&mut g, &p, inputs, mode)?;
    let residuals = outs
        .iter()
        .zip(truths)
        .map(|(o, y)| residual_targets(&g, o, y))
        .collect();
    let losses: Vec<_> = outs
        .iter()
        .zip(truths)
        .map(|(o, y)| sample_loss(&mut g, o, y, None))
        .collect();
    let root = g.mean(&losses);
    let adj = g.backward(root);
    let grads = p.iter().flatten().map(|v| adj[v.index()]).collect();
    Ok(TapedBatch {
        loss: g.value(root),
        grads,
        residuals,
        stats,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Sample-weighted mean loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Trains a freshly initialised network.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data: &[(ImuWindow, MotionDelta)],
) -> Result<(Mtimnet, TrainOutcome)> {
    let mut model = Mtimnet::new(model_cfg.clone())?;
    let windows: Vec<&ImuWindow> = data.iter().map(|(w, _)| w).collect();
    model.fit_input_scaling(&windows)?;
    let outcome = train_model(&mut model, cfg, data)?;
    Ok((model, outcome))
}

/// Continues training `model` in place.
pub fn train_model(
    model: &mut Mtimnet,
    cfg: &TrainConfig,
    data: &[(ImuWindow, MotionDelta)],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let inputs: Vec<Vec<f64>> = data
        .iter()
        .map(|(w, _)| {
            if w.len() != model.config().window {
                Err(Error::Data(format!(
                    "window has {} samples, model expects {}",
                    w.len(),
                    model.config().window
                )))
            } else {
                Ok(w.channel_major())
            }
        })
        .collect::<Result<_>>()?;
    let mut adam = Adam::new(model.params(), cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut steps = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| inputs[i].as_slice()).collect();
            let ys: Vec<MotionDelta> = chunk.iter().map(|&i| data[i].1).collect();
            let mode = ForwardMode::Train {
                dropout_seed: splitmix64(cfg.dropout_seed ^ steps as u64),
            };
            let mut batch = batch_loss_tape(model, &xs, &ys, mode)?;
            if !batch.loss.is_finite() || batch.grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite loss or gradient at epoch {epoch}, step {steps}"
                )));
            }
            clip_global_norm(model.params(), &mut batch.grads, cfg.grad_clip);
            adam.step(model.params_mut(), &batch.grads);
            if let Some(stats) = &batch.stats {
                update_running_stats(model, stats, cfg.bn_momentum);
            }
            acc += batch.loss * chunk.len() as f64;
            steps += 1;
        }
        epoch_losses.push(acc / data.len() as f64);
    }
    if !model.params().all_finite() {
        return Err(Error::Numeric("parameters diverged".into()));
    }
    Ok(TrainOutcome {
        epoch_losses,
        steps,
    })
}

fn clip_global_norm(params: &ParamStore, grads: &mut [f64], max_norm: f64) {
    let mut sq = 0.0;
    for id in 0..params.tensors().len() {
        if params.is_trainable(id) {
            let off = params.offset(id);
            sq += grads[off..off + params.tensor(id).len()]
                .iter()
                .map(|g| g * g)
                .sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
}

fn update_running_stats(model: &mut Mtimnet, stats: &BatchStats, momentum: f64) {
    let (im, iv) = (model.layout().bn_mean, model.layout().bn_var);
    let n = stats.count as f64;
    let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
    let params = model.params_mut();
    for (r, &m) in params.tensor_mut(im).data.iter_mut().zip(&stats.mean) {
        *r = (1.0 - momentum) * *r + momentum * m;
    }
    for (r, &v) in params.tensor_mut(iv).data.iter_mut().zip(&stats.var) {
        *r = (1.0 - momentum) * *r + momentum * v * unbias;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ImuSample;

    fn small_config() -> ModelConfig {
        ModelConfig {
            window: 16,
            n_experts: 4,
            top_k: 2,
            feat_dim: 8,
            expert_dim: 5,
            conv_channels: 4,
            kernel: 5,
            stride: 2,
            dropout: 0.0,
            ..Default::default()
        }
    }

    fn dataset(n: usize) -> Vec<(ImuWindow, MotionDelta)> {
        (0..n)
            .map(|k| {
                let amp = 0.5 + 0.1 * k as f64;
                let s = (0..16)
                    .map(|i| {
                        let t = i as f64 * 0.01;
                        let a = amp * (t * 9.0 + k as f64).sin();
                        ImuSample::new(
                            t,
                            [9.81 + a, 0.1 * k as f64, a],
                            [0.0, 0.0, 0.02 * k as f64],
                        )
                    })
                    .collect();
                let w = ImuWindow::new(s, 16).unwrap();
                (w, MotionDelta::new(1.0 + amp, 0.02 * k as f64).unwrap())
            })
            .collect()
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::default();
        store.push(
            super::super::params::Tensor::new("w", vec![2], vec![1.0, -1.0]).unwrap(),
            true,
        );
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut adam = Adam::new(&store, &cfg);
        adam.step(&mut store, &[0.3, -2.0]);
        let d = store.flat();
        assert!((d[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((d[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let mut store = ParamStore::default();
        store.push(
            super::super::params::Tensor::new("w", vec![1], vec![2.0]).unwrap(),
            true,
        );
        let cfg = TrainConfig {
            weight_decay: 0.5,
            lr: 0.1,
            ..Default::default()
        };
        let mut adam = Adam::new(&store, &cfg);
        adam.step(&mut store, &[0.0]);
        assert!((store.flat()[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut store = ParamStore::default();
        store.push(super::super::params::Tensor::zeros("w", vec![2]), true);
        let mut g = vec![30.0, 40.0];
        clip_global_norm(&store, &mut g, 5.0);
        assert!((g[0] - 3.0).abs() < 1e-12 && (g[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let data = dataset(12);
        let cfg = TrainConfig {
            epochs: 30,
            batch: 4,
            lr: 1e-2,
            ..Default::default()
        };
        let (m1, o1) = train(&small_config(), &cfg, &data).unwrap();
        let (m2, o2) = train(&small_config(), &cfg, &data).unwrap();
        assert_eq!(o1, o2);
        assert_eq!(m1, m2);
        assert!(o1.epoch_losses.last().unwrap() < &o1.epoch_losses[0]);
        assert_eq!(o1.steps, 90);
    }

    #[test]
    fn tape_gradient_matches_finite_differences() {
        let cfg = ModelConfig {
            expert_dim: 4,
            dropout: 0.3,
            ..small_config()
        };
        let model = Mtimnet::new(cfg).unwrap();
        let data = dataset(3);
        let inputs: Vec<Vec<f64>> = data.iter().map(|(w, _)| w.channel_major()).collect();
        let xs: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
        let ys: Vec<MotionDelta> = data.iter().map(|d| d.1).collect();
        let mode = ForwardMode::Train { dropout_seed: 5 };
        let taped = batch_loss_tape(&model, &xs, &ys, mode).unwrap();
        let base = batch_loss_plain(&model, &xs, &ys, mode, Some(&taped.residuals)).unwrap();
        assert!((base - taped.loss).abs() < 1e-12);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let p = model.params();
        let trainable = (0..p.tensors().len())
            .filter(|&id| p.is_trainable(id))
            .flat_map(|id| p.offset(id)..p.offset(id) + p.tensor(id).len());
        for i in trainable {
            let mut m = model.clone();
            *m.params_mut().flat_mut(i) += h;
            let up = batch_loss_plain(&m, &xs, &ys, mode, Some(&taped.residuals)).unwrap();
            *m.params_mut().flat_mut(i) -= 2.0 * h;
            let down = batch_loss_plain(&m, &xs, &ys, mode, Some(&taped.residuals)).unwrap();
            let fd = (up - down) / (2.0 * h);
            let a = taped.grads[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn empty_or_mismatched_data_is_rejected() {
        let cfg = TrainConfig::default();
        assert!(train(&small_config(), &cfg, &[]).is_err());
        let bad = dataset(2);
        let big = ModelConfig {
            window: 20,
            ..small_config()
        };
        assert!(train(&big, &cfg, &bad).is_err());
    }
}
