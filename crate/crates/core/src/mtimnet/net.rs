use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TASKS};
use super::params::{ParamStore, Tensor};
use crate::autodiff::{Graph, Plain};
use crate::error::{Error, Result};
use crate::model::{ImuWindow, MotionDelta};

pub const TASK_COUNT: usize = TASKS;

const BN_EPS: f64 = 1e-5;
const CHANNELS: usize = 6;

/// Raw network outputs for one window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionEstimate {
    pub dd_hat: f64,
    pub dpsi_hat: f64,
    pub e_dd: f64,
    pub e_dpsi: f64,
    pub log_var_dd: f64,
    pub log_var_dpsi: f64,
}

impl MotionEstimate {
    pub fn var_dd(&self) -> f64 {
        self.log_var_dd.exp()
    }

    pub fn var_dpsi(&self) -> f64 {
        self.log_var_dpsi.exp()
    }

    fn is_finite(&self) -> bool {
        [
            self.dd_hat,
            self.dpsi_hat,
            self.e_dd,
            self.e_dpsi,
            self.log_var_dd,
            self.log_var_dpsi,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Residual-corrected motion: `dd = max(0, dd_hat + e_dd)`, `dpsi = dpsi_hat + e_dpsi`.
pub fn corrected_delta(est: &MotionEstimate) -> Result<MotionDelta> {
    MotionDelta::new((est.dd_hat + est.e_dd).max(0.0), est.dpsi_hat + est.e_dpsi)
}

/// Graph-level outputs of one sample.
#[derive(Clone, Copy, Debug)]
pub struct NetOutputs<V> {
    pub dd_hat: V,
    pub dpsi_hat: V,
    pub e_dd: V,
    pub e_dpsi: V,
    pub log_var_dd: V,
    pub log_var_dpsi: V,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    /// Running batch-norm statistics, no dropout.
    Eval,
    /// Batch statistics and gate dropout with masks drawn from the seed.
    Train { dropout_seed: u64 },
}

/// Per-channel batch statistics of the convolution outputs (biased variance).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layout {
    pub conv_w: usize,
    pub conv_b: usize,
    pub bn_gamma: usize,
    pub bn_beta: usize,
    pub bn_mean: usize,
    pub bn_var: usize,
    /// `(w1, b1, w2, b2)` per expert.
    pub experts: Vec<[usize; 4]>,
    /// `(w, b)` per task.
    pub gates: Vec<[usize; 2]>,
    /// `(w1, b1, w2, b2)` per task.
    pub heads: Vec<[usize; 4]>,
    pub input_mean: usize,
    pub input_std: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mtimnet {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

/// Shapes of every tensor in storage order, with trainability.
pub(crate) fn tensor_specs(c: &ModelConfig) -> Vec<(String, Vec<usize>, bool)> {
    let (f, e, n) = (c.feat_dim, c.expert_dim, c.n_experts);
    let mut v = vec![
        (
            "conv.w".to_string(),
            vec![c.conv_channels, CHANNELS, c.kernel],
            true,
        ),
        ("conv.b".to_string(), vec![c.conv_channels], true),
        ("bn.gamma".to_string(), vec![c.conv_channels], true),
        ("bn.beta".to_string(), vec![c.conv_channels], true),
        ("bn.running_mean".to_string(), vec![c.conv_channels], false),
        ("bn.running_var".to_string(), vec![c.conv_channels], false),
    ];
    for i in 0..n {
        v.push((format!("expert{i}.w1"), vec![e, f], true));
        v.push((format!("expert{i}.b1"), vec![e], true));
        v.push((format!("expert{i}.w2"), vec![e, e], true));
        v.push((format!("expert{i}.b2"), vec![e], true));
    }
    for t in 0..TASKS {
        v.push((format!("gate{t}.w"), vec![n, f], true));
        v.push((format!("gate{t}.b"), vec![n], true));
    }
    for t in 0..TASKS {
        let o = ModelConfig::task_outputs(t);
        v.push((format!("head{t}.w1"), vec![e, e], true));
        v.push((format!("head{t}.b1"), vec![e], true));
        v.push((format!("head{t}.w2"), vec![o, e], true));
        v.push((format!("head{t}.b2"), vec![o], true));
    }
    v.push(("input.mean".to_string(), vec![CHANNELS], false));
    v.push(("input.std".to_string(), vec![CHANNELS], false));
    v
}

fn layout_for(c: &ModelConfig) -> Layout {
    let n = c.n_experts;
    let mut next = 6;
    let mut take4 = || {
        let r = [next, next + 1, next + 2, next + 3];
        next += 4;
        r
    };
    let experts = (0..n).map(|_| take4()).collect();
    let gates = (0..TASKS)
        .map(|t| [6 + 4 * n + 2 * t, 7 + 4 * n + 2 * t])
        .collect();
    let base = 6 + 4 * n + 2 * TASKS;
    let heads = (0..TASKS)
        .map(|t| {
            [
                base + 4 * t,
                base + 4 * t + 1,
                base + 4 * t + 2,
                base + 4 * t + 3,
            ]
        })
        .collect();
    Layout {
        conv_w: 0,
        conv_b: 1,
        bn_gamma: 2,
        bn_beta: 3,
        bn_mean: 4,
        bn_var: 5,
        experts,
        gates,
        heads,
        input_mean: base + 4 * TASKS,
        input_std: base + 4 * TASKS + 1,
    }
}

/// `softplus⁻¹(3)`: the displacement head starts near a typical 1 s ride distance.
const DD_BIAS_INIT: f64 = 2.948_481_075_8;

impl Mtimnet {
    /// Randomly initialised network (seeded by `config.seed`).
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::default();
        for (name, shape, trainable) in tensor_specs(&config) {
            let mut t = Tensor::zeros(name, shape);
            let suffix = t.name.rsplit('.').next().unwrap_or("");
            match suffix {
                "gamma" | "running_var" | "std" => t.data.fill(1.0),
                "w" | "w1" | "w2" => {
                    let fan_in: usize = t.shape[1..].iter().product();
                    let mut std = (1.0 / fan_in as f64).sqrt();
                    if t.name.starts_with("head") && suffix == "w2" {
                        std *= 0.1;
                    }
                    let normal = Normal::new(0.0, std).expect("positive std");
                    for v in &mut t.data {
                        *v = normal.sample(&mut rng);
                    }
                }
                _ => {}
            }
            if t.name == "head0.b2" {
                t.data[0] = DD_BIAS_INIT;
            }
            params.push(t, trainable);
        }
        let layout = layout_for(&config);
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    /// Builds a network from stored tensors; names and shapes must match `config`.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let specs = tensor_specs(&config);
        if specs.len() != tensors.len() {
            return Err(Error::Data(format!(
                "expected {} tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        let mut params = ParamStore::default();
        for ((name, shape, trainable), t) in specs.into_iter().zip(tensors) {
            if t.name != name || t.shape != shape {
                return Err(Error::Data(format!(
                    "tensor mismatch: expected {name} {shape:?}, got {} {:?}",
                    t.name, t.shape
                )));
            }
            let t = Tensor::new(t.name, t.shape, t.data)?;
            params.push(t, trainable);
        }
        if !params.all_finite() {
            return Err(Error::Data("non-finite parameter values".into()));
        }
        let layout = layout_for(&config);
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Sets the per-channel input standardisation from the samples of
    /// `windows`. Channels with no spread keep unit scale.
    pub fn fit_input_scaling(&mut self, windows: &[&ImuWindow]) -> Result<()> {
        let n = windows.iter().map(|w| w.len()).sum::<usize>();
        if n < 2 {
            return Err(Error::Data(
                "need at least two samples to fit input scaling".into(),
            ));
        }
        let mut mean = [0.0; CHANNELS];
        for s in windows.iter().flat_map(|w| w.samples()) {
            for (m, v) in mean.iter_mut().zip(s.channels()) {
                *m += v / n as f64;
            }
        }
        let mut var = [0.0; CHANNELS];
        for s in windows.iter().flat_map(|w| w.samples()) {
            for c in 0..CHANNELS {
                var[c] += (s.channels()[c] - mean[c]).powi(2) / (n - 1) as f64;
            }
        }
        let std = var.map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 });
        let (im, is) = (self.layout.input_mean, self.layout.input_std);
        self.params.tensor_mut(im).data.copy_from_slice(&mean);
        self.params.tensor_mut(is).data.copy_from_slice(&std);
        Ok(())
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Binds every parameter as a graph node; `out[id]` holds tensor `id`.
    pub fn bind<G: Graph>(&self, g: &mut G) -> Vec<Vec<G::Var>> {
        self.params
            .tensors()
            .iter()
            .map(|t| t.data.iter().map(|&v| g.constant(v)).collect())
            .collect()
    }

    fn check_window(&self, w: &ImuWindow) -> Result<Vec<f64>> {
        if w.len() != self.config.window {
            return Err(Error::Data(format!(
                "window has {} samples, model expects {}",
                w.len(),
                self.config.window
            )));
        }
        Ok(w.channel_major())
    }

    /// Inference on one window with running batch-norm statistics.
    pub fn predict(&self, window: &ImuWindow) -> Result<MotionEstimate> {
        let x = self.check_window(window)?;
        let mut g = Plain;
        let p = self.bind(&mut g);
        let (out, _) = self.forward(&mut g, &p, &[&x], ForwardMode::Eval)?;
        let o = out[0];
        let est = MotionEstimate {
            dd_hat: o.dd_hat,
            dpsi_hat: o.dpsi_hat,
            e_dd: o.e_dd,
            e_dpsi: o.e_dpsi,
            log_var_dd: o.log_var_dd,
            log_var_dpsi: o.log_var_dpsi,
        };
        if !est.is_finite() {
            return Err(Error::Numeric("non-finite network output".into()));
        }
        Ok(est)
    }

    pub fn predict_all(&self, windows: &[ImuWindow]) -> Result<Vec<MotionEstimate>> {
        windows.iter().map(|w| self.predict(w)).collect()
    }

    /// Encoded feature of one window (eval mode).
    pub fn encode(&self, window: &ImuWindow) -> Result<Vec<f64>> {
        let x = self.check_window(window)?;
        let mut g = Plain;
        let p = self.bind(&mut g);
        let (feats, _) = self.encode_batch(&mut g, &p, &[&x], ForwardMode::Eval);
        Ok(feats.into_iter().next().unwrap_or_default())
    }

    /// Dense routing weights of gate `task` for an encoded feature (eval mode).
    pub fn gate_weights(&self, feature: &[f64], task: usize) -> Result<Vec<f64>> {
        if task >= TASKS {
            return Err(Error::InvalidArgument(format!("task {task} out of range")));
        }
        if feature.len() != self.config.feat_dim {
            return Err(Error::InvalidArgument(format!(
                "feature has {} entries, expected {}",
                feature.len(),
                self.config.feat_dim
            )));
        }
        let logits = self.gate_logits(&mut Plain, &self.bind(&mut Plain), feature, task);
        routing_weights(&logits, self.config.top_k)
    }

    fn gate_logits<G: Graph>(
        &self,
        g: &mut G,
        p: &[Vec<G::Var>],
        feat: &[G::Var],
        task: usize,
    ) -> Vec<G::Var> {
        let f = self.config.feat_dim;
        let [w, b] = self.layout.gates[task];
        (0..self.config.n_experts)
            .map(|n| g.linear(p[b][n], &p[w][n * f..(n + 1) * f], feat))
            .collect()
    }

    /// Convolution, batch normalization, SiLU and average pooling.
    pub(crate) fn encode_batch<G: Graph>(
        &self,
        g: &mut G,
        p: &[Vec<G::Var>],
        inputs: &[&[f64]],
        mode: ForwardMode,
    ) -> (Vec<Vec<G::Var>>, Option<BatchStats>) {
        let c = &self.config;
        let l = &self.layout;
        let (k, w, stride) = (c.kernel, c.window, c.stride);
        let positions = c.conv_positions();
        let bins = c.pool_bins();
        let patch_len = CHANNELS * k;
        let nb = inputs.len();

        let in_mean = &self.params.tensor(l.input_mean).data;
        let in_std = &self.params.tensor(l.input_std).data;
        let mut patches = vec![0.0; nb * positions * patch_len];
        for (s, x) in inputs.iter().enumerate() {
            for pos in 0..positions {
                let dst = &mut patches[(s * positions + pos) * patch_len..][..patch_len];
                for ch in 0..CHANNELS {
                    let src = &x[ch * w + pos * stride..][..k];
                    for (d, v) in dst[ch * k..(ch + 1) * k].iter_mut().zip(src) {
                        *d = (v - in_mean[ch]) / in_std[ch];
                    }
                }
            }
        }

        let mut stats = BatchStats {
            mean: Vec::with_capacity(c.conv_channels),
            var: Vec::with_capacity(c.conv_channels),
            count: nb * positions,
        };
        // act[o][s * positions + pos]
        let mut act: Vec<Vec<G::Var>> = Vec::with_capacity(c.conv_channels);
        for o in 0..c.conv_channels {
            let wrow = &p[l.conv_w][o * patch_len..(o + 1) * patch_len];
            let pre: Vec<G::Var> = patches
                .chunks_exact(patch_len)
                .map(|patch| g.linear_const(p[l.conv_b][o], wrow, patch))
                .collect();
            let gamma = p[l.bn_gamma][o];
            let beta = p[l.bn_beta][o];
            let out = match mode {
                ForwardMode::Train { .. } => {
                    let m = g.mean(&pre);
                    let centered: Vec<G::Var> = pre.iter().map(|&x| g.sub(x, m)).collect();
                    let sq: Vec<G::Var> = centered.iter().map(|&x| g.square(x)).collect();
                    let var = g.mean(&sq);
                    stats.mean.push(g.value(m));
                    stats.var.push(g.value(var));
                    let shifted = g.offset(var, BN_EPS);
                    let denom = g.sqrt(shifted);
                    let sc = g.div(gamma, denom);
                    centered
                        .iter()
                        .map(|&x| {
                            let y = g.linear(beta, &[sc], &[x]);
                            g.silu(y)
                        })
                        .collect()
                }
                ForwardMode::Eval => {
                    let rm = self.params.tensor(l.bn_mean).data[o];
                    let rv = self.params.tensor(l.bn_var).data[o];
                    let sc = g.scale(gamma, 1.0 / (rv + BN_EPS).sqrt());
                    pre.iter()
                        .map(|&x| {
                            let xc = g.offset(x, -rm);
                            let y = g.linear(beta, &[sc], &[xc]);
                            g.silu(y)
                        })
                        .collect()
                }
            };
            act.push(out);
        }

        let feats = (0..nb)
            .map(|s| {
                let mut f = Vec::with_capacity(c.feat_dim);
                for a in &act {
                    let row = &a[s * positions..(s + 1) * positions];
                    for b in 0..bins {
                        let (lo, hi) = (b * positions / bins, (b + 1) * positions / bins);
                        f.push(g.mean(&row[lo..hi]));
                    }
                }
                f
            })
            .collect();
        let stats = matches!(mode, ForwardMode::Train { .. }).then_some(stats);
        (feats, stats)
    }

    fn expert<G: Graph>(
        &self,
        g: &mut G,
        p: &[Vec<G::Var>],
        i: usize,
        feat: &[G::Var],
    ) -> Vec<G::Var> {
        let (f, e) = (self.config.feat_dim, self.config.expert_dim);
        let [w1, b1, w2, b2] = self.layout.experts[i];
        let h: Vec<G::Var> = (0..e)
            .map(|j| {
                let z = g.linear(p[b1][j], &p[w1][j * f..(j + 1) * f], feat);
                g.silu(z)
            })
            .collect();
        (0..e)
            .map(|j| {
                let z = g.linear(p[b2][j], &p[w2][j * e..(j + 1) * e], &h);
                g.silu(z)
            })
            .collect()
    }

    fn head<G: Graph>(
        &self,
        g: &mut G,
        p: &[Vec<G::Var>],
        task: usize,
        z: &[G::Var],
    ) -> Vec<G::Var> {
        let e = self.config.expert_dim;
        let [w1, b1, w2, b2] = self.layout.heads[task];
        let h: Vec<G::Var> = (0..e)
            .map(|j| {
                let a = g.linear(p[b1][j], &p[w1][j * e..(j + 1) * e], z);
                g.silu(a)
            })
            .collect();
        (0..ModelConfig::task_outputs(task))
            .map(|o| g.linear(p[b2][o], &p[w2][o * e..(o + 1) * e], &h))
            .collect()
    }

    /// Full forward pass over a batch of channel-major windows.
    pub fn forward<G: Graph>(
        &self,
        g: &mut G,
        p: &[Vec<G::Var>],
        inputs: &[&[f64]],
        mode: ForwardMode,
    ) -> Result<(Vec<NetOutputs<G::Var>>, Option<BatchStats>)> {
        let c = &self.config;
        let need = CHANNELS * c.window;
        if let Some(x) = inputs.iter().find(|x| x.len() != need) {
            return Err(Error::Data(format!(
                "input has {} values, expected {need}",
                x.len()
            )));
        }
        let (feats, stats) = self.encode_batch(g, p, inputs, mode);
        let mut masks = match mode {
            ForwardMode::Train { dropout_seed } if c.dropout > 0.0 => {
                Some(ChaCha8Rng::seed_from_u64(dropout_seed))
            }
            _ => None,
        };
        let zero = g.constant(0.0);
        let mut outs = Vec::with_capacity(feats.len());
        for feat in &feats {
            let mut routes = Vec::with_capacity(TASKS);
            for t in 0..TASKS {
                let logits = self.gate_logits(g, p, feat, t);
                let keep: Option<Vec<bool>> = masks.as_mut().map(|rng| {
                    (0..c.n_experts)
                        .map(|_| rng.random::<f64>() >= c.dropout)
                        .collect()
                });
                routes.push(route(g, &logits, c.top_k, keep.as_deref()));
            }
            let mut expert_out: Vec<Option<Vec<G::Var>>> = vec![None; c.n_experts];
            for r in &routes {
                for &(i, _) in r {
                    if expert_out[i].is_none() {
                        expert_out[i] = Some(self.expert(g, p, i, feat));
                    }
                }
            }
            let mut heads = Vec::with_capacity(TASKS);
            for (t, r) in routes.iter().enumerate() {
                let weights: Vec<G::Var> = r.iter().map(|&(_, w)| w).collect();
                let z: Vec<G::Var> = (0..c.expert_dim)
                    .map(|j| {
                        let xs: Vec<G::Var> = r
                            .iter()
                            .map(|&(i, _)| expert_out[i].as_ref().expect("computed")[j])
                            .collect();
                        g.linear(zero, &weights, &xs)
                    })
                    .collect();
                heads.push(self.head(g, p, t, &z));
            }
            outs.push(NetOutputs {
                dd_hat: g.softplus(heads[0][0]),
                dpsi_hat: heads[1][0],
                e_dd: heads[2][0],
                e_dpsi: heads[3][0],
                log_var_dd: heads[4][0],
                log_var_dpsi: heads[4][1],
            });
        }
        Ok((outs, stats))
    }
}

/// Softmax over `logits`, keep the `top_k` largest probabilities (ties go to
/// the lower index) and renormalize them to sum to one. Experts whose `keep`
/// flag is false are excluded; the uniform dropout rescaling cancels in the
/// renormalization and is therefore omitted. If every expert is dropped the
/// mask is ignored.
fn route<G: Graph>(
    g: &mut G,
    logits: &[G::Var],
    top_k: usize,
    keep: Option<&[bool]>,
) -> Vec<(usize, G::Var)> {
    let max = logits
        .iter()
        .map(|&l| g.value(l))
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<G::Var> = logits
        .iter()
        .map(|&l| {
            let s = g.offset(l, -max);
            g.exp(s)
        })
        .collect();
    let total = g.sum(&e);
    let probs: Vec<G::Var> = e.iter().map(|&x| g.div(x, total)).collect();

    let keep = keep.filter(|k| k.iter().any(|&b| b));
    let mut order: Vec<usize> = (0..probs.len())
        .filter(|&i| keep.is_none_or(|k| k[i]))
        .collect();
    order.sort_by(|&a, &b| {
        g.value(probs[b])
            .total_cmp(&g.value(probs[a]))
            .then(a.cmp(&b))
    });
    order.truncate(top_k);
    let sel: Vec<G::Var> = order.iter().map(|&i| probs[i]).collect();
    let denom = g.sum(&sel);
    order
        .into_iter()
        .zip(sel)
        .map(|(i, p)| (i, g.div(p, denom)))
        .collect()
}

/// Dense top-k routing weights for a vector of gate logits.
pub fn routing_weights(logits: &[f64], top_k: usize) -> Result<Vec<f64>> {
    if logits.is_empty() || top_k == 0 || top_k > logits.len() {
        return Err(Error::InvalidArgument(format!(
            "top_k {top_k} invalid for {} experts",
            logits.len()
        )));
    }
    crate::error::ensure_finite("gate logits", logits)?;
    let mut out = vec![0.0; logits.len()];
    for (i, w) in route(&mut Plain, logits, top_k, None) {
        out[i] = w;
    }
    Ok(out)
}
