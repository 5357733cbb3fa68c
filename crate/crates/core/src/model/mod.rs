//! Compact convolutional tagger with optional query embeddings.
//!
//! Three blocks of 3×3 convolution, ReLU and 2×2 average pooling, a global
//! mean over time and frequency, and an affine head with per-class sigmoids.
//! A query embedding, when present, is written into the first `embed_dim`
//! bins of an extra input plane and repeated along time.

pub mod checkpoint;
pub mod ops;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureStack;
use crate::geometry::wrap_azimuth;
use crate::regionfeat::RegionQuery;
use crate::scenesim::NUM_CLASSES;
use ops::{avg_pool2, avg_pool2_backward, col2im3, gemm, im2col3};

pub const PROB_CLAMP: f64 = 1e-7;
const NUM_BLOCKS: usize = 3;
const HEAD_W: usize = 2 * NUM_BLOCKS;
const HEAD_B: usize = HEAD_W + 1;
const EMBED_START: usize = HEAD_B + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Angle,
    Distance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Computed feature planes; the embedding plane is extra.
    pub in_planes: usize,
    pub widths: [usize; NUM_BLOCKS],
    pub num_classes: usize,
    pub embedding: Option<EmbeddingKind>,
    pub embed_dim: usize,
    pub angle_resolution: f64,
}

impl ModelConfig {
    pub fn new(in_planes: usize, embedding: Option<EmbeddingKind>) -> Self {
        Self { in_planes, widths: [16, 32, 64], num_classes: NUM_CLASSES, embedding, embed_dim: 16, angle_resolution: 5.0 }
    }

    pub fn input_channels(&self) -> usize {
        self.in_planes + usize::from(self.embedding.is_some())
    }

    pub fn angle_rows(&self) -> usize {
        (360.0 / self.angle_resolution).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_planes == 0 || self.widths.contains(&0) || self.num_classes == 0 || self.embed_dim == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        let rows = 360.0 / self.angle_resolution;
        if !(rows.is_finite() && rows >= 1.0 && (rows - rows.round()).abs() < 1e-9) {
            return Err(Error::invalid(format!("angle resolution {} must divide 360", self.angle_resolution)));
        }
        Ok(())
    }
}

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(name: &str, shape: &[usize]) -> Self {
        Self { name: name.to_string(), shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    fn normal(name: &str, shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut t = Self::zeros(name, shape);
        if std > 0.0 {
            let dist = Normal::new(0.0, std).expect("finite std");
            t.data.iter_mut().for_each(|v| *v = dist.sample(rng));
        }
        t
    }
}

/// Gradients aligned with [`CompactCnn::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like(model: &CompactCnn) -> Self {
        Self(model.params.iter().map(|p| vec![0.0; p.data.len()]).collect())
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().flatten().for_each(|v| *v *= s);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompactCnn {
    config: ModelConfig,
    params: Vec<Tensor>,
    input_mean: Vec<f64>,
    input_std: Vec<f64>,
    distance_mean: f64,
    distance_std: f64,
}

struct BlockTrace {
    h: usize,
    w: usize,
    cols: Vec<f64>,
    /// Post-ReLU activations, `c_out × h × w`.
    act: Vec<f64>,
}

enum EmbedTrace {
    Angle { row: usize },
    Distance { z: f64, hidden_pre: Vec<f64> },
}

struct Trace {
    blocks: Vec<BlockTrace>,
    last_h: usize,
    last_w: usize,
    features: Vec<f64>,
    probs: Vec<f64>,
    embed: Option<EmbedTrace>,
}

/// Which table row an azimuth falls in.
pub fn angle_index(azimuth: f64, resolution: f64, rows: usize) -> usize {
    (((wrap_azimuth(azimuth) + 180.0) / resolution).floor() as usize) % rows
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss(probs: &[f64], targets: &[bool]) -> f64 {
    let sum: f64 = probs
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if t {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    sum / probs.len() as f64
}

impl CompactCnn {
    /// He-initialized convolutions and embeddings, zero head.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::with_head_std(config, seed, 0.0)
    }

    /// Like [`CompactCnn::new`] with a random head of the given scale.
    pub fn with_head_std(config: ModelConfig, seed: u64, head_std: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut c_in = config.input_channels();
        for (i, &c_out) in config.widths.iter().enumerate() {
            let std = (2.0 / (9 * c_in) as f64).sqrt();
            params.push(Tensor::normal(&format!("conv{}.weight", i + 1), &[c_out, c_in, 3, 3], std, &mut rng));
            params.push(Tensor::zeros(&format!("conv{}.bias", i + 1), &[c_out]));
            c_in = c_out;
        }
        params.push(Tensor::normal("head.weight", &[config.num_classes, c_in], head_std, &mut rng));
        params.push(Tensor::zeros("head.bias", &[config.num_classes]));
        let h = config.embed_dim;
        match config.embedding {
            Some(EmbeddingKind::Angle) => params.push(Tensor::normal("angle.table", &[config.angle_rows(), h], 1.0, &mut rng)),
            Some(EmbeddingKind::Distance) => {
                params.push(Tensor::normal("distance.fc1.weight", &[h, 1], 2f64.sqrt(), &mut rng));
                params.push(Tensor::normal("distance.fc1.bias", &[h], 0.1, &mut rng));
                params.push(Tensor::normal("distance.fc2.weight", &[h, h], (2.0 / h as f64).sqrt(), &mut rng));
                params.push(Tensor::zeros("distance.fc2.bias", &[h]));
            }
            None => {}
        }
        let k = config.in_planes;
        Ok(Self { config, params, input_mean: vec![0.0; k], input_std: vec![1.0; k], distance_mean: 0.0, distance_std: 1.0 })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Per-plane standardization applied to computed planes.
    pub fn set_input_normalization(&mut self, mean: Vec<f64>, std: Vec<f64>) -> Result<()> {
        if mean.len() != self.config.in_planes || std.len() != self.config.in_planes {
            return Err(Error::Shape("normalization length differs from the plane count".into()));
        }
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("normalization statistics must be finite with positive std"));
        }
        self.input_mean = mean;
        self.input_std = std;
        Ok(())
    }

    pub fn input_normalization(&self) -> (&[f64], &[f64]) {
        (&self.input_mean, &self.input_std)
    }

    pub fn set_distance_normalization(&mut self, mean: f64, std: f64) -> Result<()> {
        if !(mean.is_finite() && std.is_finite() && std > 0.0) {
            return Err(Error::invalid("distance normalization must be finite with positive std"));
        }
        self.distance_mean = mean;
        self.distance_std = std;
        Ok(())
    }

    pub fn distance_normalization(&self) -> (f64, f64) {
        (self.distance_mean, self.distance_std)
    }

    fn embedding_vector(&self, query: Option<&RegionQuery>) -> Result<Option<(Vec<f64>, EmbedTrace)>> {
        let Some(kind) = self.config.embedding else { return Ok(None) };
        let h = self.config.embed_dim;
        match (kind, query) {
            (EmbeddingKind::Angle, Some(RegionQuery::Angular(region))) => {
                let row = angle_index(region.middle(), self.config.angle_resolution, self.config.angle_rows());
                let table = &self.params[EMBED_START].data;
                Ok(Some((table[row * h..(row + 1) * h].to_vec(), EmbedTrace::Angle { row })))
            }
            (EmbeddingKind::Distance, Some(RegionQuery::Distance(d))) => {
                let z = (d - self.distance_mean) / self.distance_std;
                let (w1, b1) = (&self.params[EMBED_START].data, &self.params[EMBED_START + 1].data);
                let (w2, b2) = (&self.params[EMBED_START + 2].data, &self.params[EMBED_START + 3].data);
                let hidden_pre: Vec<f64> = (0..h).map(|i| w1[i] * z + b1[i]).collect();
                let hidden: Vec<f64> = hidden_pre.iter().map(|v| v.max(0.0)).collect();
                let e = (0..h).map(|i| b2[i] + (0..h).map(|j| w2[i * h + j] * hidden[j]).sum::<f64>()).collect();
                Ok(Some((e, EmbedTrace::Distance { z, hidden_pre })))
            }
            (kind, q) => Err(Error::Mismatch(format!("{kind:?} embedding cannot encode query {q:?}"))),
        }
    }

    fn trace(&self, stack: &FeatureStack, query: Option<&RegionQuery>) -> Result<Trace> {
        let cfg = &self.config;
        if stack.channels() != cfg.in_planes {
            return Err(Error::Shape(format!("model expects {} planes, got {}", cfg.in_planes, stack.channels())));
        }
        let (mut h, mut w) = (stack.frames, stack.bins);
        if h < 1 << NUM_BLOCKS || w < 1 << NUM_BLOCKS {
            return Err(Error::Shape(format!("input {h}x{w} is smaller than {0}x{0}", 1 << NUM_BLOCKS)));
        }
        let hw = h * w;
        let mut x = Vec::with_capacity(cfg.input_channels() * hw);
        for c in 0..cfg.in_planes {
            let (m, s) = (self.input_mean[c], self.input_std[c]);
            x.extend(stack.plane(c).iter().map(|v| (v - m) / s));
        }
        let embed = self.embedding_vector(query)?;
        let embed_trace = embed.map(|(e, tr)| {
            let mut plane = vec![0.0; hw];
            let n = e.len().min(w);
            for t in 0..h {
                plane[t * w..t * w + n].copy_from_slice(&e[..n]);
            }
            x.extend(plane);
            tr
        });
        let mut c_in = cfg.input_channels();
        let mut blocks = Vec::with_capacity(NUM_BLOCKS);
        for (i, &c_out) in cfg.widths.iter().enumerate() {
            let hw = h * w;
            let mut cols = Vec::new();
            im2col3(&x, c_in, h, w, &mut cols);
            let (wt, b) = (&self.params[2 * i].data, &self.params[2 * i + 1].data);
            let mut act = vec![0.0; c_out * hw];
            for (co, row) in act.chunks_exact_mut(hw).enumerate() {
                row.fill(b[co]);
            }
            gemm(c_out, hw, c_in * 9, wt, false, &cols, false, &mut act, 1.0);
            act.iter_mut().for_each(|v| *v = v.max(0.0));
            x = avg_pool2(&act, c_out, h, w);
            blocks.push(BlockTrace { h, w, cols, act });
            h /= 2;
            w /= 2;
            c_in = c_out;
        }
        let hw = (h * w) as f64;
        let features: Vec<f64> = x.chunks_exact(h * w).map(|p| p.iter().sum::<f64>() / hw).collect();
        let (hw_, hb) = (&self.params[HEAD_W].data, &self.params[HEAD_B].data);
        let probs = (0..cfg.num_classes)
            .map(|k| sigmoid(hb[k] + (0..c_in).map(|c| hw_[k * c_in + c] * features[c]).sum::<f64>()))
            .collect();
        Ok(Trace { blocks, last_h: h, last_w: w, features, probs, embed: embed_trace })
    }

    /// Per-class probabilities.
    pub fn forward(&self, stack: &FeatureStack, query: Option<&RegionQuery>) -> Result<Vec<f64>> {
        Ok(self.trace(stack, query)?.probs)
    }

    /// Loss and analytic gradients for one example.
    pub fn loss_and_gradients(
        &self,
        stack: &FeatureStack,
        query: Option<&RegionQuery>,
        targets: &[bool],
    ) -> Result<(f64, Gradients)> {
        let cfg = &self.config;
        if targets.len() != cfg.num_classes {
            return Err(Error::Shape(format!("{} targets for {} classes", targets.len(), cfg.num_classes)));
        }
        let tr = self.trace(stack, query)?;
        let loss = bce_loss(&tr.probs, targets);
        let mut grads = Gradients::zeros_like(self);
        // d loss / d logit of the mean BCE
        let n = cfg.num_classes as f64;
        let dlogit: Vec<f64> = tr.probs.iter().zip(targets).map(|(&p, &t)| (p - f64::from(u8::from(t))) / n).collect();
        let c_last = cfg.widths[NUM_BLOCKS - 1];
        let head_w = &self.params[HEAD_W].data;
        let mut dfeat = vec![0.0; c_last];
        for (k, &g) in dlogit.iter().enumerate() {
            grads.0[HEAD_B][k] = g;
            for c in 0..c_last {
                grads.0[HEAD_W][k * c_last + c] = g * tr.features[c];
                dfeat[c] += g * head_w[k * c_last + c];
            }
        }
        let (h, w) = (tr.last_h, tr.last_w);
        let mut dx: Vec<f64> = dfeat.iter().flat_map(|&g| std::iter::repeat_n(g / (h * w) as f64, h * w)).collect();
        let need_input_grad = cfg.embedding.is_some();
        for i in (0..NUM_BLOCKS).rev() {
            let b = &tr.blocks[i];
            let c_out = cfg.widths[i];
            let c_in = if i == 0 { cfg.input_channels() } else { cfg.widths[i - 1] };
            let hw = b.h * b.w;
            let mut dz = avg_pool2_backward(&dx, c_out, b.h, b.w);
            dz.iter_mut().zip(&b.act).for_each(|(g, &a)| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
            for (co, row) in dz.chunks_exact(hw).enumerate() {
                grads.0[2 * i + 1][co] = row.iter().sum();
            }
            gemm(c_out, c_in * 9, hw, &dz, false, &b.cols, true, &mut grads.0[2 * i], 0.0);
            if i > 0 || need_input_grad {
                let mut dcols = vec![0.0; c_in * 9 * hw];
                gemm(c_in * 9, hw, c_out, &self.params[2 * i].data, true, &dz, false, &mut dcols, 0.0);
                dx = vec![0.0; c_in * hw];
                col2im3(&dcols, c_in, b.h, b.w, &mut dx);
            }
        }
        if let Some(embed) = &tr.embed {
            let (h, w) = (tr.blocks[0].h, tr.blocks[0].w);
            let plane = &dx[cfg.in_planes * h * w..];
            let dim = cfg.embed_dim;
            let mut de = vec![0.0; dim];
            for t in 0..h {
                for (f, d) in de.iter_mut().enumerate().take(dim.min(w)) {
                    *d += plane[t * w + f];
                }
            }
            match embed {
                EmbedTrace::Angle { row } => grads.0[EMBED_START][row * dim..(row + 1) * dim].copy_from_slice(&de),
                EmbedTrace::Distance { z, hidden_pre } => {
                    let w2 = &self.params[EMBED_START + 2].data;
                    let mut dhidden = vec![0.0; dim];
                    for i in 0..dim {
                        grads.0[EMBED_START + 3][i] = de[i];
                        for j in 0..dim {
                            grads.0[EMBED_START + 2][i * dim + j] = de[i] * hidden_pre[j].max(0.0);
                            dhidden[j] += w2[i * dim + j] * de[i];
                        }
                    }
                    for j in 0..dim {
                        let dpre = if hidden_pre[j] > 0.0 { dhidden[j] } else { 0.0 };
                        grads.0[EMBED_START][j] = dpre * z;
                        grads.0[EMBED_START + 1][j] = dpre;
                    }
                }
            }
        }
        Ok((loss, grads))
    }

    /// Sign pattern of every ReLU input; finite differences are only valid
    /// when a perturbation leaves it unchanged.
    pub fn relu_pattern(&self, stack: &FeatureStack, query: Option<&RegionQuery>) -> Result<Vec<bool>> {
        let tr = self.trace(stack, query)?;
        let mut out: Vec<bool> = tr.blocks.iter().flat_map(|b| b.act.iter().map(|&a| a > 0.0)).collect();
        if let Some(EmbedTrace::Distance { hidden_pre, .. }) = &tr.embed {
            out.extend(hidden_pre.iter().map(|&v| v > 0.0));
        }
        Ok(out)
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &CompactCnn, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    pub fn step(&mut self, model: &mut CompactCnn, grads: &Gradients) -> Result<()> {
        if grads.0.len() != self.m.len() || grads.0.iter().zip(&self.m).any(|(g, m)| g.len() != m.len()) {
            return Err(Error::Shape("gradient layout differs from the optimizer state".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        for (((p, g), m), v) in model.params.iter_mut().zip(&grads.0).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p.data[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
