//! A small 1D convolutional classifier over scaled byte vectors.
//!
//! Layer stack: conv → ReLU → max-pool → conv → ReLU → dropout → dense,
//! followed by a softmax or per-class sigmoid head. All parameters live in
//! one flat vector in declared order (conv1 weights, conv1 bias, conv2
//! weights, conv2 bias, dense weights, dense bias).

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::ByteSample;

mod loss;
mod model_io;
pub mod ops;
mod optim;
mod train;

pub use loss::{loss_and_grad, probabilities, softmax, Head};
pub use model_io::{
    load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION, MODEL_MAGIC,
};
pub use ops::{ConvGeom, DropoutMode, Padding};
pub use optim::{Optimizer, OptimizerKind};
pub use train::{evaluate, train, train_on, EpochStats, TrainConfig, TrainError, TrainHistory};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("label {label} outside {n_classes} classes")]
    InvalidLabel { label: usize, n_classes: usize },
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("forward cache does not match current parameters")]
    StaleCache,
    #[error("corrupt model file: {0}")]
    CorruptModelFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_len: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: usize,
    pub dropout_rate: f64,
    pub n_classes: usize,
    pub head: Head,
    pub padding: Padding,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_len: crate::encoder::DEFAULT_SAMPLE_LEN,
            conv1_filters: 24,
            conv2_filters: 32,
            kernel: 64,
            stride: 3,
            pool: 5,
            dropout_rate: 0.5,
            n_classes: 2,
            head: Head::SoftmaxCrossEntropy,
            padding: Padding::Same,
        }
    }
}

impl NetworkConfig {
    pub fn with_classes(n_classes: usize) -> Self {
        NetworkConfig {
            n_classes,
            ..Default::default()
        }
    }

    pub fn geometry(&self) -> Result<Geometry, NetworkError> {
        Geometry::new(self)
    }
}

/// Derived layer sizes and parameter offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub conv1: ConvGeom,
    pub pool_len: usize,
    pub conv2: ConvGeom,
    pub flat_len: usize,
    pub n_classes: usize,
    offsets: [usize; 7],
}

const W1: usize = 0;
const B1: usize = 1;
const W2: usize = 2;
const B2: usize = 3;
const WD: usize = 4;
const BD: usize = 5;

impl Geometry {
    fn new(c: &NetworkConfig) -> Result<Geometry, NetworkError> {
        let bad = |m: String| Err(NetworkError::InvalidConfig(m));
        if c.n_classes < 2 {
            return bad(format!("n_classes must be at least 2, got {}", c.n_classes));
        }
        if !(0.0..1.0).contains(&c.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", c.dropout_rate));
        }
        if c.pool == 0 {
            return bad("pool window must be positive".into());
        }
        let Some(conv1) = ConvGeom::new(
            1,
            c.input_len,
            c.conv1_filters,
            c.kernel,
            c.stride,
            c.padding,
        ) else {
            return bad(format!(
                "first convolution collapses (input {}, kernel {}, stride {})",
                c.input_len, c.kernel, c.stride
            ));
        };
        let pool_len = ops::pool_out_len(conv1.out_len, c.pool);
        let Some(conv2) = ConvGeom::new(
            c.conv1_filters,
            pool_len,
            c.conv2_filters,
            c.kernel,
            c.stride,
            c.padding,
        ) else {
            return bad(format!(
                "second convolution collapses (pooled length {pool_len}, kernel {})",
                c.kernel
            ));
        };
        let flat_len = conv2.output_size();
        let sizes = [
            conv1.weight_len(),
            conv1.filters,
            conv2.weight_len(),
            conv2.filters,
            c.n_classes * flat_len,
            c.n_classes,
        ];
        let mut offsets = [0usize; 7];
        for (i, s) in sizes.iter().enumerate() {
            offsets[i + 1] = offsets[i] + s;
        }
        Ok(Geometry {
            conv1,
            pool_len,
            conv2,
            flat_len,
            n_classes: c.n_classes,
            offsets,
        })
    }

    pub fn param_count(&self) -> usize {
        self.offsets[6]
    }

    /// Trainable parameters per layer: conv1, conv2, dense.
    pub fn param_breakdown(&self) -> [usize; 3] {
        let o = &self.offsets;
        [o[2] - o[0], o[4] - o[2], o[6] - o[4]]
    }

    fn range(&self, t: usize) -> std::ops::Range<usize> {
        self.offsets[t]..self.offsets[t + 1]
    }
}

/// Intermediate activations of one forward pass, kept for backward.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    input: Vec<f64>,
    conv1_pre: Vec<f64>,
    pooled: Vec<f64>,
    argmax: Vec<usize>,
    conv2_pre: Vec<f64>,
    mask: Option<Vec<f64>>,
    dense_in: Vec<f64>,
    pub scores: Vec<f64>,
}

/// Forward results for a batch, with per-sample losses and score gradients.
#[derive(Debug, Clone)]
pub struct BatchForward {
    version: u64,
    caches: Vec<ForwardCache>,
    pub losses: Vec<f64>,
    pub score_grads: Vec<Vec<f64>>,
}

impl BatchForward {
    pub fn mean_loss(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len().max(1) as f64
    }

    pub fn scores(&self) -> impl Iterator<Item = &[f64]> {
        self.caches.iter().map(|c| c.scores.as_slice())
    }

    /// Replaces the score gradients, e.g. to probe with a custom signal.
    pub fn set_score_grads(&mut self, grads: Vec<Vec<f64>>) {
        self.score_grads = grads;
    }
}

/// Samples per partial gradient sum. Fixed so the summation order does not
/// depend on the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    geom: Geometry,
    params: Vec<f64>,
    /// Base seed for dropout masks during training.
    pub dropout_seed: u64,
    version: u64,
}

impl Network {
    /// Glorot-uniform weights, zero biases.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Network, NetworkError> {
        let mut net = Network::zeroed(config)?;
        let g = net.geom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.kernel;
        let fans = [
            (W1, g.conv1.in_channels * k, g.conv1.filters * k),
            (W2, g.conv2.in_channels * k, g.conv2.filters * k),
            (WD, g.flat_len, g.n_classes),
        ];
        for (t, fan_in, fan_out) in fans {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            for w in &mut net.params[g.range(t)] {
                *w = dist.sample(&mut rng);
            }
        }
        net.dropout_seed = seed;
        Ok(net)
    }

    pub fn zeroed(config: NetworkConfig) -> Result<Network, NetworkError> {
        let geom = config.geometry()?;
        Ok(Network {
            config,
            geom,
            params: vec![0.0; geom.param_count()],
            dropout_seed: 0,
            version: 0,
        })
    }

    pub fn from_params(
        config: NetworkConfig,
        params: Vec<f64>,
        dropout_seed: u64,
    ) -> Result<Network, NetworkError> {
        let mut net = Network::zeroed(config)?;
        if params.len() != net.params.len() {
            return Err(NetworkError::ShapeMismatch {
                what: "parameter vector",
                expected: net.params.len(),
                got: params.len(),
            });
        }
        net.params = params;
        net.dropout_seed = dropout_seed;
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameters. Invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    /// Zeroes the dense layer (weights and bias).
    pub fn zero_dense(&mut self) {
        let (w, b) = (self.geom.range(WD), self.geom.range(BD));
        let p = self.params_mut();
        p[w].fill(0.0);
        p[b].fill(0.0);
    }

    fn tensor(&self, t: usize) -> &[f64] {
        &self.params[self.geom.range(t)]
    }

    /// Forward pass. `dropout_seed` enables train-mode dropout with a mask
    /// drawn from that seed; `None` runs in eval mode.
    pub fn forward(
        &self,
        input: &[f64],
        dropout_seed: Option<u64>,
    ) -> Result<ForwardCache, NetworkError> {
        let g = &self.geom;
        if input.len() != self.config.input_len {
            return Err(NetworkError::ShapeMismatch {
                what: "network input",
                expected: self.config.input_len,
                got: input.len(),
            });
        }
        let mut conv1_pre = vec![0.0; g.conv1.output_size()];
        ops::conv1d_forward(
            &g.conv1,
            input,
            self.tensor(W1),
            self.tensor(B1),
            &mut conv1_pre,
        )?;
        let mut act1 = conv1_pre.clone();
        ops::relu_inplace(&mut act1);
        let mut pooled = vec![0.0; g.conv2.input_size()];
        let mut argmax = vec![0usize; pooled.len()];
        ops::maxpool_forward(
            &act1,
            g.conv1.filters,
            g.conv1.out_len,
            self.config.pool,
            &mut pooled,
            &mut argmax,
        )?;
        let mut conv2_pre = vec![0.0; g.flat_len];
        ops::conv1d_forward(
            &g.conv2,
            &pooled,
            self.tensor(W2),
            self.tensor(B2),
            &mut conv2_pre,
        )?;
        let mut dense_in = conv2_pre.clone();
        ops::relu_inplace(&mut dense_in);
        let mask = dropout_seed.map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            ops::dropout_mask(dense_in.len(), self.config.dropout_rate, &mut rng)
        });
        if let Some(m) = &mask {
            for (x, k) in dense_in.iter_mut().zip(m) {
                *x *= k;
            }
        }
        let mut scores = vec![0.0; g.n_classes];
        ops::dense_forward(&dense_in, self.tensor(WD), self.tensor(BD), &mut scores)?;
        Ok(ForwardCache {
            version: self.version,
            input: input.to_vec(),
            conv1_pre,
            pooled,
            argmax,
            conv2_pre,
            mask,
            dense_in,
            scores,
        })
    }

    /// Eval-mode class scores.
    pub fn scores(&self, input: &[f64]) -> Result<Vec<f64>, NetworkError> {
        Ok(self.forward(input, None)?.scores)
    }

    /// Accumulates the parameter gradient of one sample into `grads`, given
    /// the gradient of the loss with respect to the scores.
    pub fn backward_sample(
        &self,
        cache: &ForwardCache,
        score_grad: &[f64],
        grads: &mut [f64],
    ) -> Result<(), NetworkError> {
        if cache.version != self.version || cache.input.len() != self.config.input_len {
            return Err(NetworkError::StaleCache);
        }
        if score_grad.len() != self.geom.n_classes {
            return Err(NetworkError::ShapeMismatch {
                what: "score gradient",
                expected: self.geom.n_classes,
                got: score_grad.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(NetworkError::ShapeMismatch {
                what: "gradient buffer",
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        let g = &self.geom;
        let o = g.offsets;
        let (g_w1, rest) = grads.split_at_mut(o[B1]);
        let (g_b1, rest) = rest.split_at_mut(o[W2] - o[B1]);
        let (g_w2, rest) = rest.split_at_mut(o[B2] - o[W2]);
        let (g_b2, rest) = rest.split_at_mut(o[WD] - o[B2]);
        let (g_wd, g_bd) = rest.split_at_mut(o[BD] - o[WD]);

        let mut d_dense_in = vec![0.0; g.flat_len];
        ops::dense_backward(
            &cache.dense_in,
            self.tensor(WD),
            score_grad,
            g_wd,
            g_bd,
            &mut d_dense_in,
        );
        if let Some(m) = &cache.mask {
            for (d, k) in d_dense_in.iter_mut().zip(m) {
                *d *= k;
            }
        }
        ops::relu_backward(&cache.conv2_pre, &mut d_dense_in);
        let mut d_pooled = vec![0.0; g.conv2.input_size()];
        ops::conv1d_backward(
            &g.conv2,
            &cache.pooled,
            self.tensor(W2),
            &d_dense_in,
            g_w2,
            g_b2,
            Some(&mut d_pooled),
        );
        let mut d_act1 = vec![0.0; g.conv1.output_size()];
        ops::maxpool_backward(&d_pooled, &cache.argmax, &mut d_act1);
        ops::relu_backward(&cache.conv1_pre, &mut d_act1);
        ops::conv1d_backward(
            &g.conv1,
            &cache.input,
            self.tensor(W1),
            &d_act1,
            g_w1,
            g_b1,
            None,
        );
        Ok(())
    }

    /// Forward pass over a batch plus per-sample loss gradients.
    /// `dropout_seeds`, when given, holds one mask seed per sample.
    pub fn forward_batch<X: AsRef<[f64]> + Sync>(
        &self,
        inputs: &[X],
        labels: &[usize],
        dropout_seeds: Option<&[u64]>,
    ) -> Result<BatchForward, NetworkError> {
        if inputs.len() != labels.len() {
            return Err(NetworkError::ShapeMismatch {
                what: "batch labels",
                expected: inputs.len(),
                got: labels.len(),
            });
        }
        if let Some(s) = dropout_seeds {
            if s.len() != inputs.len() {
                return Err(NetworkError::ShapeMismatch {
                    what: "dropout seeds",
                    expected: inputs.len(),
                    got: s.len(),
                });
            }
        }
        let head = self.config.head;
        let results: Vec<_> = inputs
            .par_iter()
            .zip(labels.par_iter())
            .enumerate()
            .map(|(i, (x, &y))| {
                let cache = self.forward(x.as_ref(), dropout_seeds.map(|s| s[i]))?;
                let (loss, grad) = loss_and_grad(&cache.scores, y, head)?;
                Ok((cache, loss, grad))
            })
            .collect::<Result<_, NetworkError>>()?;
        let mut out = BatchForward {
            version: self.version,
            caches: Vec::with_capacity(results.len()),
            losses: Vec::with_capacity(results.len()),
            score_grads: Vec::with_capacity(results.len()),
        };
        for (c, l, g) in results {
            out.caches.push(c);
            out.losses.push(l);
            out.score_grads.push(g);
        }
        Ok(out)
    }

    /// Batch-mean parameter gradient for a cached forward pass.
    pub fn backward(&self, fwd: &BatchForward) -> Result<Vec<f64>, NetworkError> {
        if fwd.version != self.version {
            return Err(NetworkError::StaleCache);
        }
        let n = fwd.caches.len();
        if n == 0 {
            return Ok(vec![0.0; self.params.len()]);
        }
        let partials: Vec<Vec<f64>> = fwd
            .caches
            .par_chunks(GRAD_CHUNK)
            .zip(fwd.score_grads.par_chunks(GRAD_CHUNK))
            .map(|(caches, sgs)| {
                let mut acc = vec![0.0; self.params.len()];
                for (c, sg) in caches.iter().zip(sgs) {
                    self.backward_sample(c, sg, &mut acc)?;
                }
                Ok(acc)
            })
            .collect::<Result<_, NetworkError>>()?;
        let mut total = vec![0.0; self.params.len()];
        for p in &partials {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        let inv = 1.0 / n as f64;
        for t in &mut total {
            *t *= inv;
        }
        Ok(total)
    }

    pub fn predict_values(&self, input: &[f64]) -> Result<Vec<f64>, NetworkError> {
        Ok(probabilities(&self.scores(input)?, self.config.head))
    }

    /// Class probabilities in eval mode.
    pub fn predict(&self, sample: &ByteSample) -> Result<Vec<f64>, NetworkError> {
        if sample.len() != self.config.input_len {
            return Err(NetworkError::ShapeMismatch {
                what: "sample length",
                expected: self.config.input_len,
                got: sample.len(),
            });
        }
        self.predict_values(&sample.values())
    }

    pub fn predict_class(&self, sample: &ByteSample) -> Result<usize, NetworkError> {
        Ok(argmax(&self.predict(sample)?))
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
