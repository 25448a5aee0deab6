//! Layer primitives on flat channel-major buffers (`x[c * len + t]`).
//!
//! Forward functions write into caller-provided output slices; backward
//! functions accumulate (`+=`) into gradient slices so a batch can share one
//! buffer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NetworkError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

/// Index arithmetic of one 1D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub in_len: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub out_len: usize,
}

impl ConvGeom {
    /// `None` when the configuration leaves no output positions.
    pub fn new(
        in_channels: usize,
        in_len: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Option<ConvGeom> {
        if in_channels == 0 || in_len == 0 || filters == 0 || kernel == 0 || stride == 0 {
            return None;
        }
        let (out_len, pad_left) = match padding {
            Padding::Valid => {
                if in_len < kernel {
                    return None;
                }
                ((in_len - kernel) / stride + 1, 0)
            }
            Padding::Same => {
                let out = in_len.div_ceil(stride);
                let total = ((out - 1) * stride + kernel).saturating_sub(in_len);
                (out, total / 2)
            }
        };
        Some(ConvGeom {
            in_channels,
            in_len,
            filters,
            kernel,
            stride,
            pad_left,
            out_len,
        })
    }

    pub fn weight_len(&self) -> usize {
        self.filters * self.in_channels * self.kernel
    }

    pub fn input_size(&self) -> usize {
        self.in_channels * self.in_len
    }

    pub fn output_size(&self) -> usize {
        self.filters * self.out_len
    }

    /// Kernel taps `[k_lo, k_hi)` that land inside the input for output
    /// position `t`, and the input index of tap 0.
    #[inline]
    fn taps(&self, t: usize) -> (usize, usize, isize) {
        let start = (t * self.stride) as isize - self.pad_left as isize;
        let k_lo = (-start).max(0) as usize;
        let k_hi = ((self.in_len as isize - start).max(0) as usize).min(self.kernel);
        (k_lo, k_hi.max(k_lo), start)
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), NetworkError> {
    if expected == got {
        Ok(())
    } else {
        Err(NetworkError::ShapeMismatch {
            what,
            expected,
            got,
        })
    }
}

/// Cross-correlation plus bias, no activation. Weights are laid out
/// `[filter][in_channel][tap]`.
pub fn conv1d_forward(
    g: &ConvGeom,
    input: &[f64],
    weights: &[f64],
    bias: &[f64],
    out: &mut [f64],
) -> Result<(), NetworkError> {
    check_len("conv input", g.input_size(), input.len())?;
    check_len("conv weights", g.weight_len(), weights.len())?;
    check_len("conv bias", g.filters, bias.len())?;
    check_len("conv output", g.output_size(), out.len())?;
    let k = g.kernel;
    for f in 0..g.filters {
        let wf = &weights[f * g.in_channels * k..(f + 1) * g.in_channels * k];
        let of = &mut out[f * g.out_len..(f + 1) * g.out_len];
        for (t, o) in of.iter_mut().enumerate() {
            let (k_lo, k_hi, start) = g.taps(t);
            let base = (start + k_lo as isize) as usize;
            let n = k_hi - k_lo;
            let mut acc = bias[f];
            for c in 0..g.in_channels {
                let w = &wf[c * k + k_lo..c * k + k_hi];
                let x = &input[c * g.in_len + base..c * g.in_len + base + n];
                acc += dot(w, x);
            }
            *o = acc;
        }
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorize.
    let mut s = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        s[0] += a[j] * b[j];
        s[1] += a[j + 1] * b[j + 1];
        s[2] += a[j + 2] * b[j + 2];
        s[3] += a[j + 3] * b[j + 3];
    }
    let mut acc = (s[0] + s[1]) + (s[2] + s[3]);
    for j in chunks * 4..a.len() {
        acc += a[j] * b[j];
    }
    acc
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Accumulates weight, bias and (optionally) input gradients given the
/// gradient of the pre-activation output.
pub fn conv1d_backward(
    g: &ConvGeom,
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    mut grad_in: Option<&mut [f64]>,
) {
    let k = g.kernel;
    for f in 0..g.filters {
        let wf = &weights[f * g.in_channels * k..(f + 1) * g.in_channels * k];
        let gof = &grad_out[f * g.out_len..(f + 1) * g.out_len];
        let gwf = &mut grad_w[f * g.in_channels * k..(f + 1) * g.in_channels * k];
        for (t, &go) in gof.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            grad_b[f] += go;
            let (k_lo, k_hi, start) = g.taps(t);
            let base = (start + k_lo as isize) as usize;
            let n = k_hi - k_lo;
            for c in 0..g.in_channels {
                let x = &input[c * g.in_len + base..c * g.in_len + base + n];
                axpy(go, x, &mut gwf[c * k + k_lo..c * k + k_hi]);
                if let Some(gi) = grad_in.as_deref_mut() {
                    let w = &wf[c * k + k_lo..c * k + k_hi];
                    axpy(go, w, &mut gi[c * g.in_len + base..c * g.in_len + base + n]);
                }
            }
        }
    }
}

pub fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries whose pre-activation was not positive.
pub fn relu_backward(pre: &[f64], grad: &mut [f64]) {
    for (g, &z) in grad.iter_mut().zip(pre) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn pool_out_len(len: usize, pool: usize) -> usize {
    len.div_ceil(pool)
}

/// Non-overlapping max pooling per channel; a trailing partial window is
/// pooled as-is. Ties resolve to the first index. `argmax` receives
/// absolute input indices.
pub fn maxpool_forward(
    input: &[f64],
    channels: usize,
    len: usize,
    pool: usize,
    out: &mut [f64],
    argmax: &mut [usize],
) -> Result<(), NetworkError> {
    if pool == 0 || len == 0 {
        return Err(NetworkError::InvalidConfig(
            "pooling needs a positive window and input".into(),
        ));
    }
    let out_len = pool_out_len(len, pool);
    check_len("pool input", channels * len, input.len())?;
    check_len("pool output", channels * out_len, out.len())?;
    check_len("pool argmax", channels * out_len, argmax.len())?;
    for c in 0..channels {
        let row = &input[c * len..(c + 1) * len];
        for (w, window) in row.chunks(pool).enumerate() {
            let mut best = 0;
            for (i, &v) in window.iter().enumerate() {
                if v > window[best] {
                    best = i;
                }
            }
            out[c * out_len + w] = window[best];
            argmax[c * out_len + w] = c * len + w * pool + best;
        }
    }
    Ok(())
}

pub fn maxpool_backward(grad_out: &[f64], argmax: &[usize], grad_in: &mut [f64]) {
    for (&g, &i) in grad_out.iter().zip(argmax) {
        grad_in[i] += g;
    }
}

/// Inverted dropout mask: each entry is 0 with probability `rate`,
/// otherwise `1/(1-rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Applies dropout. Returns the mask used in train mode.
pub fn dropout<R: Rng + ?Sized>(
    input: &[f64],
    rate: f64,
    mode: DropoutMode,
    rng: &mut R,
) -> (Vec<f64>, Option<Vec<f64>>) {
    match mode {
        DropoutMode::Eval => (input.to_vec(), None),
        DropoutMode::Train => {
            let mask = dropout_mask(input.len(), rate, rng);
            let out = input.iter().zip(&mask).map(|(x, m)| x * m).collect();
            (out, Some(mask))
        }
    }
}

/// `out = W·x + b` with `W` stored row-major `[out][in]`.
pub fn dense_forward(
    input: &[f64],
    weights: &[f64],
    bias: &[f64],
    out: &mut [f64],
) -> Result<(), NetworkError> {
    let n_out = bias.len();
    check_len("dense output", n_out, out.len())?;
    check_len("dense weights", n_out * input.len(), weights.len())?;
    for (j, o) in out.iter_mut().enumerate() {
        let row = &weights[j * input.len()..(j + 1) * input.len()];
        *o = bias[j] + dot(row, input);
    }
    Ok(())
}

pub fn dense_backward(
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    grad_in: &mut [f64],
) {
    let n_in = input.len();
    for (j, &g) in grad_out.iter().enumerate() {
        grad_b[j] += g;
        if g == 0.0 {
            continue;
        }
        axpy(g, input, &mut grad_w[j * n_in..(j + 1) * n_in]);
        axpy(g, &weights[j * n_in..(j + 1) * n_in], grad_in);
    }
}
