//! Differentiable 1-d network primitives: convolution, batch normalization,
//! ReLU, max pooling, adaptive average pooling, and transposed convolution.
//!
//! Every forward pass that participates in training returns enough cached
//! state for an exact reverse pass. Backward functions mirror their forward
//! counterpart and are validated against central finite differences.

use crate::error::{Error, Result};
use crate::numerics::RealArray;

/// Hyperparameters of one conv -> norm -> relu -> pool block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub pool: usize,
}

impl BlockSpec {
    pub fn conv_out_len(&self, in_len: usize) -> usize {
        (in_len + 2 * self.padding - self.kernel) / self.stride + 1
    }
    pub fn out_len(&self, in_len: usize) -> usize {
        self.conv_out_len(in_len) / self.pool
    }
}

/// Per-channel running statistics for batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

/// Cross-correlation of a `[C_in, L]` input with `[C_out, C_in, K]` kernels.
pub fn conv1d(
    input: &RealArray,
    kernels: &RealArray,
    stride: usize,
    padding: usize,
) -> Result<RealArray> {
    if input.shape.len() != 2 || kernels.shape.len() != 3 {
        return Err(Error::shape(format!(
            "conv1d expects input [C_in, L] and kernels [C_out, C_in, K], got {:?} and {:?}",
            input.shape, kernels.shape
        )));
    }
    let (c_in, len) = (input.shape[0], input.shape[1]);
    let (c_out, k_cin, k) = (kernels.shape[0], kernels.shape[1], kernels.shape[2]);
    if k_cin != c_in {
        return Err(Error::shape(format!(
            "conv1d kernel expects {k_cin} input channels, input has {c_in}"
        )));
    }
    if stride < 1 {
        return Err(Error::invalid("conv1d stride must be >= 1".to_string()));
    }
    if k > len + 2 * padding {
        return Err(Error::shape(format!(
            "conv1d kernel size {k} exceeds padded length {}",
            len + 2 * padding
        )));
    }
    let out_len = (len + 2 * padding - k) / stride + 1;
    let mut out = RealArray::zeros(&[c_out, out_len]);
    for co in 0..c_out {
        for o in 0..out_len {
            let mut acc = 0.0;
            for ci in 0..c_in {
                for j in 0..k {
                    let pos = o * stride + j;
                    if pos < padding || pos >= padding + len {
                        continue;
                    }
                    acc += kernels.at3(co, ci, j) * input.at2(ci, pos - padding);
                }
            }
            *out.at2_mut(co, o) = acc;
        }
    }
    Ok(out)
}

/// Gradients of `conv1d` with respect to the input and kernels.
pub fn conv1d_backward(
    input: &RealArray,
    kernels: &RealArray,
    stride: usize,
    padding: usize,
    grad_out: &RealArray,
) -> (RealArray, RealArray) {
    let (c_in, len) = (input.shape[0], input.shape[1]);
    let (c_out, _, k) = (kernels.shape[0], kernels.shape[1], kernels.shape[2]);
    let out_len = grad_out.shape[1];
    let mut grad_in = RealArray::zeros(&[c_in, len]);
    let mut grad_k = RealArray::zeros(&[c_out, c_in, k]);
    for co in 0..c_out {
        for o in 0..out_len {
            let g = grad_out.at2(co, o);
            if g == 0.0 {
                continue;
            }
            for ci in 0..c_in {
                for j in 0..k {
                    let pos = o * stride + j;
                    if pos < padding || pos >= padding + len {
                        continue;
                    }
                    let t = pos - padding;
                    grad_in.data[ci * len + t] += g * kernels.at3(co, ci, j);
                    grad_k.data[(co * c_in + ci) * k + j] += g * input.at2(ci, t);
                }
            }
        }
    }
    (grad_in, grad_k)
}

/// Transposed 1-d convolution (`[C_in, L]` -> `[C_out, (L-1)*stride + K]`),
/// the adjoint of `conv1d` with zero padding.
pub fn conv_transpose1d(input: &RealArray, kernels: &RealArray, stride: usize) -> Result<RealArray> {
    if input.shape.len() != 2 || kernels.shape.len() != 3 {
        return Err(Error::shape(format!(
            "conv_transpose1d expects input [C_in, L] and kernels [C_in, C_out, K], got {:?} and {:?}",
            input.shape, kernels.shape
        )));
    }
    let (c_in, len) = (input.shape[0], input.shape[1]);
    let (k_cin, c_out, k) = (kernels.shape[0], kernels.shape[1], kernels.shape[2]);
    if k_cin != c_in {
        return Err(Error::shape(format!(
            "conv_transpose1d kernel expects {k_cin} input channels, input has {c_in}"
        )));
    }
    let out_len = (len - 1) * stride + k;
    let mut out = RealArray::zeros(&[c_out, out_len]);
    for ci in 0..c_in {
        for t in 0..len {
            let x = input.at2(ci, t);
            if x == 0.0 {
                continue;
            }
            for co in 0..c_out {
                for j in 0..k {
                    out.data[co * out_len + t * stride + j] += x * kernels.at3(ci, co, j);
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of `conv_transpose1d` with respect to input and kernels.
pub fn conv_transpose1d_backward(
    input: &RealArray,
    kernels: &RealArray,
    stride: usize,
    grad_out: &RealArray,
) -> (RealArray, RealArray) {
    let (c_in, len) = (input.shape[0], input.shape[1]);
    let (_, c_out, k) = (kernels.shape[0], kernels.shape[1], kernels.shape[2]);
    let out_len = grad_out.shape[1];
    let mut grad_in = RealArray::zeros(&[c_in, len]);
    let mut grad_k = RealArray::zeros(&[c_in, c_out, k]);
    for ci in 0..c_in {
        for t in 0..len {
            let x = input.at2(ci, t);
            let mut acc = 0.0;
            for co in 0..c_out {
                for j in 0..k {
                    let g = grad_out.data[co * out_len + t * stride + j];
                    acc += g * kernels.at3(ci, co, j);
                    grad_k.data[(ci * c_out + co) * k + j] += g * x;
                }
            }
            grad_in.data[ci * len + t] = acc;
        }
    }
    (grad_in, grad_k)
}

pub struct BatchNormCache {
    pub normalized: Vec<RealArray>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub training: bool,
    pub count_per_channel: usize,
}

/// Per-channel batch normalization over a batch of `[C, L]` arrays.
///
/// Training mode normalizes with statistics of the batch itself; inference
/// mode uses the supplied running statistics.
pub fn batchnorm_forward(
    batch: &[RealArray],
    gamma: &RealArray,
    beta: &RealArray,
    running: &RunningStats,
    training: bool,
    eps: f64,
) -> Result<(Vec<RealArray>, BatchNormCache)> {
    if training && batch.is_empty() {
        return Err(Error::invalid(
            "batch normalization in training mode requires a non-empty batch".to_string(),
        ));
    }
    let channels = gamma.numel();
    let len = if batch.is_empty() { 0 } else { batch[0].shape[1] };
    let count = batch.len() * len;

    let (mean, var) = if training {
        let mut mean = vec![0.0; channels];
        let mut var = vec![0.0; channels];
        for x in batch {
            for c in 0..channels {
                for t in 0..len {
                    mean[c] += x.at2(c, t);
                }
            }
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        for x in batch {
            for c in 0..channels {
                for t in 0..len {
                    let d = x.at2(c, t) - mean[c];
                    var[c] += d * d;
                }
            }
        }
        for v in &mut var {
            *v /= count as f64;
        }
        (mean, var)
    } else {
        (running.mean.clone(), running.var.clone())
    };

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut outs = Vec::with_capacity(batch.len());
    let mut normalized = Vec::with_capacity(batch.len());
    for x in batch {
        let mut norm = RealArray::zeros(&x.shape);
        let mut y = RealArray::zeros(&x.shape);
        for c in 0..channels {
            for t in 0..len {
                let n = (x.at2(c, t) - mean[c]) * inv_std[c];
                *norm.at2_mut(c, t) = n;
                *y.at2_mut(c, t) = gamma.data[c] * n + beta.data[c];
            }
        }
        normalized.push(norm);
        outs.push(y);
    }
    Ok((
        outs,
        BatchNormCache {
            normalized,
            batch_mean: mean,
            batch_var: var,
            inv_std,
            training,
            count_per_channel: count,
        },
    ))
}

/// Backward pass of batch normalization. Returns per-sample input gradients
/// plus gradients for gamma and beta.
pub fn batchnorm_backward(
    cache: &BatchNormCache,
    gamma: &RealArray,
    grad_out: &[RealArray],
) -> (Vec<RealArray>, RealArray, RealArray) {
    let channels = gamma.numel();
    let len = if grad_out.is_empty() {
        0
    } else {
        grad_out[0].shape[1]
    };
    let count = cache.count_per_channel as f64;

    let mut grad_gamma = RealArray::zeros(&[channels]);
    let mut grad_beta = RealArray::zeros(&[channels]);
    for (g, norm) in grad_out.iter().zip(&cache.normalized) {
        for c in 0..channels {
            for t in 0..len {
                grad_gamma.data[c] += g.at2(c, t) * norm.at2(c, t);
                grad_beta.data[c] += g.at2(c, t);
            }
        }
    }

    let mut grads_in = Vec::with_capacity(grad_out.len());
    if cache.training {
        // d/dx of (x - mu) * inv_std with mu, var functions of the batch.
        for (g, norm) in grad_out.iter().zip(&cache.normalized) {
            let mut gi = RealArray::zeros(&g.shape);
            for c in 0..channels {
                for t in 0..len {
                    let dnorm = g.at2(c, t) * gamma.data[c];
                    let term = count * dnorm - grad_beta.data[c] * gamma.data[c]
                        - norm.at2(c, t) * grad_gamma.data[c] * gamma.data[c];
                    *gi.at2_mut(c, t) = cache.inv_std[c] * term / count;
                }
            }
            grads_in.push(gi);
        }
    } else {
        for g in grad_out {
            let mut gi = RealArray::zeros(&g.shape);
            for c in 0..channels {
                for t in 0..len {
                    *gi.at2_mut(c, t) = g.at2(c, t) * gamma.data[c] * cache.inv_std[c];
                }
            }
            grads_in.push(gi);
        }
    }
    (grads_in, grad_gamma, grad_beta)
}

/// Elementwise max(0, x).
pub fn relu(x: &RealArray) -> RealArray {
    RealArray {
        shape: x.shape.clone(),
        data: x.data.iter().map(|v| v.max(0.0)).collect(),
    }
}

pub fn relu_backward(pre_activation: &RealArray, grad_out: &RealArray) -> RealArray {
    let data = pre_activation
        .data
        .iter()
        .zip(&grad_out.data)
        .map(|(x, g)| if *x > 0.0 { *g } else { 0.0 })
        .collect();
    RealArray {
        shape: grad_out.shape.clone(),
        data,
    }
}

/// Non-overlapping max pooling over the last axis of a `[C, L]` array.
/// Remainder elements beyond the last full window are dropped.
pub fn maxpool1d(x: &RealArray, window: usize) -> (RealArray, Vec<usize>) {
    let (c, len) = (x.shape[0], x.shape[1]);
    let out_len = len / window;
    let mut out = RealArray::zeros(&[c, out_len]);
    let mut argmax = vec![0usize; c * out_len];
    for ch in 0..c {
        for o in 0..out_len {
            let mut best = f64::NEG_INFINITY;
            let mut best_idx = o * window;
            for j in 0..window {
                let t = o * window + j;
                let v = x.at2(ch, t);
                if v > best {
                    best = v;
                    best_idx = t;
                }
            }
            *out.at2_mut(ch, o) = best;
            argmax[ch * out_len + o] = best_idx;
        }
    }
    (out, argmax)
}

pub fn maxpool1d_backward(
    in_shape: &[usize],
    argmax: &[usize],
    grad_out: &RealArray,
) -> RealArray {
    let mut grad_in = RealArray::zeros(in_shape);
    let (c, out_len) = (grad_out.shape[0], grad_out.shape[1]);
    let in_len = in_shape[1];
    for ch in 0..c {
        for o in 0..out_len {
            grad_in.data[ch * in_len + argmax[ch * out_len + o]] += grad_out.at2(ch, o);
        }
    }
    grad_in
}

/// Adaptive average pooling of `[C, L]` down to `[C, out_len]`.
/// Segment i covers [floor(i*L/out), ceil((i+1)*L/out)).
pub fn adaptive_avg_pool1d(x: &RealArray, out_len: usize) -> RealArray {
    let (c, len) = (x.shape[0], x.shape[1]);
    let mut out = RealArray::zeros(&[c, out_len]);
    for ch in 0..c {
        for o in 0..out_len {
            let start = o * len / out_len;
            let end = ((o + 1) * len).div_ceil(out_len);
            let mut acc = 0.0;
            for t in start..end {
                acc += x.at2(ch, t);
            }
            *out.at2_mut(ch, o) = acc / (end - start) as f64;
        }
    }
    out
}

pub fn adaptive_avg_pool1d_backward(in_shape: &[usize], grad_out: &RealArray) -> RealArray {
    let (c, out_len) = (grad_out.shape[0], grad_out.shape[1]);
    let len = in_shape[1];
    let mut grad_in = RealArray::zeros(in_shape);
    for ch in 0..c {
        for o in 0..out_len {
            let start = o * len / out_len;
            let end = ((o + 1) * len).div_ceil(out_len);
            let share = grad_out.at2(ch, o) / (end - start) as f64;
            for t in start..end {
                grad_in.data[ch * len + t] += share;
            }
        }
    }
    grad_in
}

/// Parameters of one block, borrowed from a parameter store.
pub struct BlockParams<'a> {
    pub conv: &'a RealArray,
    pub gamma: &'a RealArray,
    pub beta: &'a RealArray,
}

pub struct BlockGrads {
    pub conv: RealArray,
    pub gamma: RealArray,
    pub beta: RealArray,
}

pub struct BlockCache {
    pub inputs: Vec<RealArray>,
    pub conv_out: Vec<RealArray>,
    pub bn: BatchNormCache,
    pub pre_relu: Vec<RealArray>,
    pub pool_argmax: Vec<Vec<usize>>,
    pub pool_in_shape: Vec<usize>,
}

/// conv1d -> batch norm -> ReLU -> max pool over a batch of `[C, L]` inputs.
pub fn nn_block_forward(
    batch: &[RealArray],
    params: BlockParams<'_>,
    spec: &BlockSpec,
    running: &RunningStats,
    training: bool,
    eps: f64,
) -> Result<(Vec<RealArray>, BlockCache)> {
    if training && batch.is_empty() {
        return Err(Error::invalid(
            "nn_block in training mode requires a non-empty batch".to_string(),
        ));
    }
    let mut conv_out = Vec::with_capacity(batch.len());
    for x in batch {
        conv_out.push(conv1d(x, params.conv, spec.stride, spec.padding)?);
    }
    let (bn_out, bn_cache) =
        batchnorm_forward(&conv_out, params.gamma, params.beta, running, training, eps)?;
    let mut outs = Vec::with_capacity(batch.len());
    let mut argmaxes = Vec::with_capacity(batch.len());
    let pool_in_shape = if bn_out.is_empty() {
        vec![0, 0]
    } else {
        bn_out[0].shape.clone()
    };
    for pre in &bn_out {
        let activated = relu(pre);
        let (pooled, argmax) = maxpool1d(&activated, spec.pool);
        outs.push(pooled);
        argmaxes.push(argmax);
    }
    Ok((
        outs,
        BlockCache {
            inputs: batch.to_vec(),
            conv_out,
            bn: bn_cache,
            pre_relu: bn_out,
            pool_argmax: argmaxes,
            pool_in_shape,
        },
    ))
}

pub fn nn_block_backward(
    cache: &BlockCache,
    params: BlockParams<'_>,
    spec: &BlockSpec,
    grad_out: &[RealArray],
) -> (Vec<RealArray>, BlockGrads) {
    let mut grad_pre_relu = Vec::with_capacity(grad_out.len());
    for (i, g) in grad_out.iter().enumerate() {
        let unpooled = maxpool1d_backward(&cache.pool_in_shape, &cache.pool_argmax[i], g);
        grad_pre_relu.push(relu_backward(&cache.pre_relu[i], &unpooled));
    }
    let (grad_bn_in, grad_gamma, grad_beta) =
        batchnorm_backward(&cache.bn, params.gamma, &grad_pre_relu);
    let mut grad_inputs = Vec::with_capacity(grad_out.len());
    let mut grad_conv = RealArray::zeros(&params.conv.shape);
    for (i, g) in grad_bn_in.iter().enumerate() {
        let (gi, gk) =
            conv1d_backward(&cache.inputs[i], params.conv, spec.stride, spec.padding, g);
        grad_conv.axpy(1.0, &gk);
        grad_inputs.push(gi);
    }
    (
        grad_inputs,
        BlockGrads {
            conv: grad_conv,
            gamma: grad_gamma,
            beta: grad_beta,
        },
    )
}

/// Momentum update of running statistics from the batch statistics in `cache`.
pub fn update_running_stats(running: &mut RunningStats, cache: &BatchNormCache, momentum: f64) {
    for c in 0..running.mean.len() {
        running.mean[c] = (1.0 - momentum) * running.mean[c] + momentum * cache.batch_mean[c];
        running.var[c] = (1.0 - momentum) * running.var[c] + momentum * cache.batch_var[c];
    }
}
