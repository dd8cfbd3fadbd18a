//! The fixed architecture: three blocks of conv -> BatchNorm -> ReLU -> 2x2
//! max-pool, global average pooling, then FC1 -> ReLU -> FC2.
//!
//! Global average pooling sits in front of FC1 so the same head accepts
//! 32x32 training images and 224x224 stimuli.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::rules::FeedbackWeights;
use crate::tensor::{
    affine_backward, affine_forward, affine_transport, batchnorm_backward, batchnorm_forward,
    conv2d_backward_input, conv2d_backward_weights, conv2d_forward, global_avg_pool_backward,
    global_avg_pool_forward, maxpool2x2_backward, maxpool2x2_forward, relu_backward, relu_forward,
    BatchNormCache, BnMode, ConvSpec, PoolIndices, RunningStats, Tensor,
};

/// Input resolutions the network accepts.
pub const SUPPORTED_RESOLUTIONS: [usize; 2] = [32, 224];

/// Named activation taps, in network order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tap {
    Conv1,
    Conv2,
    Conv3,
    Fc1,
    Fc2,
}

impl Tap {
    pub const ALL: [Tap; 5] = [Tap::Conv1, Tap::Conv2, Tap::Conv3, Tap::Fc1, Tap::Fc2];

    pub fn name(self) -> &'static str {
        match self {
            Tap::Conv1 => "conv1",
            Tap::Conv2 => "conv2",
            Tap::Conv3 => "conv3",
            Tap::Fc1 => "fc1",
            Tap::Fc2 => "fc2",
        }
    }

    /// Conv block index for conv taps.
    pub fn conv_index(self) -> Option<usize> {
        match self {
            Tap::Conv1 => Some(0),
            Tap::Conv2 => Some(1),
            Tap::Conv3 => Some(2),
            _ => None,
        }
    }
}

impl fmt::Display for Tap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Tap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Tap::ALL
            .into_iter()
            .find(|t| t.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown tap '{s}' (expected conv1, conv2, conv3, fc1 or fc2)")))
    }
}

/// Layer sizes. Kernels are 3x3, stride 1, padding 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub in_channels: usize,
    pub conv_widths: [usize; 3],
    pub fc_width: usize,
    pub num_classes: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            in_channels: 3,
            conv_widths: [32, 64, 128],
            fc_width: 512,
            num_classes: 10,
        }
    }
}

impl Architecture {
    pub fn conv_spec(&self, block: usize) -> ConvSpec {
        let cin = if block == 0 {
            self.in_channels
        } else {
            self.conv_widths[block - 1]
        };
        ConvSpec::new(cin, self.conv_widths[block], 3, 1, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.conv_widths.contains(&0) || self.fc_width == 0 || self.num_classes < 2 {
            return Err(Error::Config(format!("invalid architecture {:?}", self)));
        }
        Ok(())
    }

    /// Feature dimension stored for a tap.
    pub fn tap_dim(&self, tap: Tap) -> usize {
        match tap {
            Tap::Conv1 => self.conv_widths[0],
            Tap::Conv2 => self.conv_widths[1],
            Tap::Conv3 => self.conv_widths[2],
            Tap::Fc1 => self.fc_width,
            Tap::Fc2 => self.num_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub spec: ConvSpec,
    pub weight: Tensor,
    pub bias: Tensor,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub stats: RunningStats,
}

/// `y = x W^T + b`, `W: [out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub arch: Architecture,
    pub convs: [ConvBlock; 3],
    pub fc1: Dense,
    pub fc2: Dense,
    pub seed: u64,
}

/// He-normal weights (`N(0, sqrt(2 / fan_in))`), zero biases, identity BatchNorm.
pub fn init_he_normal(arch: &Architecture, seed: u64) -> Result<NetworkState> {
    arch.validate()?;
    let mut rng = rng::stream(seed, "init");
    let mut block = |i: usize| -> ConvBlock {
        let spec = arch.conv_spec(i);
        let c = spec.out_channels;
        ConvBlock {
            spec,
            weight: he_normal(&spec.weight_shape(), spec.fan_in(), &mut rng),
            bias: Tensor::zeros(&[c]),
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            stats: RunningStats::new(c),
        }
    };
    let convs = [block(0), block(1), block(2)];
    let c3 = arch.conv_widths[2];
    let fc1 = Dense {
        weight: he_normal(&[arch.fc_width, c3], c3, &mut rng),
        bias: Tensor::zeros(&[arch.fc_width]),
    };
    let fc2 = Dense {
        weight: he_normal(&[arch.num_classes, arch.fc_width], arch.fc_width, &mut rng),
        bias: Tensor::zeros(&[arch.num_classes]),
    };
    Ok(NetworkState {
        arch: arch.clone(),
        convs,
        fc1,
        fc2,
        seed,
    })
}

pub(crate) fn he_normal(shape: &[usize], fan_in: usize, rng: &mut rng::StreamRng) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| normal.sample(rng)).collect()).expect("shape product")
}

/// Everything a conv block backward pass needs.
#[derive(Debug, Clone)]
pub struct BlockCache {
    pub input: Tensor,
    pub bn: BatchNormCache,
    /// BatchNorm output (ReLU input).
    pub pre_relu: Tensor,
    /// Post-ReLU, pre-pool activation.
    pub post_relu: Tensor,
    pub pool: PoolIndices,
    pub output: Tensor,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    pub gap_input_shape: Vec<usize>,
    pub gap: Tensor,
    pub fc1_pre: Tensor,
    pub fc1_out: Tensor,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub blocks: Vec<BlockCache>,
    pub head: HeadCache,
    pub logits: Tensor,
}

impl ForwardCache {
    /// Raw (not spatially averaged) activation at a tap.
    pub fn tap(&self, tap: Tap) -> &Tensor {
        match tap.conv_index() {
            Some(i) => &self.blocks[i].output,
            None if tap == Tap::Fc1 => &self.head.fc1_out,
            None => &self.logits,
        }
    }
}

fn check_input(state: &NetworkState, batch: &Tensor) -> Result<()> {
    let [_, c, h, w] = batch.dims4("network input")?;
    if c != state.arch.in_channels {
        return Err(Error::Config(format!(
            "network expects {} input channels, batch has shape {:?}",
            state.arch.in_channels,
            batch.shape()
        )));
    }
    if h != w || !SUPPORTED_RESOLUTIONS.contains(&h) {
        return Err(Error::Config(format!(
            "unsupported input resolution {h}x{w}; expected one of {:?}",
            SUPPORTED_RESOLUTIONS
        )));
    }
    Ok(())
}

pub fn block_forward(block: &mut ConvBlock, input: &Tensor, mode: BnMode) -> Result<BlockCache> {
    let z = conv2d_forward(input, &block.weight, &block.bias, &block.spec)?;
    let (pre_relu, bn) = batchnorm_forward(&z, &block.gamma, &block.beta, &mut block.stats, mode)?;
    let post_relu = relu_forward(&pre_relu);
    let (output, pool) = maxpool2x2_forward(&post_relu)?;
    Ok(BlockCache {
        input: input.clone(),
        bn,
        pre_relu,
        post_relu,
        pool,
        output,
    })
}

/// Classifier head on conv3 output: GAP -> FC1 -> ReLU -> FC2.
pub fn head_forward(state: &NetworkState, conv3_out: &Tensor) -> Result<(Tensor, HeadCache)> {
    let gap = global_avg_pool_forward(conv3_out)?;
    let fc1_pre = affine_forward(&gap, &state.fc1.weight, &state.fc1.bias)?;
    let fc1_out = relu_forward(&fc1_pre);
    let logits = affine_forward(&fc1_out, &state.fc2.weight, &state.fc2.bias)?;
    Ok((
        logits,
        HeadCache {
            gap_input_shape: conv3_out.shape().to_vec(),
            gap,
            fc1_pre,
            fc1_out,
        },
    ))
}

/// Full forward pass. Train mode updates BatchNorm running statistics.
pub fn forward(state: &mut NetworkState, batch: &Tensor, mode: BnMode) -> Result<(Tensor, ForwardCache)> {
    check_input(state, batch)?;
    let mut blocks = Vec::with_capacity(3);
    let mut x = batch.clone();
    for block in state.convs.iter_mut() {
        let cache = block_forward(block, &x, mode)?;
        x = cache.output.clone();
        blocks.push(cache);
    }
    let (logits, head) = head_forward(state, &x)?;
    Ok((
        logits.clone(),
        ForwardCache { blocks, head, logits },
    ))
}

/// Eval-mode forward that keeps only the tap outputs (conv taps spatially
/// averaged). Returns one `[B, dim]` matrix per tap in [`Tap::ALL`] order.
pub fn forward_taps(state: &NetworkState, batch: &Tensor) -> Result<Vec<Tensor>> {
    check_input(state, batch)?;
    let mut taps = Vec::with_capacity(5);
    let mut x = batch.clone();
    for block in &state.convs {
        let z = conv2d_forward(&x, &block.weight, &block.bias, &block.spec)?;
        let mut stats = block.stats.clone();
        let (bn, _) = batchnorm_forward(&z, &block.gamma, &block.beta, &mut stats, BnMode::Eval)?;
        let (pooled, _) = maxpool2x2_forward(&relu_forward(&bn))?;
        taps.push(global_avg_pool_forward(&pooled)?);
        x = pooled;
    }
    let (logits, head) = head_forward(state, &x)?;
    taps.push(head.fc1_out);
    taps.push(logits);
    Ok(taps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockGrads {
    pub weight: Tensor,
    pub bias: Tensor,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Parameter gradients; `convs` is empty when only the readout was trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub convs: Vec<ConvBlockGrads>,
    pub fc1: DenseGrads,
    pub fc2: DenseGrads,
}

/// Backward through the head. Returns the head gradients and the gradient
/// arriving at the conv3 output. With `feedback`, error transport through
/// FC2 and FC1 uses the fixed feedback matrices instead of `W^T`.
pub fn head_backward(
    state: &NetworkState,
    head: &HeadCache,
    grad_logits: &Tensor,
    feedback: Option<&FeedbackWeights>,
) -> Result<(DenseGrads, DenseGrads, Tensor)> {
    let g2 = affine_backward(grad_logits, &head.fc1_out, &state.fc2.weight)?;
    let d_fc1_out = match feedback {
        Some(fb) => affine_transport(grad_logits, &fb.fc2)?,
        None => g2.input,
    };
    let d_fc1_pre = relu_backward(&d_fc1_out, &head.fc1_pre)?;
    let g1 = affine_backward(&d_fc1_pre, &head.gap, &state.fc1.weight)?;
    let d_gap = match feedback {
        Some(fb) => affine_transport(&d_fc1_pre, &fb.fc1)?,
        None => g1.input,
    };
    let d_conv3 = global_avg_pool_backward(&d_gap, &head.gap_input_shape)?;
    Ok((
        DenseGrads {
            weight: g1.weights,
            bias: g1.bias,
        },
        DenseGrads {
            weight: g2.weights,
            bias: g2.bias,
        },
        d_conv3,
    ))
}

/// Backward through one conv block from the gradient at its pooled output
/// to the gradient at the conv pre-activation (before BatchNorm is undone)
/// plus the BatchNorm parameter gradients.
pub fn block_local_backward(block: &ConvBlock, cache: &BlockCache, grad_out: &Tensor) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let d_relu = maxpool2x2_backward(grad_out, &cache.pool)?;
    let d_bn_out = relu_backward(&d_relu, &cache.pre_relu)?;
    let bn = batchnorm_backward(&d_bn_out, &block.gamma, &cache.bn)?;
    Ok((bn.input, bn.gamma, bn.beta))
}

/// Full backward pass. `feedback = None` is exact backpropagation.
pub fn backward(
    state: &NetworkState,
    cache: &ForwardCache,
    grad_logits: &Tensor,
    feedback: Option<&FeedbackWeights>,
) -> Result<Gradients> {
    let (fc1, fc2, mut grad) = head_backward(state, &cache.head, grad_logits, feedback)?;
    let mut convs = Vec::with_capacity(3);
    for i in (0..3).rev() {
        let block = &state.convs[i];
        let bc = &cache.blocks[i];
        let (dz, dgamma, dbeta) = block_local_backward(block, bc, &grad)?;
        let (dw, db) = conv2d_backward_weights(&dz, &bc.input, &block.spec)?;
        if i > 0 {
            let [_, _, h, w] = bc.input.dims4("block input")?;
            grad = match feedback {
                Some(fb) => conv2d_backward_input(&dz, &fb.conv_forward_shaped(i)?, &block.spec, h, w)?,
                None => conv2d_backward_input(&dz, &block.weight, &block.spec, h, w)?,
            };
        }
        convs.push(ConvBlockGrads {
            weight: dw,
            bias: db,
            gamma: dgamma,
            beta: dbeta,
        });
    }
    convs.reverse();
    Ok(Gradients { convs, fc1, fc2 })
}

fn sgd(param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
    param.axpy(-lr, grad)
}

/// Plain SGD step `p -= lr * g` on every parameter present in `grads`.
pub fn apply_sgd(state: &mut NetworkState, grads: &Gradients, lr: f64) -> Result<()> {
    for (block, g) in state.convs.iter_mut().zip(&grads.convs) {
        sgd(&mut block.weight, &g.weight, lr)?;
        sgd(&mut block.bias, &g.bias, lr)?;
        for (p, d) in block.gamma.iter_mut().zip(&g.gamma) {
            *p -= lr * d;
        }
        for (p, d) in block.beta.iter_mut().zip(&g.beta) {
            *p -= lr * d;
        }
    }
    sgd(&mut state.fc1.weight, &grads.fc1.weight, lr)?;
    sgd(&mut state.fc1.bias, &grads.fc1.bias, lr)?;
    sgd(&mut state.fc2.weight, &grads.fc2.weight, lr)?;
    sgd(&mut state.fc2.bias, &grads.fc2.bias, lr)?;
    Ok(())
}

/// Spatially averaged activations of one tap over a stimulus set.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFeatures {
    pub tap: Tap,
    /// `[num_stimuli, feature_dim]`
    pub matrix: Tensor,
}

impl LayerFeatures {
    pub fn num_stimuli(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.matrix.data()[i * d..(i + 1) * d]
    }
}

const EXTRACT_CHUNK: usize = 8;

/// Eval-mode features for every tap, in [`Tap::ALL`] order. Stimuli are
/// processed in fixed-size chunks and reassembled in input order.
pub fn extract_all_features(state: &NetworkState, stimuli: &Tensor) -> Result<Vec<LayerFeatures>> {
    let n = stimuli.shape().first().copied().unwrap_or(0);
    if n == 0 {
        return Err(Error::Input("no stimuli to extract features from".into()));
    }
    let mut parts: Vec<Vec<Tensor>> = vec![Vec::new(); 5];
    let mut start = 0;
    while start < n {
        let end = (start + EXTRACT_CHUNK).min(n);
        for (acc, t) in parts.iter_mut().zip(forward_taps(state, &stimuli.slice_outer(start, end))?) {
            acc.push(t);
        }
        start = end;
    }
    Tap::ALL
        .into_iter()
        .zip(parts)
        .map(|(tap, p)| {
            Ok(LayerFeatures {
                tap,
                matrix: Tensor::concat_outer(&p)?,
            })
        })
        .collect()
}

pub fn extract_features(state: &NetworkState, stimuli: &Tensor, tap: Tap) -> Result<LayerFeatures> {
    let mut all = extract_all_features(state, stimuli)?;
    let idx = Tap::ALL.iter().position(|&t| t == tap).expect("tap in registry");
    Ok(all.swap_remove(idx))
}

/// Accuracy of argmax logits against labels, in eval mode.
pub fn evaluate_accuracy(state: &NetworkState, images: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Ok(f64::NAN);
    }
    let feats = extract_features(state, images, Tap::Fc2)?;
    let k = feats.dim();
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(i, &l)| argmax(&feats.matrix.data()[i * k..(i + 1) * k]) == l)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
