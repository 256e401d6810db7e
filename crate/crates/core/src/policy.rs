//! Fixed-topology feedforward policies.
//!
//! Parameters are stored flat, layer by layer: each layer's weights first
//! (output-major, row-major), then its biases. Convolution weights are laid out
//! `[out_channel][ky][kx][in_channel]` and activations are height-width-channel,
//! so one kernel row is a contiguous run of `kernel * in_channels` inputs.
//!
//! Every dot product goes through [`dot`], which accumulates in single
//! precision with a fixed lane split. The full forward pass and the incremental
//! evaluator in [`crate::env::maze`] share the per-output routines below, which
//! is what makes the two paths agree bitwise.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::{mix64, Seed, SplitMix64};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShapeError {
    #[error("policy has no layers")]
    NoLayers,
    #[error("layer {layer}: {reason}")]
    Layer { layer: usize, reason: String },
    #[error("input shape must be [len] or [height, width, channels], got {0:?}")]
    BadInputShape(Vec<usize>),
    #[error("expected {expected} parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("expected an observation of {expected} values, got {got}")]
    Observation { expected: usize, got: usize },
    #[error("expected a vector of length {expected}, got {got}")]
    Length { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

/// Shape of the policy input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub enum InputShape {
    Flat(usize),
    Image {
        height: usize,
        width: usize,
        channels: usize,
    },
}

impl InputShape {
    pub fn len(&self) -> usize {
        match *self {
            InputShape::Flat(n) => n,
            InputShape::Image {
                height,
                width,
                channels,
            } => height * width * channels,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl TryFrom<Vec<usize>> for InputShape {
    type Error = ShapeError;

    fn try_from(dims: Vec<usize>) -> Result<Self, Self::Error> {
        match dims.as_slice() {
            &[n] if n > 0 => Ok(InputShape::Flat(n)),
            &[height, width, channels] if height > 0 && width > 0 && channels > 0 => {
                Ok(InputShape::Image {
                    height,
                    width,
                    channels,
                })
            }
            _ => Err(ShapeError::BadInputShape(dims)),
        }
    }
}

impl From<InputShape> for Vec<usize> {
    fn from(shape: InputShape) -> Self {
        match shape {
            InputShape::Flat(n) => vec![n],
            InputShape::Image {
                height,
                width,
                channels,
            } => vec![height, width, channels],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerKind {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Dense {
        units: usize,
    },
}

/// One layer. The last layer of a policy uses the policy's output activation
/// instead of its own.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default)]
    pub activation: Activation,
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv {
                out_channels,
                kernel,
                stride,
            },
            activation: Activation::Relu,
        }
    }

    pub fn dense(units: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Dense { units },
            activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub input: InputShape,
    pub layers: Vec<LayerSpec>,
    #[serde(default = "default_output_activation")]
    pub output_activation: Activation,
}

fn default_output_activation() -> Activation {
    Activation::Tanh
}

impl PolicySpec {
    /// Default maze policy: two small conv layers and a 64-unit hidden layer
    /// over 84x84x4 frames, with a two-output tanh head.
    pub fn desk_maze() -> Self {
        PolicySpec {
            input: InputShape::Image {
                height: 84,
                width: 84,
                channels: 4,
            },
            layers: vec![
                LayerSpec::conv(8, 8, 4),
                LayerSpec::conv(16, 4, 2),
                LayerSpec::dense(64),
                LayerSpec::dense(2),
            ],
            output_activation: Activation::Tanh,
        }
    }

    /// The large DQN-style network (32/64/64 conv channels, 512 hidden units).
    pub fn dqn(outputs: usize) -> Self {
        PolicySpec {
            input: InputShape::Image {
                height: 84,
                width: 84,
                channels: 4,
            },
            layers: vec![
                LayerSpec::conv(32, 8, 4),
                LayerSpec::conv(64, 4, 2),
                LayerSpec::conv(64, 3, 1),
                LayerSpec::dense(512),
                LayerSpec::dense(outputs),
            ],
            output_activation: Activation::Tanh,
        }
    }

    /// Fully connected policy over a flat input.
    pub fn mlp(inputs: usize, hidden: &[usize], outputs: usize) -> Self {
        let layers = hidden
            .iter()
            .chain(std::iter::once(&outputs))
            .map(|&units| LayerSpec::dense(units))
            .collect();
        PolicySpec {
            input: InputShape::Flat(inputs),
            layers,
            output_activation: Activation::Tanh,
        }
    }

    pub fn compile(&self) -> Result<Network, ShapeError> {
        Network::new(self)
    }

    pub fn param_count(&self) -> Result<usize, ShapeError> {
        Ok(self.compile()?.param_count())
    }

    pub fn output_len(&self) -> Result<usize, ShapeError> {
        Ok(self.compile()?.output_len())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn input_len(&self) -> usize {
        self.in_h * self.in_w * self.in_c
    }

    pub fn output_len(&self) -> usize {
        self.out_h * self.out_w * self.out_c
    }

    /// Output rows (or columns) whose receptive field covers input row `i`.
    pub fn covering(&self, i: usize, out_extent: usize) -> Range<usize> {
        let hi = (i / self.stride + 1).min(out_extent);
        let lo = if i + 1 > self.kernel {
            (i + 1 - self.kernel).div_ceil(self.stride)
        } else {
            0
        };
        lo..hi.max(lo)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerGeometry {
    Conv(ConvGeometry),
    Dense { inputs: usize, units: usize },
}

/// A layer with resolved shapes and parameter ranges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerPlan {
    pub geometry: LayerGeometry,
    pub activation: Activation,
    pub weights: Range<usize>,
    pub biases: Range<usize>,
    pub fan_in: usize,
}

impl LayerPlan {
    pub fn input_len(&self) -> usize {
        match self.geometry {
            LayerGeometry::Conv(g) => g.input_len(),
            LayerGeometry::Dense { inputs, .. } => inputs,
        }
    }

    pub fn output_len(&self) -> usize {
        match self.geometry {
            LayerGeometry::Conv(g) => g.output_len(),
            LayerGeometry::Dense { units, .. } => units,
        }
    }
}

/// A compiled [`PolicySpec`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Network {
    input: InputShape,
    layers: Vec<LayerPlan>,
    params: usize,
}

impl Network {
    pub fn new(spec: &PolicySpec) -> Result<Self, ShapeError> {
        if spec.layers.is_empty() {
            return Err(ShapeError::NoLayers);
        }
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut offset = 0usize;
        // Current activation shape: Some((h, w, c)) while spatial.
        let mut spatial = match spec.input {
            InputShape::Image {
                height,
                width,
                channels,
            } => Some((height, width, channels)),
            InputShape::Flat(_) => None,
        };
        let mut flat_len = spec.input.len();
        let last = spec.layers.len() - 1;
        for (index, layer) in spec.layers.iter().enumerate() {
            let bad = |reason: String| ShapeError::Layer {
                layer: index,
                reason,
            };
            let activation = if index == last {
                spec.output_activation
            } else {
                layer.activation
            };
            let (geometry, weight_count, bias_count, fan_in) = match layer.kind {
                LayerKind::Conv {
                    out_channels,
                    kernel,
                    stride,
                } => {
                    let (in_h, in_w, in_c) = spatial
                        .ok_or_else(|| bad("convolution needs a spatial input".into()))?;
                    if kernel == 0 || stride == 0 || out_channels == 0 {
                        return Err(bad("kernel, stride and channels must be >= 1".into()));
                    }
                    if kernel > in_h || kernel > in_w {
                        return Err(bad(format!(
                            "kernel {kernel} larger than input {in_h}x{in_w}"
                        )));
                    }
                    let g = ConvGeometry {
                        in_h,
                        in_w,
                        in_c,
                        out_h: (in_h - kernel) / stride + 1,
                        out_w: (in_w - kernel) / stride + 1,
                        out_c: out_channels,
                        kernel,
                        stride,
                    };
                    spatial = Some((g.out_h, g.out_w, g.out_c));
                    flat_len = g.output_len();
                    let fan_in = kernel * kernel * in_c;
                    (LayerGeometry::Conv(g), out_channels * fan_in, out_channels, fan_in)
                }
                LayerKind::Dense { units } => {
                    if units == 0 {
                        return Err(bad("dense layer needs at least one unit".into()));
                    }
                    let inputs = flat_len;
                    spatial = None;
                    flat_len = units;
                    (
                        LayerGeometry::Dense { inputs, units },
                        units * inputs,
                        units,
                        inputs,
                    )
                }
            };
            let weights = offset..offset + weight_count;
            let biases = weights.end..weights.end + bias_count;
            offset = biases.end;
            layers.push(LayerPlan {
                geometry,
                activation,
                weights,
                biases,
                fan_in,
            });
        }
        Ok(Network {
            input: spec.input,
            layers,
            params: offset,
        })
    }

    pub fn input(&self) -> InputShape {
        self.input
    }

    pub fn layers(&self) -> &[LayerPlan] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.params
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map(LayerPlan::output_len).unwrap_or(0)
    }

    /// Xavier initialization: weights `N(0, 1/fan_in)` drawn in flattening
    /// order from a stream seeded by `init_seed`; biases exactly zero.
    pub fn xavier_init(&self, init_seed: Seed) -> Vec<f32> {
        let mut rng = xavier_rng(init_seed);
        let mut theta = vec![0.0f32; self.params];
        for layer in &self.layers {
            let scale = 1.0 / (layer.fan_in as f64).sqrt();
            for w in &mut theta[layer.weights.clone()] {
                *w = (rng.next_gaussian() * scale) as f32;
            }
        }
        theta
    }

    pub fn check_params(&self, theta: &[f32]) -> Result<(), ShapeError> {
        if theta.len() != self.params {
            return Err(ShapeError::ParamCount {
                expected: self.params,
                got: theta.len(),
            });
        }
        Ok(())
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            buffers: self
                .layers
                .iter()
                .map(|l| vec![0.0; l.output_len()])
                .collect(),
        }
    }

    /// Full forward pass; returns the output activations held in `ws`.
    pub fn forward_into<'w>(
        &self,
        theta: &[f32],
        obs: &[f32],
        ws: &'w mut Workspace,
    ) -> Result<&'w [f32], ShapeError> {
        self.check_params(theta)?;
        if obs.len() != self.input.len() {
            return Err(ShapeError::Observation {
                expected: self.input.len(),
                got: obs.len(),
            });
        }
        for index in 0..self.layers.len() {
            let (before, rest) = ws.buffers.split_at_mut(index);
            let input: &[f32] = if index == 0 { obs } else { &before[index - 1] };
            self.run_layer(index, theta, input, &mut rest[0]);
        }
        Ok(ws.buffers.last().map(Vec::as_slice).unwrap_or(&[]))
    }

    pub fn forward(&self, theta: &[f32], obs: &[f32]) -> Result<Vec<f32>, ShapeError> {
        let mut ws = self.workspace();
        Ok(self.forward_into(theta, obs, &mut ws)?.to_vec())
    }

    pub(crate) fn run_layer(&self, index: usize, theta: &[f32], input: &[f32], out: &mut [f32]) {
        let layer = &self.layers[index];
        match layer.geometry {
            LayerGeometry::Conv(g) => {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        conv_position(layer, &g, theta, input, oy, ox, out);
                    }
                }
            }
            LayerGeometry::Dense { units, .. } => {
                for unit in 0..units {
                    out[unit] = dense_unit(layer, theta, input, unit);
                }
            }
        }
    }
}

/// Per-layer activation buffers reused across forward passes.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub(crate) buffers: Vec<Vec<f32>>,
}

pub(crate) fn xavier_rng(init_seed: Seed) -> SplitMix64 {
    const XAVIER_DOMAIN: u64 = 0x5841_5649_4552_0001;
    SplitMix64::new(mix64(u64::from(init_seed.value()) ^ XAVIER_DOMAIN))
}

/// Computes all output channels of a conv layer at spatial position `(oy, ox)`.
#[inline]
pub(crate) fn conv_position(
    layer: &LayerPlan,
    g: &ConvGeometry,
    theta: &[f32],
    input: &[f32],
    oy: usize,
    ox: usize,
    out: &mut [f32],
) {
    let row_len = g.kernel * g.in_c;
    let weights = &theta[layer.weights.clone()];
    let biases = &theta[layer.biases.clone()];
    let base = (oy * g.out_w + ox) * g.out_c;
    for o in 0..g.out_c {
        let w_o = &weights[o * g.kernel * row_len..(o + 1) * g.kernel * row_len];
        let mut acc = 0.0f32;
        for ky in 0..g.kernel {
            let start = ((oy * g.stride + ky) * g.in_w + ox * g.stride) * g.in_c;
            acc += dot(&w_o[ky * row_len..(ky + 1) * row_len], &input[start..start + row_len]);
        }
        out[base + o] = layer.activation.apply(acc + biases[o]);
    }
}

#[inline]
pub(crate) fn dense_unit(layer: &LayerPlan, theta: &[f32], input: &[f32], unit: usize) -> f32 {
    let n = input.len();
    let w = &theta[layer.weights.start + unit * n..layer.weights.start + (unit + 1) * n];
    layer
        .activation
        .apply(dot(w, input) + theta[layer.biases.start + unit])
}

/// Single-precision dot product with eight fixed accumulation lanes.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f32; 8];
    let chunks = a.len() / 8;
    for (ca, cb) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
        for j in 0..8 {
            lanes[j] += ca[j] * cb[j];
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    let s0 = (lanes[0] + lanes[4]) + (lanes[1] + lanes[5]);
    let s1 = (lanes[2] + lanes[6]) + (lanes[3] + lanes[7]);
    (s0 + s1) + tail
}

/// `param_count` for a spec, with shape validation.
pub fn param_count(spec: &PolicySpec) -> Result<usize, ShapeError> {
    spec.param_count()
}

pub fn xavier_init(spec: &PolicySpec, init_seed: Seed) -> Result<Vec<f32>, ShapeError> {
    Ok(spec.compile()?.xavier_init(init_seed))
}

pub fn forward(spec: &PolicySpec, theta: &[f32], obs: &[f32]) -> Result<Vec<f32>, ShapeError> {
    spec.compile()?.forward(theta, obs)
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<usize> = self.input.into();
        write!(f, "{dims:?}")?;
        for layer in &self.layers {
            match layer.kind {
                LayerKind::Conv {
                    out_channels,
                    kernel,
                    stride,
                } => write!(f, " -> conv{out_channels}/{kernel}x{kernel}s{stride}")?,
                LayerKind::Dense { units } => write!(f, " -> dense{units}")?,
            }
        }
        Ok(())
    }
}
