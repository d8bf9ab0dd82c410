//! Layer primitives. Tensors are channels-last (`NHWC` / `NDHWC`).

mod activation;
mod conv;
mod dense;
mod depthwise;
mod dropout;
mod lstm;
mod norm;
mod pool;
mod shape;

pub use activation::ActivationLayer;
pub use conv::{Conv2d, Conv3d};
pub use dense::Dense;
pub use depthwise::DepthwiseConv2d;
pub use dropout::Dropout;
pub use lstm::BiLstm;
pub use norm::BatchNorm;
pub use pool::{GlobalAvgPool2d, Pool};
pub use shape::{Add, Concat, Flatten, FoldTime, Rescale, UnfoldTime, ZeroPad2d};

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Relu6,
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolOp {
    Max,
    Avg,
}

/// Structural description of a layer, used for introspection and tests.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Rescale { scale: f32, offset: f32 },
    FoldTime { steps: usize },
    UnfoldTime { steps: usize },
    Conv2d {
        filters: usize,
        kernel: [usize; 2],
        strides: [usize; 2],
        padding: Padding,
        activation: Activation,
        use_bias: bool,
        l2: f32,
    },
    Conv3d {
        filters: usize,
        kernel: [usize; 3],
        strides: [usize; 3],
        padding: Padding,
        activation: Activation,
        use_bias: bool,
        l2: f32,
    },
    DepthwiseConv2d {
        kernel: [usize; 2],
        strides: [usize; 2],
        padding: Padding,
        use_bias: bool,
    },
    BatchNorm { epsilon: f32, momentum: f32, scale: bool, center: bool },
    Activation { activation: Activation },
    Pool2d { op: PoolOp, pool: [usize; 2], strides: [usize; 2], padding: Padding },
    Pool3d { op: PoolOp, pool: [usize; 3], strides: [usize; 3], padding: Padding },
    ZeroPad2d { top: usize, bottom: usize, left: usize, right: usize },
    Concat,
    Add,
    GlobalAvgPool2d,
    Flatten,
    Dense { units: usize, activation: Activation, l2: f32 },
    Dropout { rate: f32 },
    BiLstm { units: usize },
}

impl LayerKind {
    /// Short type tag, e.g. `"conv3d"`.
    pub fn type_name(&self) -> &'static str {
        match self {
            LayerKind::Rescale { .. } => "rescale",
            LayerKind::FoldTime { .. } => "fold_time",
            LayerKind::UnfoldTime { .. } => "unfold_time",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Conv3d { .. } => "conv3d",
            LayerKind::DepthwiseConv2d { .. } => "depthwise_conv2d",
            LayerKind::BatchNorm { .. } => "batch_norm",
            LayerKind::Activation { .. } => "activation",
            LayerKind::Pool2d { op: PoolOp::Max, .. } => "max_pool2d",
            LayerKind::Pool2d { op: PoolOp::Avg, .. } => "avg_pool2d",
            LayerKind::Pool3d { op: PoolOp::Max, .. } => "max_pool3d",
            LayerKind::Pool3d { op: PoolOp::Avg, .. } => "avg_pool3d",
            LayerKind::ZeroPad2d { .. } => "zero_pad2d",
            LayerKind::Concat => "concat",
            LayerKind::Add => "add",
            LayerKind::GlobalAvgPool2d => "global_avg_pool2d",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::BiLstm { .. } => "bilstm",
        }
    }
}

/// What a forward call should do.
#[derive(Clone, Copy, Debug, Default)]
pub struct Pass {
    /// Training behaviour: dropout active, trainable batch norm uses batch statistics.
    pub training: bool,
    /// Keep whatever the backward pass will need.
    pub record: bool,
    /// The owning node is trainable (frozen batch norm runs in inference mode).
    pub trainable: bool,
}

/// What a backward call must produce.
#[derive(Clone, Copy, Debug)]
pub struct Need {
    pub input_grads: bool,
    pub param_grads: bool,
    /// The incoming gradient is already with respect to the pre-softmax logits.
    pub logits: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    /// Updated by the optimizer.
    Weight,
    /// Running statistics, updated by the forward pass (batch norm).
    Statistic,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: &'static str,
    pub value: Tensor,
    pub grad: Tensor,
    pub role: ParamRole,
    /// L2 penalty strength (loss term `l2 * sum(w^2)`).
    pub l2: f32,
}

impl Param {
    pub fn weight(name: &'static str, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name,
            value,
            grad,
            role: ParamRole::Weight,
            l2: 0.0,
        }
    }

    pub fn statistic(name: &'static str, value: Tensor) -> Self {
        Self {
            name,
            grad: Tensor::zeros(&[0]),
            value,
            role: ParamRole::Statistic,
            l2: 0.0,
        }
    }

    pub fn with_l2(mut self, l2: f32) -> Self {
        self.l2 = l2;
        self
    }

    pub fn is_weight(&self) -> bool {
        self.role == ParamRole::Weight
    }
}

pub trait Layer: Send {
    fn kind(&self) -> LayerKind;

    /// Output shape (including the leading batch axis) for the given input shapes.
    fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>>;

    fn forward(&mut self, inputs: &[&Tensor], pass: Pass) -> Result<Tensor>;

    /// Gradients with respect to each input (empty when `need.input_grads` is false).
    /// Parameter gradients are accumulated into the layer's params.
    fn backward(&mut self, grad: &Tensor, need: Need) -> Result<Vec<Tensor>>;

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    /// Drop any state recorded for backward.
    fn clear_cache(&mut self) {}
}

pub(crate) fn single_input<'a>(inputs: &[&'a [usize]], what: &str) -> Result<&'a [usize]> {
    match inputs {
        [one] => Ok(one),
        _ => Err(crate::error::Error::Spec(format!(
            "{what} takes exactly one input, got {}",
            inputs.len()
        ))),
    }
}

pub(crate) fn expect_rank(shape: &[usize], rank: usize, what: &str) -> Result<()> {
    if shape.len() != rank {
        return Err(crate::error::Error::Shape {
            context: format!("{what} expects a rank-{rank} input"),
            expected: vec![0; rank],
            received: shape.to_vec(),
        });
    }
    Ok(())
}

pub(crate) fn missing_cache(what: &str) -> crate::error::Error {
    crate::error::Error::InvalidInput(format!("{what}: backward called without a recorded forward pass"))
}

/// Output length and leading padding of one spatial axis (TensorFlow conventions).
pub(crate) fn conv_geometry(input: usize, kernel: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Valid => {
            if input < kernel {
                (0, 0)
            } else {
                ((input - kernel) / stride + 1, 0)
            }
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            (out, total / 2)
        }
    }
}

#[cfg(test)]
mod gradcheck;
