//! The closed catalog of differentiable primitives.
//!
//! Every primitive has a forward rule with shape validation and an analytic
//! vector-Jacobian product. Attributes travel inside the [`Op`] variant.

mod conv;
mod kernel;
mod loss;
mod norm;
mod pointwise;
mod reduce;
mod sample;
mod shift;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use conv::{ConvAttrs, PadMode};
pub use loss::{bce_with_logits, smooth_l1};
pub use sample::{catmull_rom_weights, Kernel, SampleGrid};

/// Names of the catalog entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PrimitiveKind {
    Conv2d,
    Conv3d,
    Relu,
    Linear,
    SoftmaxAxis,
    WeightedIndexSum,
    InstanceNorm,
    ConcatAxis,
    Add,
    Mul,
    Sum,
    SmoothL1,
    BceWithLogits,
    TrilinearSample,
    CubicDSample,
    MaskZero,
    ShiftConcat,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 17] = [
        PrimitiveKind::Conv2d,
        PrimitiveKind::Conv3d,
        PrimitiveKind::Relu,
        PrimitiveKind::Linear,
        PrimitiveKind::SoftmaxAxis,
        PrimitiveKind::WeightedIndexSum,
        PrimitiveKind::InstanceNorm,
        PrimitiveKind::ConcatAxis,
        PrimitiveKind::Add,
        PrimitiveKind::Mul,
        PrimitiveKind::Sum,
        PrimitiveKind::SmoothL1,
        PrimitiveKind::BceWithLogits,
        PrimitiveKind::TrilinearSample,
        PrimitiveKind::CubicDSample,
        PrimitiveKind::MaskZero,
        PrimitiveKind::ShiftConcat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::Conv2d => "conv2d",
            PrimitiveKind::Conv3d => "conv3d",
            PrimitiveKind::Relu => "relu",
            PrimitiveKind::Linear => "linear",
            PrimitiveKind::SoftmaxAxis => "softmax-axis",
            PrimitiveKind::WeightedIndexSum => "weighted-index-sum",
            PrimitiveKind::InstanceNorm => "instance-norm",
            PrimitiveKind::ConcatAxis => "concat-axis",
            PrimitiveKind::Add => "elementwise-add",
            PrimitiveKind::Mul => "elementwise-mul",
            PrimitiveKind::Sum => "sum",
            PrimitiveKind::SmoothL1 => "smooth-l1",
            PrimitiveKind::BceWithLogits => "bce-with-logits",
            PrimitiveKind::TrilinearSample => "trilinear-sample",
            PrimitiveKind::CubicDSample => "cubic-d-sample",
            PrimitiveKind::MaskZero => "mask-zero",
            PrimitiveKind::ShiftConcat => "shift-concat",
        }
    }
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PrimitiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s {
            "add" => PrimitiveKind::Add,
            "mul" => PrimitiveKind::Mul,
            other => *PrimitiveKind::ALL
                .iter()
                .find(|k| k.name() == other)
                .ok_or_else(|| Error::UnknownPrimitive(other.to_string()))?,
        };
        Ok(kind)
    }
}

/// A primitive together with its attributes.
#[derive(Clone, Debug)]
pub enum Op {
    /// Inputs: x `[C,H,W]`, weight `[O,C,k,k]`, bias `[O]`.
    Conv2d(ConvAttrs),
    /// Inputs: x `[C,D,H,W]`, weight `[O,C,k,k,k]`, bias `[O]`.
    Conv3d(ConvAttrs),
    Relu,
    /// Inputs: x, weight `[out,in]`, bias `[out]`. With `flatten`, x of any
    /// shape holding `in` values maps to `[out]`; otherwise x is `[N,in]`.
    Linear { flatten: bool },
    SoftmaxAxis { axis: usize },
    /// Reduces `axis` to `sum_i i * x_i`.
    WeightedIndexSum { axis: usize },
    /// Inputs: x `[C, ...]` and an optional 0/1 mask over the trailing dims.
    InstanceNorm { eps: f64 },
    ConcatAxis { axis: usize },
    Add,
    Mul,
    Sum,
    /// Inputs: prediction, target, optional weights; output `[1]`.
    SmoothL1 { beta: f64, scale: f64 },
    /// Inputs: logits, targets, optional weights; output `[1]`.
    BceWithLogits { scale: f64 },
    TrilinearSample(Arc<SampleGrid>),
    CubicDSample(Arc<SampleGrid>),
    /// Inputs: x and a 0/1 mask equal to x's shape or to its trailing dims.
    MaskZero,
    /// Inputs: left `[C,H,W]`, right `[C,H,W]`; output `[2C,D,H,W]`.
    ShiftConcat { levels: usize },
}

impl Op {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Op::Conv2d(_) => PrimitiveKind::Conv2d,
            Op::Conv3d(_) => PrimitiveKind::Conv3d,
            Op::Relu => PrimitiveKind::Relu,
            Op::Linear { .. } => PrimitiveKind::Linear,
            Op::SoftmaxAxis { .. } => PrimitiveKind::SoftmaxAxis,
            Op::WeightedIndexSum { .. } => PrimitiveKind::WeightedIndexSum,
            Op::InstanceNorm { .. } => PrimitiveKind::InstanceNorm,
            Op::ConcatAxis { .. } => PrimitiveKind::ConcatAxis,
            Op::Add => PrimitiveKind::Add,
            Op::Mul => PrimitiveKind::Mul,
            Op::Sum => PrimitiveKind::Sum,
            Op::SmoothL1 { .. } => PrimitiveKind::SmoothL1,
            Op::BceWithLogits { .. } => PrimitiveKind::BceWithLogits,
            Op::TrilinearSample(_) => PrimitiveKind::TrilinearSample,
            Op::CubicDSample(_) => PrimitiveKind::CubicDSample,
            Op::MaskZero => PrimitiveKind::MaskZero,
            Op::ShiftConcat { .. } => PrimitiveKind::ShiftConcat,
        }
    }

    /// Whether input `index` receives a gradient. Masks and loss weights are constants.
    pub fn differentiable_input(&self, index: usize) -> bool {
        match self {
            Op::MaskZero | Op::InstanceNorm { .. } => index == 0,
            Op::SmoothL1 { .. } | Op::BceWithLogits { .. } => index < 2,
            _ => true,
        }
    }

    fn arity_ok(&self, n: usize) -> bool {
        match self {
            Op::Conv2d(_) | Op::Conv3d(_) | Op::Linear { .. } => n == 3,
            Op::Relu
            | Op::SoftmaxAxis { .. }
            | Op::WeightedIndexSum { .. }
            | Op::Sum
            | Op::TrilinearSample(_)
            | Op::CubicDSample(_) => n == 1,
            Op::InstanceNorm { .. } => n == 1 || n == 2,
            Op::ConcatAxis { .. } => n >= 1,
            Op::Add | Op::Mul | Op::MaskZero | Op::ShiftConcat { .. } => n == 2,
            Op::SmoothL1 { .. } | Op::BceWithLogits { .. } => n == 2 || n == 3,
        }
    }

    pub fn forward<T: Scalar>(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let kind = self.kind();
        if !self.arity_ok(inputs.len()) {
            return Err(Error::shape(kind.name(), format!("wrong number of inputs: {}", inputs.len())));
        }
        match self {
            Op::Conv2d(a) => conv::forward2d(a, inputs[0], inputs[1], inputs[2]),
            Op::Conv3d(a) => conv::forward3d(a, inputs[0], inputs[1], inputs[2]),
            Op::Relu => Ok(pointwise::relu(inputs[0])),
            Op::Linear { flatten } => reduce::linear_forward(*flatten, inputs[0], inputs[1], inputs[2]),
            Op::SoftmaxAxis { axis } => reduce::softmax_forward(*axis, inputs[0]),
            Op::WeightedIndexSum { axis } => reduce::wis_forward(*axis, inputs[0]),
            Op::InstanceNorm { eps } => norm::forward(*eps, inputs[0], inputs.get(1).copied()),
            Op::ConcatAxis { axis } => reduce::concat_forward(*axis, inputs),
            Op::Add => pointwise::binary(kind, inputs[0], inputs[1], |a, b| a + b),
            Op::Mul => pointwise::binary(kind, inputs[0], inputs[1], |a, b| a * b),
            Op::Sum => Ok(Tensor::scalar(inputs[0].sum())),
            Op::SmoothL1 { beta, scale } => {
                loss::smooth_l1_forward(*beta, *scale, inputs[0], inputs[1], inputs.get(2).copied())
            }
            Op::BceWithLogits { scale } => {
                loss::bce_forward(*scale, inputs[0], inputs[1], inputs.get(2).copied())
            }
            Op::TrilinearSample(grid) => sample::forward(grid, Kernel::Trilinear, inputs[0]),
            Op::CubicDSample(grid) => sample::forward(grid, Kernel::CubicD, inputs[0]),
            Op::MaskZero => pointwise::mask_zero(inputs[0], inputs[1]),
            Op::ShiftConcat { levels } => shift::forward(*levels, inputs[0], inputs[1]),
        }
    }

    /// Vector-Jacobian product. `needs[i]` selects which input gradients to form.
    /// Inputs must already have passed [`Op::forward`] validation.
    pub fn backward<T: Scalar>(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let mut grads = match self {
            Op::Conv2d(a) => conv::backward2d(a, inputs[0], inputs[1], grad_out, needs),
            Op::Conv3d(a) => conv::backward3d(a, inputs[0], inputs[1], grad_out, needs),
            Op::Relu => vec![Some(pointwise::relu_backward(inputs[0], grad_out))],
            Op::Linear { flatten } => reduce::linear_backward(*flatten, inputs[0], inputs[1], grad_out, needs),
            Op::SoftmaxAxis { axis } => vec![Some(reduce::softmax_backward(*axis, output, grad_out))],
            Op::WeightedIndexSum { axis } => vec![Some(reduce::wis_backward(*axis, inputs[0], grad_out))],
            Op::InstanceNorm { eps } => {
                vec![Some(norm::backward(*eps, inputs[0], inputs.get(1).copied(), grad_out)), None]
            }
            Op::ConcatAxis { axis } => reduce::concat_backward(*axis, inputs, grad_out),
            Op::Add => vec![Some(grad_out.clone()), Some(grad_out.clone())],
            Op::Mul => pointwise::mul_backward(inputs[0], inputs[1], grad_out),
            Op::Sum => vec![Some(Tensor::full(inputs[0].shape(), grad_out.data()[0]))],
            Op::SmoothL1 { beta, scale } => {
                loss::smooth_l1_backward(*beta, *scale, inputs[0], inputs[1], inputs.get(2).copied(), grad_out)
            }
            Op::BceWithLogits { scale } => {
                loss::bce_backward(*scale, inputs[0], inputs[1], inputs.get(2).copied(), grad_out)
            }
            Op::TrilinearSample(grid) => {
                vec![Some(sample::backward(grid, Kernel::Trilinear, inputs[0], grad_out))]
            }
            Op::CubicDSample(grid) => {
                vec![Some(sample::backward(grid, Kernel::CubicD, inputs[0], grad_out))]
            }
            Op::MaskZero => vec![Some(pointwise::mask_zero_backward(inputs[1], grad_out)), None],
            Op::ShiftConcat { levels } => shift::backward(*levels, inputs[0], grad_out),
        };
        grads.resize(inputs.len(), None);
        for (i, g) in grads.iter_mut().enumerate() {
            if !needs.get(i).copied().unwrap_or(false) || !self.differentiable_input(i) {
                *g = None;
            }
        }
        grads
    }
}

/// Checks that `a` and `b` have the same shape.
pub(crate) fn same_shape<T: Scalar>(op: PrimitiveKind, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        let dim = a
            .shape()
            .iter()
            .zip(b.shape())
            .position(|(x, y)| x != y)
            .unwrap_or(a.rank().min(b.rank()));
        return Err(Error::shape(
            op.name(),
            format!("dimension {dim} differs: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}
