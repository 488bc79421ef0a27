//! Reverse-mode differentiation: tensors, the primitive catalog, graphs,
//! parameters with an optimizer, and the finite-difference checker.

pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod params;
pub mod tensor;

pub use gradcheck::{check_composite, finite_diff_check, CheckOptions, GradReport, InputReport};
pub use graph::{Graph, NodeId, Producer, ValueNode};
pub use ops::{ConvAttrs, Op, PadMode, PrimitiveKind, SampleGrid};
pub use params::{AdamConfig, Bound, Param, ParamSnapshot, ParamStore};
pub use tensor::Tensor;
