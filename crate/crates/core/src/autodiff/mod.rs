//! Minimal operator-level reverse-mode differentiation.

pub mod gradcheck;
pub mod ops;
pub mod tape;
pub mod tensor;

pub use gradcheck::{check_gradient, grad_check, GradCheckConfig, GradCheckReport, LeafCheck};
pub use tape::{GradientSet, Op, OpRegistry, Tape, Var};
pub use tensor::Tensor;

/// Kinds registered on every new tape.
pub const BUILTIN_OPS: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "sum_all",
    "gather_rows",
    "scatter_rows",
    "slice_cols",
    "place_cols",
    "equivariant_linear",
    "layer_norm",
    "gate",
    "dtp",
    "spherical_harmonics",
    "radial_basis",
    "attention_logits_mlp",
    "attention_logits_dot",
    "segment_softmax",
    "head_weighting",
];
