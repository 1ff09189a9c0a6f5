//! Irreps layouts, feature containers and the point-wise equivariant ops.

pub mod descriptor;
pub mod dtp;
pub mod feature;
pub mod gate;
pub mod linear;
pub mod norm;

pub use descriptor::{Irrep, Irreps, MulIr};
pub use dtp::{apply_dtp, build_dtp_plan, DtpPath, TensorProductPlan};
pub use feature::IrrepsFeature;
pub use gate::{gate, GatePlan, GateVariant};
pub use linear::{equivariant_linear, LinearPlan};
pub use norm::{equivariant_layer_norm, LayerNormParams, LayerNormPlan};
