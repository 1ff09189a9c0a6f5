pub mod attention;
pub mod autodiff;
pub mod error;
pub mod graph;
pub mod irreps;
pub mod model;
pub mod nn;
pub mod real;
pub mod so3;

pub use autodiff::{GradientSet, Tape, Tensor, Var};
pub use error::{Error, Result};
pub use irreps::{Irrep, Irreps, IrrepsFeature};
pub use real::{Dual, Real};
