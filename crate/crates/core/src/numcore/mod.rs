//! Dense tensors, a reverse-mode differentiation tape and a finite-difference checker.

pub mod blob;
pub mod gradcheck;
pub mod graph;
pub mod param;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ParamCheck};
pub use graph::{Graph, Var, LAYER_NORM_EPS, MASK_NEG};
pub use param::{ParamId, ParamStore};
pub use tensor::{Precision, Real, Tensor};
