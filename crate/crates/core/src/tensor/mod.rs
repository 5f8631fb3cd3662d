//! Dense matrices, parameter storage and reverse-mode autodiff.

mod graph;
mod mat;
mod params;

pub use graph::{Graph, Span, Var};
pub(crate) use graph::{rope_row, softmax_scores};
pub use mat::{gemm, Mat, Scalar};
pub use params::{clip_global_norm, init_linear, normal_mat, Grads, ParamId, ParamStore};
