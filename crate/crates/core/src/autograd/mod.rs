//! Minimal reverse-mode automatic differentiation over dense f64 arrays.

mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{finite_diff_grad, max_rel_error};
pub use graph::{GradStore, Graph, LeafInfo, Node, NodeId, Op, OpKind, Reads, Scope};
pub use optim::{adamw_step, AdamW, AdamWConfig, MomentState};
pub use params::{Param, ParamGroup, ParamId, ParamStore};
pub use tensor::{matmul, sigmoid, softmax_rows, transpose, Tensor};
