//! Dense tensors, a define-by-run reverse-mode graph, MLP layers, optimizers,
//! gradient checking and the checkpoint container.

mod checkpoint;
mod gradcheck;
mod graph;
mod mlp;
mod optim;
mod tensor;

pub use checkpoint::{ArraySpec, Checkpoint, CheckpointHeader, MlpSpec, CODE_VERSION, FORMAT_VERSION};
pub use gradcheck::{grad_check, grad_check_many, relative_error, RELATIVE_FLOOR};
pub use graph::{Graph, Var};
pub use mlp::{Activation, BoundMlp, Layer, MlpParams};
pub use optim::{OptimState, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use tensor::{cosine, dot, l2_norm, Tensor};
