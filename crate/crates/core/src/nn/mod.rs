//! Small deterministic feed-forward engine: dense layers, ReLU, group
//! normalization, the supported losses, an exact backward pass and SGD/Adam.

mod gradcheck;
mod loss;
mod network;
mod norm;
mod optim;
mod tensor;

pub use gradcheck::{
    gradient_check, max_relative_error, numeric_gradient, numeric_gradient_by, relative_error,
};
pub use loss::{accuracy, loss_and_grad, loss_eval, point_loss, softmax, LossKind, Targets};
pub use network::{
    Activation, Dense, ForwardTrace, Gradients, GroupNorm, Layer, Network, ParamRole, ParamSet,
    ParamSpec,
};
pub use norm::{group_normalize, NORM_EPS};
pub use optim::{OptimizerKind, OptimizerSettings, OptimizerState};
pub use tensor::{truncate_outputs, Tensor};
