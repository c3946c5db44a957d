//! Dense tensors, reverse-mode differentiation, gradient checking,
//! finite-difference Hessian-vector products, and SVD feature reduction.

mod check;
mod params;
mod svd;
mod tape;
mod tensor;

pub use check::{
    grad_check, grad_fn_of, hvp_default_eps, hvp_fd, loss_and_grad, loss_value, LossFn,
    GRAD_CHECK_EPS,
};
pub use params::ParamSet;
pub use svd::{svd_reduce, svd_top};
pub use tape::{sigmoid, Cmp, NodeId, Reduction, Tape};
pub use tensor::Tensor;
