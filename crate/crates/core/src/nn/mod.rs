//! Feed-forward networks with exact manual backpropagation.
//!
//! * [`EmbeddingNet`]: the federated feature extractor, an MLP with ReLU
//!   between layers.
//! * [`MappingNet`]: the per-client classifier head, two dense layers with
//!   optional batch-norm and dropout in between.
//! * [`Network`]: an embedding net and a head trained together.
//! * [`OptimizerState`] / [`LrSchedule`]: SGD with (Nesterov) momentum,
//!   weight decay and step decay.
//! * [`grad_check`]: central finite-difference verification.

mod embed;
mod gradcheck;
mod map;
mod network;
mod optim;

pub use embed::{EmbedTrace, EmbeddingNet};
pub use gradcheck::{
    check_gradient, grad_check, grad_check_client, relative_error, GradCheckReport,
};
pub use map::{MapTrace, MappingConfig, MappingNet, BN_EPS, BN_MOMENTUM};
pub use network::{Gradients, Network, NetworkTrace};
pub use optim::{lr_at, LrSchedule, OptimizerState, SgdConfig};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

/// Train mode samples dropout masks and uses batch statistics; eval mode is
/// deterministic and uses running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// `x * w^T + b` for a batch `x` of shape `[B, in]` and `w` of shape `[out, in]`.
pub(crate) fn dense(x: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut y = x.dot(&w.t());
    y += &b;
    y
}

/// Weight and bias gradients of a dense layer, plus the input gradient.
pub(crate) fn dense_backward(
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    dy: ArrayView2<f64>,
) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let dw = dy.t().dot(&x);
    let db = dy.sum_axis(Axis(0));
    let dx = dy.dot(&w);
    (dw, db, dx)
}
