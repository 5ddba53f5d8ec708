//! Central finite-difference gradient checks.

use ndarray::ArrayView2;

use super::{Mode, Network};
use crate::error::{Error, Result};
use crate::losses::{self, LossSpec};
use crate::params::ParamBlock;

/// Denominator floor of [`relative_error`]; below it the comparison is
/// effectively absolute.
pub const RELATIVE_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Coordinate with the largest error, counted across all checked blocks.
    pub worst_index: usize,
    pub checked: usize,
}

impl GradCheckReport {
    fn merge(self, other: GradCheckReport) -> GradCheckReport {
        if other.max_relative_error > self.max_relative_error {
            GradCheckReport {
                max_relative_error: other.max_relative_error,
                worst_index: self.checked + other.worst_index,
                checked: self.checked + other.checked,
            }
        } else {
            GradCheckReport {
                checked: self.checked + other.checked,
                ..self
            }
        }
    }
}

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic` with `(f(p + eps e_i) - f(p - eps e_i)) / 2 eps`
/// coordinate by coordinate. `params` is restored before returning.
pub fn check_gradient<F>(params: &mut [f64], analytic: &[f64], eps: f64, mut f: F) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length");
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        checked: params.len(),
    };
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + eps;
        let plus = f(params);
        params[i] = orig - eps;
        let minus = f(params);
        params[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_relative_error || err.is_nan() {
            report.max_relative_error = err;
            report.worst_index = i;
        }
    }
    report
}

fn require_deterministic(net: &Network) -> Result<()> {
    if net.head.config().dropout_active() {
        return Err(Error::Config("gradient checks require dropout to be disabled".into()));
    }
    Ok(())
}

fn with_embed(net: &Network, values: &[f64]) -> Network {
    let mut n = net.clone();
    n.embed.params_mut().values_mut().copy_from_slice(values);
    n
}

fn with_head(net: &Network, values: &[f64]) -> Network {
    let mut n = net.clone();
    n.head.params_mut().values_mut().copy_from_slice(values);
    n
}

fn check_network<F>(net: &Network, grads: (&ParamBlock, &ParamBlock), eps: f64, loss: F) -> GradCheckReport
where
    F: Fn(&Network) -> f64,
{
    let mut embed = net.embed.params().values().to_vec();
    let r1 = check_gradient(&mut embed, grads.0.values(), eps, |v| loss(&with_embed(net, v)));
    let mut head = net.head.params().values().to_vec();
    let r2 = check_gradient(&mut head, grads.1.values(), eps, |v| loss(&with_head(net, v)));
    r1.merge(r2)
}

/// Checks the backward pass of `net` under the mean cross-entropy loss.
/// Batch-norm, when present, runs with batch statistics.
pub fn grad_check(
    net: &Network,
    batch: ArrayView2<f64>,
    labels: &[usize],
    eps: f64,
) -> Result<GradCheckReport> {
    require_deterministic(net)?;
    let (_, grads) = net.cross_entropy_gradients(batch, labels, Mode::Train, None)?;
    let loss = |n: &Network| {
        let (logits, _) = n.forward(batch, Mode::Train, None).expect("forward");
        losses::cross_entropy(logits.view(), labels).expect("loss")
    };
    Ok(check_network(net, (&grads.embed, &grads.head), eps, loss))
}

/// Checks the gradients of the full client objective.
///
/// Client parameters are checked against the finite differences of the total
/// objective; expert parameters against those of the expert's own
/// classification loss, since the expert acts as a detached teacher in the
/// regularisation term.
pub fn grad_check_client(
    client: &Network,
    expert: &Network,
    client_batch: ArrayView2<f64>,
    expert_batch: ArrayView2<f64>,
    labels: &[usize],
    spec: &LossSpec,
    eps: f64,
) -> Result<GradCheckReport> {
    require_deterministic(client)?;
    require_deterministic(expert)?;
    let (c_logits, c_trace) = client.forward(client_batch, Mode::Train, None)?;
    let (e_logits, e_trace) = expert.forward(expert_batch, Mode::Train, None)?;
    let obj = losses::client_loss(c_logits.view(), Some(e_logits.view()), labels, spec)?;
    let c_grads = client.backward(&c_trace, obj.client_grad.view())?;

    let total = |c: &Network, e: &Network| {
        let (cl, _) = c.forward(client_batch, Mode::Train, None).expect("forward");
        let (el, _) = e.forward(expert_batch, Mode::Train, None).expect("forward");
        losses::client_loss(cl.view(), Some(el.view()), labels, spec)
            .expect("loss")
            .losses
            .total()
    };
    let mut report = check_network(client, (&c_grads.embed, &c_grads.head), eps, |c| total(c, expert));

    if let Some(eg) = &obj.expert_grad {
        let e_grads = expert.backward(&e_trace, eg.view())?;
        let expert_loss = |e: &Network| {
            let (el, _) = e.forward(expert_batch, Mode::Train, None).expect("forward");
            losses::cross_entropy(el.view(), labels).expect("loss")
        };
        report = report.merge(check_network(expert, (&e_grads.embed, &e_grads.head), eps, expert_loss));
    }
    Ok(report)
}
