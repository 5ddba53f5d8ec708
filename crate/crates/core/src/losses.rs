//! Classification and distillation losses.
//!
//! All losses are batch means. Gradient helpers return the derivative of the
//! batch-mean loss with respect to the logits they are named after.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{check_dim, Error, Result};

/// Which terms of the client objective are active, and the distillation
/// temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    /// Client classification loss.
    pub classification: bool,
    /// Expert classification loss.
    pub expert: bool,
    /// Distillation from the expert into the client.
    pub regularisation: bool,
    pub temperature: f64,
}

impl LossSpec {
    pub fn full(temperature: f64) -> Self {
        Self {
            classification: true,
            expert: true,
            regularisation: true,
            temperature,
        }
    }

    pub fn classification_only() -> Self {
        Self {
            classification: true,
            expert: false,
            regularisation: false,
            temperature: 1.0,
        }
    }

    pub fn needs_expert(&self) -> bool {
        self.expert || self.regularisation
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Input(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Loss terms of one evaluation of the client objective.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub classification: f64,
    pub expert: f64,
    pub regularisation: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.classification + self.expert + self.regularisation
    }
}

fn log_softmax_row(row: ArrayView1<f64>) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

fn softmax_rows(logits: ArrayView2<f64>, temperature: f64) -> Array2<f64> {
    let mut out = logits.mapv(|v| v / temperature);
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn check_labels(logits: ArrayView2<f64>, labels: &[usize]) -> Result<()> {
    check_dim("label count", logits.nrows(), labels.len())?;
    if logits.nrows() == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    let classes = logits.ncols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Input(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| -log_softmax_row(row)[y])
        .sum();
    Ok(total / labels.len() as f64)
}

/// `(softmax(logits) - onehot(labels)) / B`.
pub fn cross_entropy_grad(logits: ArrayView2<f64>, labels: &[usize]) -> Result<Array2<f64>> {
    check_labels(logits, labels)?;
    let b = labels.len() as f64;
    let mut g = softmax_rows(logits, 1.0);
    for (mut row, &y) in g.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
        row.mapv_inplace(|v| v / b);
    }
    Ok(g)
}

/// Row-wise softmax of `logits / temperature`.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
pub fn soften(logits: ArrayView2<f64>, temperature: f64) -> Result<Array2<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::Input(format!("temperature must be positive, got {temperature}")));
    }
    Ok(softmax_rows(logits, temperature))
}

/// Mean over the batch of `T^2 * KL(Q || P)` with `P = soften(student)` and
/// `Q = soften(teacher)`.
pub fn kd_kl(student: ArrayView2<f64>, teacher: ArrayView2<f64>, temperature: f64) -> Result<f64> {
    if student.dim() != teacher.dim() {
        return Err(Error::Input(format!(
            "student logits {:?} and teacher logits {:?} differ in shape",
            student.dim(),
            teacher.dim()
        )));
    }
    let q = soften(teacher, temperature)?;
    let scaled_s = student.mapv(|v| v / temperature);
    let scaled_t = teacher.mapv(|v| v / temperature);
    let mut total = 0.0;
    for ((s, t), q) in scaled_s.rows().into_iter().zip(scaled_t.rows()).zip(q.rows()) {
        let log_p = log_softmax_row(s);
        let log_q = log_softmax_row(t);
        total += q
            .iter()
            .zip(log_q.iter().zip(&log_p))
            .filter(|(&qz, _)| qz > 0.0)
            .map(|(qz, (lq, lp))| qz * (lq - lp))
            .sum::<f64>();
    }
    Ok(temperature * temperature * total / student.nrows() as f64)
}

/// Gradient of [`kd_kl`] w.r.t. the student logits: `T * (P - Q) / B`.
/// The teacher receives no gradient.
pub fn kd_kl_grad(
    student: ArrayView2<f64>,
    teacher: ArrayView2<f64>,
    temperature: f64,
) -> Result<Array2<f64>> {
    if student.dim() != teacher.dim() {
        return Err(Error::Input("student and teacher logits differ in shape".into()));
    }
    let p = soften(student, temperature)?;
    let q = soften(teacher, temperature)?;
    let scale = temperature / student.nrows() as f64;
    Ok((p - q) * scale)
}

/// Client objective and the logit gradients that drive each model.
#[derive(Debug, Clone)]
pub struct ClientObjective {
    pub losses: LossBreakdown,
    /// Gradient for the client model (classification + regularisation).
    pub client_grad: Array2<f64>,
    /// Gradient for the expert (its own classification loss only).
    pub expert_grad: Option<Array2<f64>>,
}

/// `L = L_C + L_E + L_R` for one batch.
pub fn client_loss(
    client_logits: ArrayView2<f64>,
    expert_logits: Option<ArrayView2<f64>>,
    labels: &[usize],
    spec: &LossSpec,
) -> Result<ClientObjective> {
    spec.validate()?;
    let expert_logits = match (spec.needs_expert(), expert_logits) {
        (true, None) => {
            return Err(Error::Input(
                "expert logits are required when the expert or regularisation loss is enabled".into(),
            ))
        }
        (true, Some(e)) => Some(e),
        (false, _) => None,
    };
    let mut losses = LossBreakdown::default();
    let mut client_grad = Array2::zeros(client_logits.dim());
    if spec.classification {
        losses.classification = cross_entropy(client_logits, labels)?;
        client_grad += &cross_entropy_grad(client_logits, labels)?;
    } else {
        check_labels(client_logits, labels)?;
    }
    let mut expert_grad = None;
    if let Some(e) = expert_logits {
        if spec.expert {
            losses.expert = cross_entropy(e, labels)?;
            expert_grad = Some(cross_entropy_grad(e, labels)?);
        }
        if spec.regularisation {
            losses.regularisation = kd_kl(client_logits, e, spec.temperature)?;
            client_grad += &kd_kl_grad(client_logits, e, spec.temperature)?;
        }
    }
    Ok(ClientObjective {
        losses,
        client_grad,
        expert_grad,
    })
}
